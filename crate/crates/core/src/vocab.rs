//! Word and attribute vocabularies, and attribute label derivation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::VideoRecord;
use crate::error::{MsanError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// English function words dropped from the attribute vocabulary.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as",
    "at", "be", "been", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "itself", "me", "more", "most", "my", "myself", "no", "nor", "not",
    "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// One word per line; blank lines and surrounding whitespace ignored.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| MsanError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Token counts sorted by descending frequency, ties broken lexicographically.
fn ranked_counts<'a>(captions: impl IntoIterator<Item = &'a Vec<String>>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for cap in captions {
        for tok in cap {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved tokens first, then every caption token by descending frequency.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a Vec<String>>) -> Vocabulary {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked_counts(captions)
                .into_iter()
                .map(|(t, _)| t)
                .filter(|t| !RESERVED.contains(&t.as_str())),
        );
        Vocabulary::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids, truncated to `max_len`, out-of-vocabulary words mapped to UNK.
    pub fn encode(&self, caption: &[String], max_len: usize) -> Vec<usize> {
        caption.iter().take(max_len).map(|t| self.id(t)).collect()
    }

    /// Words for `ids`, stopping at EOS and skipping other reserved ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct AttributeVocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for AttributeVocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        AttributeVocabulary { words, index }
    }
}

impl From<AttributeVocabulary> for Vec<String> {
    fn from(v: AttributeVocabulary) -> Self {
        v.words
    }
}

impl AttributeVocabulary {
    /// Top `k` non-stopword tokens by frequency over `captions`.
    pub fn build<'a>(
        captions: impl IntoIterator<Item = &'a Vec<String>>,
        k: usize,
        stopwords: &BTreeSet<String>,
    ) -> Result<AttributeVocabulary> {
        if k == 0 {
            return Err(MsanError::Usage("attribute vocabulary size must be at least 1".into()));
        }
        let eligible: Vec<String> = ranked_counts(captions)
            .into_iter()
            .map(|(t, _)| t)
            .filter(|t| !stopwords.contains(t))
            .collect();
        if eligible.len() < k {
            return Err(MsanError::InsufficientVocabulary {
                needed: k,
                available: eligible.len(),
            });
        }
        Ok(AttributeVocabulary::from(eligible.into_iter().take(k).collect::<Vec<_>>()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Binary attribute indicators for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeLabels(pub Vec<u8>);

impl AttributeLabels {
    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&y| f64::from(y)).collect()
    }
}

/// `y_k = 1` iff attribute word `k` occurs in any caption of the video.
pub fn attribute_labels(record: &VideoRecord, vocab: &AttributeVocabulary) -> AttributeLabels {
    let mut y = vec![0u8; vocab.len()];
    for tok in record.captions.iter().flatten() {
        if let Some(k) = vocab.index_of(tok) {
            y[k] = 1;
        }
    }
    AttributeLabels(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, FeatureSequence, Modality};
    use proptest::prelude::*;

    fn caps(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l).unwrap()).collect()
    }

    fn record(lines: &[&str]) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            streams: [(Modality::Frames, FeatureSequence(vec![vec![0.0]]))].into(),
            captions: caps(lines),
        }
    }

    #[test]
    fn attribute_vocab_tie_break() {
        let c = caps(&["a dog runs", "a dog sits"]);
        let stop: BTreeSet<String> = ["a".to_string()].into();
        let v = AttributeVocabulary::build(&c, 2, &stop).unwrap();
        assert_eq!(v.words(), &["dog", "runs"]);
        let v1 = AttributeVocabulary::build(&c, 1, &stop).unwrap();
        assert_eq!(v1.words(), &["dog"]);
    }

    #[test]
    fn attribute_vocab_insufficient() {
        let c = caps(&["a dog runs"]);
        let stop: BTreeSet<String> = ["a", "dog", "runs"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            AttributeVocabulary::build(&c, 1, &stop),
            Err(MsanError::InsufficientVocabulary { needed: 1, available: 0 })
        ));
    }

    #[test]
    fn default_stopwords_drop_function_words() {
        let c = caps(&["a man is singing", "the man is dancing"]);
        let v = AttributeVocabulary::build(&c, 3, &default_stopwords()).unwrap();
        assert_eq!(v.words(), &["man", "dancing", "singing"]);
    }

    #[test]
    fn labels_membership_and_union() {
        let vocab = AttributeVocabulary::from(vec!["dog".to_string(), "cat".to_string()]);
        assert_eq!(attribute_labels(&record(&["dog runs"]), &vocab).0, vec![1, 0]);
        assert_eq!(attribute_labels(&record(&["a bird flies"]), &vocab).0, vec![0, 0]);
        assert_eq!(attribute_labels(&record(&["a dog", "a cat"]), &vocab).0, vec![1, 1]);
    }

    #[test]
    fn vocabulary_reserved_ids_and_order() {
        let c = caps(&["b a", "a c", "a b"]);
        let v = Vocabulary::build(&c);
        assert_eq!(&v.tokens()[..4], &RESERVED.map(String::from));
        assert_eq!(&v.tokens()[4..], &["a", "b", "c"]);
        assert_eq!(v.id("zebra"), UNK);
        assert_eq!(v.decode(&[BOS, 4, 5, EOS, 6]), vec!["a", "b"]);
    }

    #[test]
    fn vocabulary_serde_roundtrip() {
        let v = Vocabulary::build(&caps(&["x y z"]));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn vocab_is_permutation_invariant(
            words in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..5), 1..10),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let names = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen"];
            let c: Vec<Vec<String>> = words
                .iter()
                .map(|ids| ids.iter().map(|&i| names[i].to_string()).collect())
                .collect();
            let mut shuffled = c.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(Vocabulary::build(&c), Vocabulary::build(&shuffled));
            let stop = BTreeSet::new();
            let k = Vocabulary::build(&c).len() - 4;
            prop_assert_eq!(
                AttributeVocabulary::build(&c, k, &stop).unwrap(),
                AttributeVocabulary::build(&shuffled, k, &stop).unwrap()
            );
        }

        #[test]
        fn labels_match_brute_force_scan(
            caps_ids in proptest::collection::vec(proptest::collection::vec(0usize..6, 1..6), 1..4),
        ) {
            let names = ["ant", "bee", "cat", "dog", "eel", "fox"];
            let rec = VideoRecord {
                id: "v".into(),
                streams: [(Modality::Frames, FeatureSequence(vec![vec![0.0]]))].into(),
                captions: caps_ids.iter().map(|c| c.iter().map(|&i| names[i].to_string()).collect()).collect(),
            };
            let vocab = AttributeVocabulary::from(vec!["bee".to_string(), "dog".to_string(), "fox".to_string()]);
            let y = attribute_labels(&rec, &vocab);
            for (k, w) in vocab.words().iter().enumerate() {
                let present = rec.captions.iter().any(|c| c.iter().any(|t| t == w));
                prop_assert_eq!(y.0[k] == 1, present);
            }
        }
    }
}
