//! Video records, tokenization, and the JSON Lines dataset format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MsanError, Result};

/// One of the three feature sources. The derive order is the fixed
/// concatenation order of the video vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Frames,
    Clips,
    Flow,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Frames, Modality::Clips, Modality::Flow];

    pub fn key(self) -> &'static str {
        match self {
            Modality::Frames => "frames",
            Modality::Clips => "clips",
            Modality::Flow => "flow",
        }
    }

    pub fn short(self) -> char {
        match self {
            Modality::Frames => 'f',
            Modality::Clips => 'c',
            Modality::Flow => 'o',
        }
    }

    /// Parses a comma-separated list such as `f,c,o` or `frames,flow`.
    /// The result is sorted into canonical order and deduplicated.
    pub fn parse_list(s: &str) -> Result<Vec<Modality>> {
        let mut out: Vec<Modality> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Modality::from_str)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn format_list(list: &[Modality]) -> String {
        list.iter().map(|m| m.short().to_string()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Modality {
    type Err = MsanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f" | "frames" => Ok(Modality::Frames),
            "c" | "clips" => Ok(Modality::Clips),
            "o" | "flow" => Ok(Modality::Flow),
            other => Err(MsanError::Usage(format!(
                "unknown modality {other:?} (expected f/frames, c/clips, o/flow)"
            ))),
        }
    }
}

/// Time-ordered feature vectors of one modality of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSequence(pub Vec<Vec<f64>>);

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub streams: BTreeMap<Modality, FeatureSequence>,
    pub captions: Vec<Vec<String>>,
}

impl VideoRecord {
    pub fn stream(&self, m: Modality) -> Result<&FeatureSequence> {
        self.streams
            .get(&m)
            .ok_or_else(|| MsanError::Usage(format!("video {} has no {m} stream", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub records: Vec<VideoRecord>,
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(caption: &str) -> Result<Vec<String>> {
    let cleaned: String = caption
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(MsanError::EmptyCaption(caption.to_string()));
    }
    Ok(tokens)
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    streams: BTreeMap<String, Vec<Vec<f64>>>,
    captions: Vec<String>,
}

impl Corpus {
    pub fn new(records: Vec<VideoRecord>) -> Self {
        Corpus { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Modalities present in the corpus (from the first record), in canonical order.
    pub fn modalities(&self) -> Vec<Modality> {
        self.records
            .first()
            .map(|r| r.streams.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Per-modality feature dimension, in canonical order.
    pub fn stream_dims(&self) -> Vec<(Modality, usize)> {
        self.records
            .first()
            .map(|r| r.streams.iter().map(|(m, s)| (*m, s.dim())).collect())
            .unwrap_or_default()
    }

    pub fn captions(&self) -> impl Iterator<Item = &Vec<String>> {
        self.records.iter().flat_map(|r| r.captions.iter())
    }

    /// Checks the structural invariants shared by every record.
    pub fn validate(&self) -> Result<()> {
        let dims = self.stream_dims();
        for rec in &self.records {
            validate_record(rec)?;
            let these: Vec<(Modality, usize)> = rec.streams.iter().map(|(m, s)| (*m, s.dim())).collect();
            let keys: Vec<Modality> = these.iter().map(|(m, _)| *m).collect();
            let expected: Vec<Modality> = dims.iter().map(|(m, _)| *m).collect();
            if keys != expected {
                return Err(MsanError::Schema(format!(
                    "video {} has streams {} but the corpus uses {}",
                    rec.id,
                    Modality::format_list(&keys),
                    Modality::format_list(&expected)
                )));
            }
            for ((m, d), (_, e)) in these.iter().zip(&dims) {
                if d != e {
                    return Err(MsanError::Schema(format!(
                        "video {}: {m} feature dimension {d} differs from corpus dimension {e}",
                        rec.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            let raw = RawRecord {
                id: rec.id.clone(),
                streams: rec
                    .streams
                    .iter()
                    .map(|(m, s)| (m.key().to_string(), s.0.clone()))
                    .collect(),
                captions: rec.captions.iter().map(|c| c.join(" ")).collect(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Corpus> {
        let mut records = Vec::new();
        let mut dims: Option<Vec<(Modality, usize)>> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| MsanError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let mut streams = BTreeMap::new();
            for (key, steps) in raw.streams {
                let m = Modality::from_str(&key).map_err(|_| MsanError::Parse {
                    line: line_no,
                    message: format!("unknown stream key {key:?}"),
                })?;
                streams.insert(m, FeatureSequence(steps));
            }
            let captions = raw
                .captions
                .iter()
                .map(|c| tokenize(c))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| MsanError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let rec = VideoRecord {
                id: raw.id,
                streams,
                captions,
            };
            validate_record(&rec).map_err(|e| match e {
                MsanError::Schema(msg) => MsanError::Schema(format!("line {line_no}: {msg}")),
                other => other,
            })?;
            let these: Vec<(Modality, usize)> = rec.streams.iter().map(|(m, s)| (*m, s.dim())).collect();
            match &dims {
                None => dims = Some(these),
                Some(d) if *d != these => {
                    return Err(MsanError::Schema(format!(
                        "line {line_no}: streams {} do not match the first record's {}",
                        describe_dims(&these),
                        describe_dims(d)
                    )))
                }
                _ => {}
            }
            records.push(rec);
        }
        Ok(Corpus { records })
    }
}

fn describe_dims(d: &[(Modality, usize)]) -> String {
    d.iter().map(|(m, n)| format!("{m}:{n}")).collect::<Vec<_>>().join(",")
}

fn validate_record(rec: &VideoRecord) -> Result<()> {
    if rec.streams.is_empty() {
        return Err(MsanError::Schema(format!("video {} has no streams", rec.id)));
    }
    if rec.captions.is_empty() {
        return Err(MsanError::Schema(format!("video {} has no captions", rec.id)));
    }
    for (m, seq) in &rec.streams {
        if seq.is_empty() || seq.dim() == 0 {
            return Err(MsanError::Schema(format!("video {}: empty {m} stream", rec.id)));
        }
        if seq.0.iter().any(|f| f.len() != seq.dim()) {
            return Err(MsanError::Schema(format!(
                "video {}: {m} stream has frames of differing dimension",
                rec.id
            )));
        }
        if seq.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MsanError::Schema(format!("video {}: non-finite {m} feature", rec.id)));
        }
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| MsanError::io(path, e))?;
    Corpus::from_jsonl(&text)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| MsanError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(corpus.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| MsanError::io(path, e))
}

/// Train/validation/test partition stored as `train.jsonl`, `val.jsonl`, `test.jsonl`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSplits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

impl DataSplits {
    pub const FILES: [&'static str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

    /// Splits in order: the first 60% train, the next 20% validation, the rest test.
    pub fn partition(corpus: Corpus) -> DataSplits {
        let n = corpus.len();
        let n_train = n * 3 / 5;
        let n_val = n / 5;
        let mut records = corpus.records;
        let test = records.split_off(n_train + n_val);
        let val = records.split_off(n_train);
        DataSplits {
            train: Corpus::new(records),
            val: Corpus::new(val),
            test: Corpus::new(test),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<DataSplits> {
        if !dir.is_dir() {
            return Err(MsanError::Usage(format!("data directory {} does not exist", dir.display())));
        }
        let load = |name: &str| load_corpus(&dir.join(name));
        let splits = DataSplits {
            train: load(Self::FILES[0])?,
            val: load(Self::FILES[1])?,
            test: load(Self::FILES[2])?,
        };
        let dims: Vec<_> = [&splits.train, &splits.val, &splits.test]
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.stream_dims())
            .collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(MsanError::Schema(format!(
                "splits in {} disagree on stream layout",
                dir.display()
            )));
        }
        Ok(splits)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| MsanError::io(dir, e))?;
        save_corpus(&self.train, &dir.join(Self::FILES[0]))?;
        save_corpus(&self.val, &dir.join(Self::FILES[1]))?;
        save_corpus(&self.test, &dir.join(Self::FILES[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("A man is Singing.").unwrap(), toks(&["a", "man", "is", "singing"]));
        assert_eq!(tokenize("  hello   world ").unwrap(), toks(&["hello", "world"]));
        assert_eq!(tokenize("don't stop").unwrap(), toks(&["dont", "stop"]));
    }

    #[test]
    fn tokenize_empty_is_error() {
        assert!(matches!(tokenize(" ... !"), Err(MsanError::EmptyCaption(_))));
        assert!(matches!(tokenize(""), Err(MsanError::EmptyCaption(_))));
    }

    #[test]
    fn modality_lists() {
        assert_eq!(
            Modality::parse_list("o,f,c,f").unwrap(),
            vec![Modality::Frames, Modality::Clips, Modality::Flow]
        );
        assert_eq!(Modality::format_list(&[Modality::Frames, Modality::Flow]), "f,o");
        assert!(Modality::parse_list("x").is_err());
    }

    #[test]
    fn missing_captions_names_the_line() {
        let text = concat!(
            r#"{"id":"a","streams":{"frames":[[1.0,2.0]]},"captions":["a dog"]}"#,
            "\n",
            r#"{"id":"b","streams":{"frames":[[1.0,2.0]]}}"#,
            "\n"
        );
        match Corpus::from_jsonl(text) {
            Err(MsanError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("captions"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimension_is_schema_error() {
        let a = format!(
            r#"{{"id":"a","streams":{{"frames":[{:?}]}},"captions":["x"]}}"#,
            vec![0.5f64; 16]
        );
        let b = format!(
            r#"{{"id":"b","streams":{{"frames":[{:?}]}},"captions":["y"]}}"#,
            vec![0.5f64; 17]
        );
        let text = format!("{a}\n{b}\n");
        assert!(matches!(Corpus::from_jsonl(&text), Err(MsanError::Schema(_))));
    }

    #[test]
    fn mixed_stream_keys_rejected() {
        let text = concat!(
            r#"{"id":"a","streams":{"frames":[[1.0]]},"captions":["x"]}"#,
            "\n",
            r#"{"id":"b","streams":{"flow":[[1.0]]},"captions":["y"]}"#,
        );
        assert!(matches!(Corpus::from_jsonl(text), Err(MsanError::Schema(_))));
    }

    #[test]
    fn empty_stream_rejected() {
        let text = r#"{"id":"a","streams":{"frames":[]},"captions":["x"]}"#;
        assert!(matches!(Corpus::from_jsonl(text), Err(MsanError::Schema(_))));
    }

    #[test]
    fn partition_ten() {
        let rec = |i: usize| VideoRecord {
            id: format!("v{i}"),
            streams: BTreeMap::from([(Modality::Frames, FeatureSequence(vec![vec![0.0]]))]),
            captions: vec![toks(&["x"])],
        };
        let s = DataSplits::partition(Corpus::new((0..10).map(rec).collect()));
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }
}
