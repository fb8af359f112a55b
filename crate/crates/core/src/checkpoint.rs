//! Self-contained JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{MsanError, Result};
use crate::model::{ModelConfig, Msan};
use crate::params::ParamStore;
use crate::vocab::{AttributeVocabulary, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub attributes: AttributeVocabulary,
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        params: ParamStore,
        vocab: Vocabulary,
        attributes: AttributeVocabulary,
        train_config: TrainConfig,
        epoch: usize,
        val_loss: f64,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model,
            train_config,
            vocab,
            attributes,
            epoch,
            val_loss,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| MsanError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| MsanError::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(MsanError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        if ck.vocab.len() != ck.model.vocab_size || ck.attributes.len() != ck.model.num_attributes {
            return Err(MsanError::Checkpoint("vocabularies disagree with the model layout".into()));
        }
        Msan::new(ck.model.clone(), ck.params.clone())
            .map_err(|e| MsanError::Checkpoint(format!("invalid parameters: {e}")))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| MsanError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| MsanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MsanError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn msan(&self) -> Msan {
        Msan {
            config: self.model.clone(),
            params: self.params.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic_corpus, SynthConfig};
    use crate::train::{build_model, seeded};

    fn sample() -> Checkpoint {
        let corpus = generate_synthetic_corpus(&SynthConfig {
            n_videos: 6,
            n_attributes: 4,
            feature_dim: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden: 4,
            factors: 3,
            embed_dim: 3,
            enc_hidden: 3,
            num_attributes: 4,
            ..TrainConfig::synthetic()
        };
        let (model, vocab, attrs) = build_model(&corpus, &cfg).unwrap();
        let params = model.random_params(&mut seeded(1, 0), 1.0);
        Checkpoint::new(model, params, vocab, attrs, cfg, 3, 0.1 + 0.2)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        for ((_, a), (_, b)) in ck.params.iter().zip(back.params.iter()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
    }

    #[test]
    fn rejects_tampered_files() {
        let ck = sample();
        let mut bad = ck.clone();
        bad.params.insert("dec.out.b", crate::tensor::Tensor::zeros(&[2]));
        assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(MsanError::Checkpoint(_))));
        assert!(Checkpoint::from_json("{not json").is_err());
        let mut v = ck.clone();
        v.format_version = 99;
        assert!(Checkpoint::from_json(&v.to_json().unwrap()).is_err());
    }
}
