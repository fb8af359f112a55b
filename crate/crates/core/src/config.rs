//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{MsanError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    /// Non-improving epochs tolerated before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    pub beam_size: usize,
    pub init_range: f64,
    pub hidden: usize,
    pub factors: usize,
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub num_attributes: usize,
    pub batch_size: usize,
    pub max_caption_len: usize,
    /// Detectors feeding the attention unit. `None` uses every stream in the
    /// corpus; an empty list trains the attribute-free baseline.
    pub modalities: Option<Vec<Modality>>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 20,
            clip_norm: 5.0,
            dropout: 0.5,
            patience: Some(3),
            alpha: 1e-4,
            seed: 0,
            beam_size: 5,
            init_range: 0.05,
            hidden: 512,
            factors: 512,
            embed_dim: 300,
            enc_hidden: 512,
            num_attributes: 300,
            batch_size: 1,
            max_caption_len: 16,
            modalities: None,
            embeddings: None,
            stopwords: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "learning_rate",
    "max_epochs",
    "clip_norm",
    "dropout",
    "patience",
    "alpha",
    "seed",
    "beam_size",
    "init_range",
    "hidden",
    "factors",
    "embed_dim",
    "enc_hidden",
    "num_attributes",
    "batch_size",
    "max_caption_len",
    "modalities",
    "embeddings",
    "stopwords",
];

impl TrainConfig {
    /// Small model sized for the synthetic corpora.
    pub fn synthetic() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            dropout: 0.1,
            patience: Some(5),
            init_range: 0.1,
            hidden: 32,
            factors: 32,
            embed_dim: 32,
            enc_hidden: 32,
            num_attributes: 8,
            ..TrainConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" | "default" => Ok(TrainConfig::default()),
            "synthetic" => Ok(TrainConfig::synthetic()),
            _ => Err(MsanError::Config(format!("unknown preset {name:?} (expected full or synthetic)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(MsanError::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return bad("init_range must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("beam_size", self.beam_size),
            ("hidden", self.hidden),
            ("factors", self.factors),
            ("embed_dim", self.embed_dim),
            ("enc_hidden", self.enc_hidden),
            ("num_attributes", self.num_attributes),
            ("batch_size", self.batch_size),
            ("max_caption_len", self.max_caption_len),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(&format!("{k} must be at least 1"));
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| MsanError::Config(format!("invalid value {v:?} for {key}")))
        }
        let none = |v: &str| v.is_empty() || v.eq_ignore_ascii_case("none");
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "patience" => self.patience = if none(value) { None } else { Some(num(key, value)?) },
            "alpha" => self.alpha = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "beam_size" => self.beam_size = num(key, value)?,
            "init_range" => self.init_range = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "factors" => self.factors = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "enc_hidden" => self.enc_hidden = num(key, value)?,
            "num_attributes" => self.num_attributes = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_caption_len" => self.max_caption_len = num(key, value)?,
            "modalities" => {
                self.modalities = match value {
                    "all" => None,
                    v if none(v) => Some(Vec::new()),
                    v => Some(Modality::parse_list(v).map_err(|e| MsanError::Config(e.to_string()))?),
                }
            }
            "embeddings" => self.embeddings = (!none(value)).then(|| PathBuf::from(value)),
            "stopwords" => self.stopwords = (!none(value)).then(|| PathBuf::from(value)),
            _ => {
                return Err(MsanError::Config(format!(
                    "unknown key {key:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                MsanError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| MsanError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, base: TrainConfig) -> Result<Self> {
        let mut cfg = base;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: TrainConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MsanError::io(path, e))?;
        Self::from_text(&text, base)
    }

    pub fn to_text(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        line("learning_rate", self.learning_rate.to_string());
        line("max_epochs", self.max_epochs.to_string());
        line("clip_norm", self.clip_norm.to_string());
        line("dropout", self.dropout.to_string());
        line("patience", self.patience.map_or("none".into(), |p| p.to_string()));
        line("alpha", self.alpha.to_string());
        line("seed", self.seed.to_string());
        line("beam_size", self.beam_size.to_string());
        line("init_range", self.init_range.to_string());
        line("hidden", self.hidden.to_string());
        line("factors", self.factors.to_string());
        line("embed_dim", self.embed_dim.to_string());
        line("enc_hidden", self.enc_hidden.to_string());
        line("num_attributes", self.num_attributes.to_string());
        line("batch_size", self.batch_size.to_string());
        line("max_caption_len", self.max_caption_len.to_string());
        line(
            "modalities",
            match &self.modalities {
                None => "all".into(),
                Some(m) if m.is_empty() => "none".into(),
                Some(m) => Modality::format_list(m),
            },
        );
        line("embeddings", opt_path(&self.embeddings));
        line("stopwords", opt_path(&self.stopwords));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::synthetic();
        cfg.modalities = Some(vec![Modality::Frames, Modality::Flow]);
        cfg.patience = None;
        cfg.embeddings = Some("vec.txt".into());
        let back = TrainConfig::from_text(&cfg.to_text(), TrainConfig::default()).unwrap();
        assert_eq!(back, cfg);
        let mut base = TrainConfig::default();
        base.modalities = Some(vec![]);
        assert_eq!(TrainConfig::from_text(&base.to_text(), TrainConfig::synthetic()).unwrap(), base);
    }

    #[test]
    fn file_overrides_only_named_keys() {
        let cfg = TrainConfig::from_text("# comment\nlearning_rate = 0.01\n\nmodalities = f\n", TrainConfig::default())
            .unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.modalities, Some(vec![Modality::Frames]));
        assert_eq!(cfg.max_epochs, 20);
    }

    #[test]
    fn errors_name_the_line() {
        let e = TrainConfig::from_text("seed = 1\nlearnig_rate = 2\n", TrainConfig::default()).unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("learnig_rate"));
        let e = TrainConfig::from_text("max_epochs = many", TrainConfig::default()).unwrap_err();
        assert!(e.to_string().contains("max_epochs"));
        assert!(TrainConfig::from_text("just words", TrainConfig::default()).is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::synthetic().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { init_range: -0.1, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
            TrainConfig { hidden: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
