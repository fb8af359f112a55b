//! Parameter initialization, Adam, gradient clipping, and the joint training loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::corpus::{Corpus, Modality, VideoRecord};
use crate::decoder::{Dropout, EMBED};
use crate::error::{MsanError, Result};
use crate::model::{ModelConfig, Net, ParamKind, StreamSpec};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::{self, attribute_labels, AttributeVocabulary, Vocabulary};

/// Independent generator streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_DROPOUT: u64 = 1;
const STREAM_ORDER: u64 = 2;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Weights and embeddings from `U[-range, range]` (ChaCha8, seeded), biases zero.
pub fn init_params(model: &ModelConfig, range: f64, seed: u64) -> ParamStore {
    let mut rng = seeded(seed, STREAM_INIT);
    let mut store = ParamStore::new();
    for spec in model.param_specs() {
        let n: usize = spec.shape.iter().product();
        let data = match spec.kind {
            ParamKind::Bias => vec![0.0; n],
            ParamKind::Weight | ParamKind::Embedding => (0..n).map(|_| rng.gen_range(-range..=range)).collect(),
        };
        store.insert(spec.name, Tensor::new(spec.shape, data).expect("positive shapes"));
    }
    store
}

/// Rescales all gradients by `threshold / norm` when their global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamStore, threshold: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale_all(threshold / norm);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ((b1, b2), (lr, eps)) = ((self.beta1, self.beta2), (self.lr, self.eps));
        for (((name, p), (_, m)), (_, v)) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let g = grads.get(name)?;
            if g.len() != p.len() {
                return Err(MsanError::dim("adam_step", p.len(), g.len()));
            }
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Reads `word f1 .. fn` lines and returns vectors for words in `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<BTreeMap<usize, Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| MsanError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| MsanError::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        if values.len() != dim {
            return Err(MsanError::Config(format!(
                "{} line {}: vector has {} entries, embed_dim is {dim}",
                path.display(),
                i + 1,
                values.len()
            )));
        }
        let id = vocab.id(word);
        if id != vocab::UNK || word == vocab::RESERVED[vocab::UNK] {
            out.insert(id, values);
        }
    }
    Ok(out)
}

fn apply_embeddings(params: &mut ParamStore, vectors: &BTreeMap<usize, Vec<f64>>) {
    let e = params.get_mut(EMBED).expect("embedding table");
    let (rows, cols) = e.dims2();
    for (&id, vec) in vectors {
        for r in 0..rows {
            e.data_mut()[r * cols + id] = vec[r];
        }
    }
}

/// Joint loss terms of one teacher-forced example.
pub struct LossTerms {
    pub detector: Option<Var>,
    pub caption: Var,
    pub total: Var,
}

pub fn joint_loss<'a>(
    net: &Net<'_, 'a>,
    g: &mut Graph<'a>,
    record: &VideoRecord,
    tokens: &[usize],
    labels: &[f64],
    alpha: f64,
    dropout: Option<&mut Dropout>,
) -> Result<LossTerms> {
    let enc = net.encode(g, record)?;
    let sem = net.semantics(g, &enc)?;
    let detector = if sem.is_empty() {
        None
    } else {
        Some(net.detector_loss(g, &sem, labels, alpha)?)
    };
    let caption = net.caption_loss(g, &enc, &sem, tokens, dropout)?;
    let total = match detector {
        Some(d) => g.add(d, caption),
        None => caption,
    };
    Ok(LossTerms {
        detector,
        caption,
        total,
    })
}

/// A training or validation video with encoded captions and labels.
#[derive(Debug, Clone)]
pub struct Example<'c> {
    pub record: &'c VideoRecord,
    pub captions: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

pub fn prepare<'c>(
    corpus: &'c Corpus,
    vocab: &Vocabulary,
    attrs: &AttributeVocabulary,
    max_len: usize,
) -> Result<Vec<Example<'c>>> {
    corpus
        .records
        .iter()
        .map(|r| {
            if r.captions.is_empty() {
                return Err(MsanError::Schema(format!("video {} has no captions", r.id)));
            }
            Ok(Example {
                record: r,
                captions: r.captions.iter().map(|c| vocab.encode(c, max_len)).collect(),
                labels: attribute_labels(r, attrs).as_f64(),
            })
        })
        .collect()
}

/// Mean joint loss over every reference caption of every example, without dropout.
pub fn mean_joint_loss(net: &Net<'_, '_>, examples: &[Example<'_>], alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples {
        for caption in &ex.captions {
            let mut g = Graph::new();
            let terms = joint_loss(net, &mut g, ex.record, caption, &ex.labels, alpha, None)?;
            total += g.scalar(terms.total);
            n += 1;
        }
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss1: f64,
    pub train_loss2: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Validation loss of the parameters after the last epoch run.
    pub final_val_loss: f64,
}

/// Builds the vocabularies and model layout for `train` under `cfg`.
pub fn build_model(train: &Corpus, cfg: &TrainConfig) -> Result<(ModelConfig, Vocabulary, AttributeVocabulary)> {
    if train.is_empty() {
        return Err(MsanError::Usage("training split is empty".into()));
    }
    train.validate()?;
    let streams: Vec<StreamSpec> = train
        .stream_dims()
        .into_iter()
        .map(|(modality, input_dim)| StreamSpec { modality, input_dim })
        .collect();
    let mut attribute_modalities: Vec<Modality> = match &cfg.modalities {
        None => streams.iter().map(|s| s.modality).collect(),
        Some(m) => m.clone(),
    };
    attribute_modalities.sort();
    attribute_modalities.dedup();
    for m in &attribute_modalities {
        if !streams.iter().any(|s| s.modality == *m) {
            return Err(MsanError::Usage(format!(
                "modality {m} was requested but the corpus only has {}",
                Modality::format_list(&streams.iter().map(|s| s.modality).collect::<Vec<_>>())
            )));
        }
    }
    let stopwords = match &cfg.stopwords {
        Some(p) => vocab::load_stopwords(p)?,
        None => vocab::default_stopwords(),
    };
    let vocab = Vocabulary::build(train.captions());
    let attrs = AttributeVocabulary::build(train.captions(), cfg.num_attributes, &stopwords)?;
    let model = ModelConfig {
        streams,
        attribute_modalities,
        enc_hidden: cfg.enc_hidden,
        det_hidden: cfg.enc_hidden,
        hidden: cfg.hidden,
        factors: cfg.factors,
        embed_dim: cfg.embed_dim,
        attn_dim: cfg.hidden,
        num_attributes: cfg.num_attributes,
        vocab_size: vocab.len(),
    };
    model.validate()?;
    Ok((model, vocab, attrs))
}

/// Trains on `train`, early-stopping on the mean joint loss over `val`
/// (over `train` itself when `val` is empty), and returns the best checkpoint.
pub fn train(
    train: &Corpus,
    val: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model, vocab, attrs) = build_model(train, cfg)?;
    if !val.is_empty() && val.stream_dims() != train.stream_dims() {
        return Err(MsanError::Schema("validation split disagrees with training streams".into()));
    }
    let mut params = init_params(&model, cfg.init_range, cfg.seed);
    if let Some(path) = &cfg.embeddings {
        apply_embeddings(&mut params, &load_embeddings(path, &vocab, cfg.embed_dim)?);
    }
    let train_ex = prepare(train, &vocab, &attrs, cfg.max_caption_len)?;
    let val_ex = if val.is_empty() {
        train_ex.clone()
    } else {
        prepare(val, &vocab, &attrs, cfg.max_caption_len)?
    };

    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut dropout = Dropout {
        rate: cfg.dropout,
        rng: seeded(cfg.seed, STREAM_DROPOUT),
    };
    let mut order_rng = seeded(cfg.seed, STREAM_ORDER);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0usize;
    let mut log = Vec::new();
    let mut final_val_loss = f64::NAN;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut sum1, mut sum2) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = params.zeros_like();
            for &i in batch {
                let ex = &train_ex[i];
                let caption = &ex.captions[order_rng.gen_range(0..ex.captions.len())];
                let net = Net::new(&model, &params);
                let mut g = Graph::new();
                let terms = joint_loss(&net, &mut g, ex.record, caption, &ex.labels, cfg.alpha, Some(&mut dropout))?;
                let total = g.scalar(terms.total);
                if !total.is_finite() {
                    return Err(MsanError::NonFinite(format!(
                        "training loss for video {} in epoch {epoch}",
                        ex.record.id
                    )));
                }
                sum1 += terms.detector.map_or(0.0, |d| g.scalar(d));
                sum2 += g.scalar(terms.caption);
                let adj = g.backward(terms.total)?;
                let grads = g.param_gradients(&adj, &params)?;
                acc.add_scaled(&grads, 1.0 / batch.len() as f64)?;
            }
            clip_gradients(&mut acc, cfg.clip_norm);
            adam.step(&mut params, &acc)?;
        }
        let val_loss = mean_joint_loss(&Net::new(&model, &params), &val_ex, cfg.alpha)?;
        if !val_loss.is_finite() {
            return Err(MsanError::NonFinite(format!("validation loss in epoch {epoch}")));
        }
        final_val_loss = val_loss;
        let n = train_ex.len() as f64;
        let entry = EpochLog {
            epoch,
            train_loss1: sum1 / n,
            train_loss2: sum2 / n,
            val_loss,
            lr: cfg.learning_rate,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale > p) {
                break;
            }
        }
    }

    let (val_loss, epoch, best_params) = best.expect("at least one epoch");
    let checkpoint = Checkpoint::new(model, best_params, vocab, attrs, cfg.clone(), epoch, val_loss);
    Ok(TrainOutcome {
        checkpoint,
        log,
        final_val_loss,
    })
}
