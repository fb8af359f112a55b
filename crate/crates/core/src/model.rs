//! Model architecture: dimensions, parameter layout, and the bridge between
//! the encoder and decoder graph builders.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Modality, VideoRecord};
use crate::decoder::{self, DecoderVars, Dropout, SemanticsInput};
use crate::encoder::{self, DetectorVars, StreamEncoderVars};
use crate::error::{MsanError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab;

/// The four LSTM gates, in the order their pre-activations are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    pub fn key(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Cell => "c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Deliberate defects for exercising the self-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the hidden-side factor product `U_b S ⊙ U_c h` in the factorized step.
    FlipHiddenFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub modality: Modality,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoded streams in concatenation order.
    pub streams: Vec<StreamSpec>,
    /// Modalities whose detectors feed the attention unit; empty disables attributes.
    pub attribute_modalities: Vec<Modality>,
    pub enc_hidden: usize,
    pub det_hidden: usize,
    pub hidden: usize,
    pub factors: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub num_attributes: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn video_dim(&self) -> usize {
        self.streams.len() * self.enc_hidden
    }

    pub fn uses_attributes(&self) -> bool {
        !self.attribute_modalities.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("enc_hidden", self.enc_hidden),
            ("det_hidden", self.det_hidden),
            ("hidden", self.hidden),
            ("factors", self.factors),
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("num_attributes", self.num_attributes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(MsanError::Config(format!("{name} must be positive")));
        }
        if self.streams.is_empty() {
            return Err(MsanError::Config("at least one stream is required".into()));
        }
        if self.streams.windows(2).any(|w| w[0].modality >= w[1].modality) {
            return Err(MsanError::Config("streams must be in canonical order without repeats".into()));
        }
        for m in &self.attribute_modalities {
            if !self.streams.iter().any(|s| s.modality == *m) {
                return Err(MsanError::Config(format!(
                    "attribute modality {m} is not among the encoded streams"
                )));
            }
        }
        if self.vocab_size <= vocab::UNK {
            return Err(MsanError::Config("vocabulary must hold the reserved tokens".into()));
        }
        Ok(())
    }

    /// Every parameter tensor of the model, in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, kind: ParamKind| {
            out.push(ParamSpec { name, shape, kind });
        };
        let n = self.enc_hidden;
        for s in &self.streams {
            for layer in 1..=2 {
                let input = if layer == 1 { s.input_dim } else { n };
                for gate in Gate::ALL {
                    let p = encoder::layer_prefix(s.modality, layer);
                    push(format!("{p}.w_{}", gate.key()), vec![n, input], ParamKind::Weight);
                    push(format!("{p}.u_{}", gate.key()), vec![n, n], ParamKind::Weight);
                    push(format!("{p}.b_{}", gate.key()), vec![n], ParamKind::Bias);
                }
            }
        }
        let k = self.num_attributes;
        for m in &self.attribute_modalities {
            let p = encoder::detector_prefix(*m);
            push(format!("{p}.w1"), vec![self.det_hidden, n], ParamKind::Weight);
            push(format!("{p}.b1"), vec![self.det_hidden], ParamKind::Bias);
            push(format!("{p}.w2"), vec![k, self.det_hidden], ParamKind::Weight);
            push(format!("{p}.b2"), vec![k], ParamKind::Bias);
        }
        let (nh, nf, nx) = (self.hidden, self.factors, self.embed_dim);
        for gate in Gate::ALL {
            let p = decoder::gate_prefix(gate);
            push(format!("{p}.wa"), vec![nh, nf], ParamKind::Weight);
            push(format!("{p}.wb"), vec![nf, k], ParamKind::Weight);
            push(format!("{p}.wc"), vec![nf, nx], ParamKind::Weight);
            push(format!("{p}.ua"), vec![nh, nf], ParamKind::Weight);
            push(format!("{p}.ub"), vec![nf, k], ParamKind::Weight);
            push(format!("{p}.uc"), vec![nf, nh], ParamKind::Weight);
            push(format!("{p}.b"), vec![nh], ParamKind::Bias);
        }
        push(decoder::EMBED.into(), vec![nx, self.vocab_size], ParamKind::Embedding);
        push(decoder::INJECT.into(), vec![nh, self.video_dim()], ParamKind::Weight);
        push(decoder::OUT_W.into(), vec![self.vocab_size, nh], ParamKind::Weight);
        push(decoder::OUT_B.into(), vec![self.vocab_size], ParamKind::Bias);
        if self.uses_attributes() {
            push(decoder::ATTN_W.into(), vec![self.attn_dim, nh], ParamKind::Weight);
            push(decoder::ATTN_U.into(), vec![self.attn_dim, k], ParamKind::Weight);
            push(decoder::ATTN_V.into(), vec![self.attn_dim], ParamKind::Weight);
        }
        out
    }

    /// Names of the weights penalized by the detector loss's L2 term:
    /// encoder and detector matrices, no biases.
    pub fn regularized_weights(&self) -> Vec<String> {
        self.param_specs()
            .into_iter()
            .filter(|p| p.kind == ParamKind::Weight && (p.name.starts_with("enc.") || p.name.starts_with("det.")))
            .map(|p| p.name)
            .collect()
    }

    /// Every entry, biases included, drawn from `U(-range, range)`.
    /// Used where generic (non-degenerate) parameters are wanted.
    pub fn random_params<R: rand::Rng>(&self, rng: &mut R, range: f64) -> ParamStore {
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            let n = spec.shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-range..range)).collect();
            store.insert(spec.name, Tensor::new(spec.shape, data).expect("spec shapes are positive"));
        }
        store
    }

    pub fn zero_params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            store.insert(spec.name, Tensor::zeros(&spec.shape));
        }
        store
    }
}

/// Graph-side encoding of one video.
#[derive(Debug, Clone)]
pub struct GraphEncoding {
    pub per_modality: Vec<(Modality, Var)>,
    pub video: Var,
}

/// Value-side encoding of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoding {
    pub per_modality: Vec<(Modality, Vec<f64>)>,
    pub video: Vec<f64>,
}

/// Per-attribute probabilities from one modality's detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDistribution {
    pub modality: Modality,
    pub probs: Vec<f64>,
}

/// A model definition bound to a parameter store, for building graphs.
#[derive(Debug, Clone, Copy)]
pub struct Net<'c, 'a> {
    pub config: &'c ModelConfig,
    pub params: &'a ParamStore,
    pub fault: Option<Fault>,
}

impl<'c, 'a> Net<'c, 'a> {
    pub fn new(config: &'c ModelConfig, params: &'a ParamStore) -> Self {
        Net {
            config,
            params,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn encode(&self, g: &mut Graph<'a>, record: &VideoRecord) -> Result<GraphEncoding> {
        let mut per_modality = Vec::with_capacity(self.config.streams.len());
        for s in &self.config.streams {
            let seq = record.stream(s.modality)?;
            if seq.dim() != s.input_dim {
                return Err(MsanError::dim("encode_video", s.input_dim, seq.dim()));
            }
            let vars = StreamEncoderVars::load(g, self.params, s.modality)?;
            let v = encoder::encode_stream(g, &vars, seq)?;
            per_modality.push((s.modality, v));
        }
        let parts: Vec<Var> = per_modality.iter().map(|(_, v)| *v).collect();
        let video = if parts.len() == 1 { parts[0] } else { g.concat(&parts) };
        Ok(GraphEncoding { per_modality, video })
    }

    /// Detector outputs for the configured attribute modalities.
    pub fn semantics(&self, g: &mut Graph<'a>, enc: &GraphEncoding) -> Result<Vec<(Modality, Var)>> {
        self.config
            .attribute_modalities
            .iter()
            .map(|&m| {
                let v_m = enc
                    .per_modality
                    .iter()
                    .find(|(mm, _)| *mm == m)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| MsanError::Usage(format!("modality {m} was not encoded")))?;
                let det = DetectorVars::load(g, self.params, m)?;
                Ok((m, encoder::detect_semantics(g, &det, v_m)))
            })
            .collect()
    }

    pub fn detector_loss(
        &self,
        g: &mut Graph<'a>,
        semantics: &[(Modality, Var)],
        labels: &[f64],
        alpha: f64,
    ) -> Result<Var> {
        let s: Vec<Var> = semantics.iter().map(|(_, v)| *v).collect();
        let weights = self
            .config
            .regularized_weights()
            .into_iter()
            .map(|name| g.param(self.params, &name))
            .collect::<Result<Vec<_>>>()?;
        encoder::detector_loss(g, &s, labels, alpha, &weights)
    }

    pub fn decoder_vars(&self, g: &mut Graph<'a>) -> Result<DecoderVars> {
        let mut vars = DecoderVars::load(g, self.params, self.config.uses_attributes())?;
        vars.fault = self.fault;
        Ok(vars)
    }

    pub fn semantics_input(&self, g: &mut Graph<'a>, semantics: &[(Modality, Var)]) -> SemanticsInput {
        if self.config.uses_attributes() {
            SemanticsInput::Attend(semantics.iter().map(|(_, v)| *v).collect())
        } else {
            let k = self.config.num_attributes;
            SemanticsInput::Fixed(g.input(vec![1.0 / k as f64; k]))
        }
    }

    /// Teacher-forced negative log-likelihood of `tokens` followed by EOS.
    pub fn caption_loss(
        &self,
        g: &mut Graph<'a>,
        enc: &GraphEncoding,
        semantics: &[(Modality, Var)],
        tokens: &[usize],
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let vars = self.decoder_vars(g)?;
        let sem = self.semantics_input(g, semantics);
        decoder::caption_loss(g, &vars, enc.video, &sem, tokens, dropout)
    }

    /// Value-level encoding and detection for inference.
    pub fn analyze(&self, record: &VideoRecord) -> Result<(VideoEncoding, Vec<SemanticDistribution>)> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, record)?;
        let sem = self.semantics(&mut g, &enc)?;
        let encoding = VideoEncoding {
            per_modality: enc
                .per_modality
                .iter()
                .map(|(m, v)| (*m, g.value(*v).to_vec()))
                .collect(),
            video: g.value(enc.video).to_vec(),
        };
        if encoding.video.iter().any(|v| !v.is_finite()) {
            return Err(MsanError::NonFinite(format!("encoding of video {}", record.id)));
        }
        let semantics = sem
            .iter()
            .map(|(m, v)| SemanticDistribution {
                modality: *m,
                probs: g.value(*v).to_vec(),
            })
            .collect();
        Ok((encoding, semantics))
    }

    /// Caption loss evaluated from precomputed values.
    pub fn caption_loss_value(
        &self,
        encoding: &VideoEncoding,
        semantics: &[SemanticDistribution],
        tokens: &[usize],
    ) -> Result<f64> {
        let mut g = Graph::new();
        let video = g.input(encoding.video.clone());
        let sem: Vec<(Modality, Var)> = semantics
            .iter()
            .map(|s| (s.modality, g.input(s.probs.clone())))
            .collect();
        let enc = GraphEncoding {
            per_modality: Vec::new(),
            video,
        };
        let loss = self.caption_loss(&mut g, &enc, &sem, tokens, None)?;
        Ok(g.scalar(loss))
    }
}

/// A model definition together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Msan {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Msan {
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Msan> {
        config.validate()?;
        for spec in config.param_specs() {
            let t = params.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(MsanError::dim(
                    "Msan::new",
                    format!("{} of shape {:?}", spec.name, spec.shape),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        if params.len() != config.param_specs().len() {
            return Err(MsanError::Checkpoint("parameter store holds unexpected tensors".into()));
        }
        Ok(Msan { config, params })
    }

    pub fn net(&self) -> Net<'_, '_> {
        Net::new(&self.config, &self.params)
    }
}
