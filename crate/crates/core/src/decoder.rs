//! Attention over per-modality semantic distributions and the factorized
//! attribute-dependent LSTM decoder.
//!
//! Each gate's input and hidden weights are ensembles over the `K` attributes,
//! `W(S) = W_a · diag(W_b S) · W_c`, which is never materialized: the step
//! computes `W_a ((W_b S) ⊙ (W_c w))` directly. [`reference`] holds the
//! explicit-matrix form used to check that rewrite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::encoder::combine_gates;
use crate::error::{MsanError, Result};
use crate::model::{Fault, Gate};
use crate::params::ParamStore;
use crate::tensor::{log_softmax_slice, softmax_slice, Tensor};
use crate::vocab::{BOS, EOS, UNK};

pub const EMBED: &str = "dec.embed";
pub const INJECT: &str = "dec.inject";
pub const OUT_W: &str = "dec.out.w";
pub const OUT_B: &str = "dec.out.b";
pub const ATTN_W: &str = "att.w";
pub const ATTN_U: &str = "att.u";
pub const ATTN_V: &str = "att.v";

pub fn gate_prefix(gate: Gate) -> String {
    format!("dec.{}", gate.key())
}

/// Factor triples and bias of one decoder gate.
#[derive(Debug, Clone, Copy)]
pub struct GateFactorVars {
    pub wa: Var,
    pub wb: Var,
    pub wc: Var,
    pub ua: Var,
    pub ub: Var,
    pub uc: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub u: Var,
    pub v: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderVars {
    pub gates: [GateFactorVars; 4],
    pub embed: Var,
    pub inject: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub attention: Option<AttentionVars>,
    pub fault: Option<Fault>,
}

impl DecoderVars {
    pub fn load<'a>(g: &mut Graph<'a>, store: &'a ParamStore, with_attention: bool) -> Result<Self> {
        let mut gates = Vec::with_capacity(4);
        for gate in Gate::ALL {
            let p = gate_prefix(gate);
            let mut get = |s: &str| g.param(store, &format!("{p}.{s}"));
            gates.push(GateFactorVars {
                wa: get("wa")?,
                wb: get("wb")?,
                wc: get("wc")?,
                ua: get("ua")?,
                ub: get("ub")?,
                uc: get("uc")?,
                b: get("b")?,
            });
        }
        let attention = if with_attention {
            Some(AttentionVars {
                w: g.param(store, ATTN_W)?,
                u: g.param(store, ATTN_U)?,
                v: g.param(store, ATTN_V)?,
            })
        } else {
            None
        };
        Ok(DecoderVars {
            gates: [gates[0], gates[1], gates[2], gates[3]],
            embed: g.param(store, EMBED)?,
            inject: g.param(store, INJECT)?,
            out_w: g.param(store, OUT_W)?,
            out_b: g.param(store, OUT_B)?,
            attention,
            fault: None,
        })
    }
}

/// Where the per-step attribute vector `S_t` comes from.
#[derive(Debug, Clone)]
pub enum SemanticsInput {
    /// Attention over these per-modality distributions.
    Attend(Vec<Var>),
    /// A constant vector used at every step (attributes disabled).
    Fixed(Var),
}

/// Inverted dropout with masks drawn from a seeded generator.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    fn apply(this: &mut Option<&mut Dropout>, g: &mut Graph<'_>, x: Var) -> Var {
        match this {
            Some(d) if d.rate > 0.0 => {
                let m = d.mask(g.value(x).len());
                g.mask_mul(x, m)
            }
            _ => x,
        }
    }
}

/// Relevance scores `e_i = v · tanh(W h + U s_i)`, weights `a = softmax(e)`,
/// and the attended vector `S_t = Σ a_i s_i`. Returns `(S_t, a)`.
pub fn attend(g: &mut Graph<'_>, attn: &AttentionVars, h_prev: Var, semantics: &[Var]) -> Result<(Var, Var)> {
    if semantics.is_empty() {
        return Err(MsanError::Usage("attention needs at least one semantic distribution".into()));
    }
    let wh = g.matvec(attn.w, h_prev);
    let scores: Vec<Var> = semantics
        .iter()
        .map(|&s| {
            let us = g.matvec(attn.u, s);
            let pre = g.add(wh, us);
            let t = g.tanh(pre);
            g.dot(attn.v, t)
        })
        .collect();
    let e = g.concat(&scores);
    let a = g.softmax(e);
    let s_t = g.weighted_sum(a, semantics);
    Ok((s_t, a))
}

/// Value-level attention; `store` must hold the attention parameters.
pub fn attend_values(store: &ParamStore, h_prev: &[f64], semantics: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let attn = AttentionVars {
        w: g.param(store, ATTN_W)?,
        u: g.param(store, ATTN_U)?,
        v: g.param(store, ATTN_V)?,
    };
    let h = g.input(h_prev.to_vec());
    let s: Vec<Var> = semantics.iter().map(|s| g.input(s.clone())).collect();
    let (s_t, a) = attend(&mut g, &attn, h, &s)?;
    Ok((g.value(s_t).to_vec(), g.value(a).to_vec()))
}

/// Unnormalized relevance scores for each semantic distribution.
pub fn relevance_scores(store: &ParamStore, h_prev: &[f64], semantics: &[Vec<f64>]) -> Result<Vec<f64>> {
    let w = store.get(ATTN_W)?;
    let u = store.get(ATTN_U)?;
    let v = store.get(ATTN_V)?;
    let wh = w.matvec(h_prev)?;
    semantics
        .iter()
        .map(|s| {
            let us = u.matvec(s)?;
            Ok(wh
                .iter()
                .zip(&us)
                .zip(v.data())
                .map(|((a, b), vi)| vi * (a + b).tanh())
                .sum())
        })
        .collect()
}

/// `A · diag(B S) · Cf`: the attribute-dependent weight matrix of one factor triple.
pub fn ensemble_weight(s: &Tensor, a: &Tensor, b: &Tensor, cf: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || cf.shape().len() != 2 {
        return Err(MsanError::dim("ensemble_weight", "matrices", format!("{:?}", a.shape())));
    }
    let (nh, nf) = a.dims2();
    let (nf_b, k) = b.dims2();
    let (nf_c, _) = cf.dims2();
    if nf_b != nf || nf_c != nf {
        return Err(MsanError::dim(
            "ensemble_weight",
            format!("A[n_h x {nf}], B[{nf} x K], C[{nf} x n_x]"),
            format!("{:?}, {:?}, {:?}", a.shape(), b.shape(), cf.shape()),
        ));
    }
    if s.len() != k {
        return Err(MsanError::dim("ensemble_weight", format!("S of length {k}"), s.len()));
    }
    let diag = b.matvec(s.data())?;
    let mut scaled = a.clone();
    for r in 0..nh {
        for (f, d) in diag.iter().enumerate() {
            scaled.data_mut()[r * nf + f] *= d;
        }
    }
    scaled.matmul(cf)
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// 1-based step index of the next update.
    pub t: usize,
}

impl DecoderState {
    pub fn initial(g: &mut Graph<'_>, hidden: usize) -> Self {
        DecoderState {
            h: g.input(vec![0.0; hidden]),
            c: g.input(vec![0.0; hidden]),
            t: 1,
        }
    }
}

/// One factorized decoder update. `video` must be supplied exactly at `t == 1`,
/// where `C v` is added to every gate pre-activation.
pub fn semantic_lstm_step(
    g: &mut Graph<'_>,
    vars: &DecoderVars,
    s_t: Var,
    w_embed: Var,
    state: &DecoderState,
    video: Option<Var>,
) -> Result<DecoderState> {
    match (state.t == 1, video.is_some()) {
        (true, false) => return Err(MsanError::Usage("the video vector is required at t = 1".into())),
        (false, true) => {
            return Err(MsanError::Usage(format!(
                "the video vector is only injected at t = 1, not t = {}",
                state.t
            )))
        }
        _ => {}
    }
    let z = video.map(|v| g.matvec(vars.inject, v));
    let mut pre = [s_t; 4];
    for (k, gate) in vars.gates.iter().enumerate() {
        let ws = g.matvec(gate.wb, s_t);
        let wx = g.matvec(gate.wc, w_embed);
        let w_hat = g.mul(ws, wx);
        let us = g.matvec(gate.ub, s_t);
        let uh = g.matvec(gate.uc, state.h);
        let mut h_hat = g.mul(us, uh);
        if vars.fault == Some(Fault::FlipHiddenFactor) {
            h_hat = g.scale(h_hat, -1.0);
        }
        let a = g.matvec(gate.wa, w_hat);
        let b = g.matvec(gate.ua, h_hat);
        pre[k] = match z {
            Some(z) => g.add_n(&[a, b, gate.b, z]),
            None => g.add_n(&[a, b, gate.b]),
        };
    }
    let (h, c) = combine_gates(g, pre, state.c);
    Ok(DecoderState { h, c, t: state.t + 1 })
}

pub fn step_logits(g: &mut Graph<'_>, vars: &DecoderVars, h: Var) -> Var {
    let o = g.matvec(vars.out_w, h);
    g.add(o, vars.out_b)
}

/// `softmax(W_out h + b_out)` from values.
pub fn step_distribution(store: &ParamStore, h: &[f64]) -> Result<Vec<f64>> {
    let w = store.get(OUT_W)?;
    let b = store.get(OUT_B)?;
    let mut logits = w.matvec(h)?;
    for (l, bv) in logits.iter_mut().zip(b.data()) {
        *l += bv;
    }
    Ok(softmax_slice(&logits))
}

/// Attribute vector for the step whose previous hidden state is `h_prev`.
pub fn step_semantics(g: &mut Graph<'_>, vars: &DecoderVars, sem: &SemanticsInput, h_prev: Var) -> Result<Var> {
    match sem {
        SemanticsInput::Fixed(s) => Ok(*s),
        SemanticsInput::Attend(list) => {
            let attn = vars
                .attention
                .as_ref()
                .ok_or_else(|| MsanError::Usage("attention parameters are not loaded".into()))?;
            Ok(attend(g, attn, h_prev, list)?.0)
        }
    }
}

/// Teacher-forced `-Σ_t log P(w_t | ...)` over `tokens` followed by EOS,
/// with BOS as the first input.
pub fn caption_loss(
    g: &mut Graph<'_>,
    vars: &DecoderVars,
    video: Var,
    sem: &SemanticsInput,
    tokens: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(MsanError::Usage("caption must contain at least one token".into()));
    }
    let (vocab_size, hidden) = g.shape(vars.out_w);
    let mut state = DecoderState::initial(g, hidden);
    let mut input = BOS;
    let mut terms = Vec::with_capacity(tokens.len() + 1);
    for &target in tokens.iter().chain(std::iter::once(&EOS)) {
        let target = if target < vocab_size { target } else { UNK };
        let s_t = step_semantics(g, vars, sem, state.h)?;
        let w = g.column(vars.embed, input);
        let w = Dropout::apply(&mut dropout, g, w);
        let v = (state.t == 1).then_some(video);
        state = semantic_lstm_step(g, vars, s_t, w, &state, v)?;
        let h = Dropout::apply(&mut dropout, g, state.h);
        let logits = step_logits(g, vars, h);
        terms.push(g.nll(logits, target));
        input = target;
    }
    Ok(g.add_n(&terms))
}

/// Log-probabilities of the next token from values; used by the search.
pub fn log_distribution(logits: &[f64]) -> Vec<f64> {
    log_softmax_slice(logits)
}

/// Explicit-matrix formulation of the decoder step, for verification only.
pub mod reference {
    use super::*;
    use crate::tensor::sigmoid_scalar;

    /// `W_τ[k] = A · diag(B e_k) · Cf` for every attribute `k`.
    pub fn member_matrices(a: &Tensor, b: &Tensor, cf: &Tensor) -> Result<Vec<Tensor>> {
        let k = b.dims2().1;
        (0..k)
            .map(|i| {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                ensemble_weight(&Tensor::vector(e), a, b, cf)
            })
            .collect()
    }

    /// `Σ_k S[k] W_τ[k]`.
    pub fn ensemble_sum(s: &[f64], members: &[Tensor]) -> Tensor {
        let mut out = Tensor::zeros(members[0].shape());
        for (sk, m) in s.iter().zip(members) {
            for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
                *o += sk * v;
            }
        }
        out
    }

    /// Pre-activations `W_*(S) w + U_*(S) h + b + [t = 1] C v` built from
    /// explicit weight matrices, then the standard gate combination.
    pub fn explicit_step(
        store: &ParamStore,
        s: &[f64],
        w: &[f64],
        h: &[f64],
        c: &[f64],
        video: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let st = Tensor::vector(s.to_vec());
        let z = match video {
            Some(v) => Some(store.get(INJECT)?.matvec(v)?),
            None => None,
        };
        let mut pre = Vec::with_capacity(4);
        for gate in Gate::ALL {
            let p = gate_prefix(gate);
            let get = |n: &str| store.get(&format!("{p}.{n}"));
            let wm = ensemble_weight(&st, get("wa")?, get("wb")?, get("wc")?)?;
            let um = ensemble_weight(&st, get("ua")?, get("ub")?, get("uc")?)?;
            let a = wm.matvec(w)?;
            let b = um.matvec(h)?;
            let bias = get("b")?;
            let row: Vec<f64> = (0..a.len())
                .map(|r| a[r] + b[r] + bias.data()[r] + z.as_ref().map_or(0.0, |z| z[r]))
                .collect();
            pre.push(row);
        }
        let n = h.len();
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for r in 0..n {
            let i = sigmoid_scalar(pre[0][r]);
            let f = sigmoid_scalar(pre[1][r]);
            let o = sigmoid_scalar(pre[2][r]);
            let cand = pre[3][r].tanh();
            c2[r] = i * cand + f * c[r];
            h2[r] = o * c2[r].tanh();
        }
        Ok((h2, c2))
    }

    /// The factorized step of [`semantic_lstm_step`] evaluated on values.
    pub fn factorized_step(
        store: &ParamStore,
        fault: Option<Fault>,
        s: &[f64],
        w: &[f64],
        h: &[f64],
        c: &[f64],
        t: usize,
        video: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let mut vars = DecoderVars::load(&mut g, store, false)?;
        vars.fault = fault;
        let s = g.input(s.to_vec());
        let w = g.input(w.to_vec());
        let state = DecoderState {
            h: g.input(h.to_vec()),
            c: g.input(c.to_vec()),
            t,
        };
        let v = video.map(|v| g.input(v.to_vec()));
        let next = semantic_lstm_step(&mut g, &vars, s, w, &state, v)?;
        Ok((g.value(next.h).to_vec(), g.value(next.c).to_vec()))
    }
}
