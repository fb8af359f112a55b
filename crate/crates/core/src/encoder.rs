//! Per-modality two-layer LSTM encoders and the semantic attribute detectors.

use crate::autodiff::{Graph, Var};
use crate::corpus::{FeatureSequence, Modality};
use crate::error::{MsanError, Result};
use crate::model::Gate;
use crate::params::ParamStore;

pub fn layer_prefix(m: Modality, layer: usize) -> String {
    format!("enc.{}.l{layer}", m.key())
}

pub fn detector_prefix(m: Modality) -> String {
    format!("det.{}", m.key())
}

/// Parameters of one standard LSTM layer on a graph, indexed by [`Gate`] order.
#[derive(Debug, Clone)]
pub struct LstmLayerVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
    pub hidden: usize,
}

impl LstmLayerVars {
    pub fn load<'a>(g: &mut Graph<'a>, store: &'a ParamStore, prefix: &str) -> Result<Self> {
        let mut load = |kind: &str| -> Result<[Var; 4]> {
            let mut out = Vec::with_capacity(4);
            for gate in Gate::ALL {
                out.push(g.param(store, &format!("{prefix}.{kind}_{}", gate.key()))?);
            }
            Ok([out[0], out[1], out[2], out[3]])
        };
        let w = load("w")?;
        let u = load("u")?;
        let b = load("b")?;
        let hidden = store.get(&format!("{prefix}.b_i"))?.len();
        Ok(LstmLayerVars { w, u, b, hidden })
    }
}

/// Combines gate pre-activations `[i, f, o, c~]` with the previous cell:
/// `c' = σ(i) ⊙ tanh(c~) + σ(f) ⊙ c`, `h' = σ(o) ⊙ tanh(c')`.
pub fn combine_gates(g: &mut Graph<'_>, pre: [Var; 4], c_prev: Var) -> (Var, Var) {
    let i = g.sigmoid(pre[0]);
    let f = g.sigmoid(pre[1]);
    let o = g.sigmoid(pre[2]);
    let cand = g.tanh(pre[3]);
    let ic = g.mul(i, cand);
    let fc = g.mul(f, c_prev);
    let c = g.add(ic, fc);
    let tc = g.tanh(c);
    let h = g.mul(o, tc);
    (h, c)
}

pub fn lstm_cell(g: &mut Graph<'_>, layer: &LstmLayerVars, x: Var, h: Var, c: Var) -> (Var, Var) {
    let mut pre = [x; 4];
    for k in 0..4 {
        let wx = g.matvec(layer.w[k], x);
        let uh = g.matvec(layer.u[k], h);
        pre[k] = g.add_n(&[wx, uh, layer.b[k]]);
    }
    combine_gates(g, pre, c)
}

/// One LSTM step from values; `prefix` names a layer such as `enc.frames.l1`.
pub fn lstm_step(
    store: &ParamStore,
    prefix: &str,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.iter().chain(c).any(|v| !v.is_finite()) {
        return Err(MsanError::NonFinite(format!("{prefix} state")));
    }
    let mut g = Graph::new();
    let layer = LstmLayerVars::load(&mut g, store, prefix)?;
    let (n, d) = g.shape(layer.w[0]);
    if x.len() != d || h.len() != n || c.len() != n {
        return Err(MsanError::dim(
            "lstm_step",
            format!("x[{d}], h[{n}], c[{n}]"),
            format!("x[{}], h[{}], c[{}]", x.len(), h.len(), c.len()),
        ));
    }
    let xv = g.input(x.to_vec());
    let hv = g.input(h.to_vec());
    let cv = g.input(c.to_vec());
    let (h2, c2) = lstm_cell(&mut g, &layer, xv, hv, cv);
    let (h2, c2) = (g.value(h2).to_vec(), g.value(c2).to_vec());
    if h2.iter().chain(&c2).any(|v| !v.is_finite()) {
        return Err(MsanError::NonFinite(format!("{prefix} step")));
    }
    Ok((h2, c2))
}

#[derive(Debug, Clone)]
pub struct StreamEncoderVars {
    pub layers: [LstmLayerVars; 2],
}

impl StreamEncoderVars {
    pub fn load<'a>(g: &mut Graph<'a>, store: &'a ParamStore, m: Modality) -> Result<Self> {
        Ok(StreamEncoderVars {
            layers: [
                LstmLayerVars::load(g, store, &layer_prefix(m, 1))?,
                LstmLayerVars::load(g, store, &layer_prefix(m, 2))?,
            ],
        })
    }
}

/// Runs the two-layer stack over the sequence from a zero state and returns
/// the final top-layer hidden state.
pub fn encode_stream(g: &mut Graph<'_>, vars: &StreamEncoderVars, seq: &FeatureSequence) -> Result<Var> {
    if seq.is_empty() {
        return Err(MsanError::Usage("cannot encode an empty feature sequence".into()));
    }
    let n = vars.layers[0].hidden;
    let mut h = [g.input(vec![0.0; n]), g.input(vec![0.0; n])];
    let mut c = h;
    for frame in seq.steps() {
        let x = g.input(frame.clone());
        let (h1, c1) = lstm_cell(g, &vars.layers[0], x, h[0], c[0]);
        let (h2, c2) = lstm_cell(g, &vars.layers[1], h1, h[1], c[1]);
        h = [h1, h2];
        c = [c1, c2];
    }
    Ok(h[1])
}

#[derive(Debug, Clone)]
pub struct DetectorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl DetectorVars {
    pub fn load<'a>(g: &mut Graph<'a>, store: &'a ParamStore, m: Modality) -> Result<Self> {
        let p = detector_prefix(m);
        Ok(DetectorVars {
            w1: g.param(store, &format!("{p}.w1"))?,
            b1: g.param(store, &format!("{p}.b1"))?,
            w2: g.param(store, &format!("{p}.w2"))?,
            b2: g.param(store, &format!("{p}.b2"))?,
        })
    }
}

/// `σ(W2 tanh(W1 v + b1) + b2)`.
pub fn detect_semantics(g: &mut Graph<'_>, det: &DetectorVars, v_m: Var) -> Var {
    let a = g.matvec(det.w1, v_m);
    let a = g.add(a, det.b1);
    let hdn = g.tanh(a);
    let z = g.matvec(det.w2, hdn);
    let z = g.add(z, det.b2);
    g.sigmoid(z)
}

/// Mean binary cross-entropy over the modality detectors plus
/// `alpha * sum ||W||^2` over `weights`.
pub fn detector_loss(
    g: &mut Graph<'_>,
    semantics: &[Var],
    labels: &[f64],
    alpha: f64,
    weights: &[Var],
) -> Result<Var> {
    if semantics.is_empty() {
        return Err(MsanError::Usage("detector loss needs at least one modality".into()));
    }
    let terms: Vec<Var> = semantics.iter().map(|&s| g.bce(s, labels.to_vec())).collect();
    let total = g.add_n(&terms);
    let mean = g.scale(total, 1.0 / semantics.len() as f64);
    if weights.is_empty() || alpha == 0.0 {
        return Ok(mean);
    }
    let norms: Vec<Var> = weights.iter().map(|&w| g.squared_norm(w)).collect();
    let reg = g.add_n(&norms);
    let reg = g.scale(reg, alpha);
    Ok(g.add(mean, reg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::tensor::{sigmoid_scalar, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer_store(d: usize, n: usize, rng: Option<&mut ChaCha8Rng>) -> ParamStore {
        let mut s = ParamStore::new();
        let draw = |len: usize, rng: &mut Option<&mut ChaCha8Rng>| -> Vec<f64> {
            match rng {
                Some(r) => (0..len).map(|_| r.gen_range(-0.8..0.8)).collect(),
                None => vec![0.0; len],
            }
        };
        let mut rng = rng;
        for gate in Gate::ALL {
            let k = gate.key();
            s.insert(format!("L.w_{k}"), Tensor::matrix(n, d, draw(n * d, &mut rng)).unwrap());
            s.insert(format!("L.u_{k}"), Tensor::matrix(n, n, draw(n * n, &mut rng)).unwrap());
            s.insert(format!("L.b_{k}"), Tensor::vector(draw(n, &mut rng)));
        }
        s
    }

    /// Scalar-loop reference LSTM step, independent of the graph.
    fn reference_step(s: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let mut pre = vec![vec![0.0; n]; 4];
        for (gi, gate) in Gate::ALL.iter().enumerate() {
            let w = s.get(&format!("L.w_{}", gate.key())).unwrap();
            let u = s.get(&format!("L.u_{}", gate.key())).unwrap();
            let b = s.get(&format!("L.b_{}", gate.key())).unwrap();
            for r in 0..n {
                let mut acc = b.data()[r];
                for (j, xj) in x.iter().enumerate() {
                    acc += w.get2(r, j) * xj;
                }
                for (j, hj) in h.iter().enumerate() {
                    acc += u.get2(r, j) * hj;
                }
                pre[gi][r] = acc;
            }
        }
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
        (h2, c2)
    }

    #[test]
    fn zero_params_zero_state() {
        let s = layer_store(3, 4, None);
        let (h, c) = lstm_step(&s, "L", &[1.0, -2.0, 3.0], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_halve_the_cell() {
        let s = layer_store(2, 3, None);
        let c0 = [0.4, -1.0, 2.0];
        let (h, c) = lstm_step(&s, "L", &[1.0, 1.0], &[0.0; 3], &c0).unwrap();
        for r in 0..3 {
            assert!((c[r] - 0.5 * c0[r]).abs() < 1e-15);
            assert!((h[r] - 0.5 * (0.5 * c0[r]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_matches_scalar_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let s = layer_store(5, 4, Some(&mut rng));
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = lstm_step(&s, "L", &x, &h, &c).unwrap();
            let want = reference_step(&s, &x, &h, &c);
            for (a, b) in got.0.iter().chain(&got.1).zip(want.0.iter().chain(&want.1)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nan_state_is_numeric_error() {
        let s = layer_store(1, 1, None);
        assert!(matches!(
            lstm_step(&s, "L", &[0.0], &[f64::NAN], &[0.0]),
            Err(MsanError::NonFinite(_))
        ));
    }

    #[test]
    fn lstm_step_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = layer_store(3, 4, Some(&mut rng));
        let r = grad_check(&s, 1e-4, |g, p| {
            let layer = LstmLayerVars::load(g, p, "L")?;
            let x = g.input(vec![0.3, -0.7, 0.9]);
            let h = g.input(vec![0.1, 0.2, -0.3, 0.4]);
            let c = g.input(vec![-0.5, 0.5, 0.25, 1.0]);
            let (h2, c2) = lstm_cell(g, &layer, x, h, c);
            let (h3, _) = lstm_cell(g, &layer, x, h2, c2);
            Ok(g.sum(h3))
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let mut g = Graph::new();
        let s = g.input(vec![0.5]);
        let l = detector_loss(&mut g, &[s], &[1.0], 0.0, &[]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_has_vanishing_loss() {
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-8] {
            let mut g = Graph::new();
            let s = g.input(vec![1.0 - eps, eps]);
            let loss = detector_loss(&mut g, &[s], &[1.0, 0.0], 0.0, &[]).unwrap();
            let l = g.scalar(loss);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn clamped_extremes_stay_finite() {
        let mut g = Graph::new();
        let s = g.input(vec![0.0, 1.0]);
        let l = detector_loss(&mut g, &[s], &[1.0, 0.0], 0.0, &[]).unwrap();
        let v = g.scalar(l);
        assert!(v.is_finite() && (v - 2.0 * -(1e-12f64).ln()).abs() < 1e-3);
        let adj = g.backward(l).unwrap();
        assert!(adj.get(s).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn perfect_labels_leave_only_regularizer() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap());
        let mut g = Graph::new();
        let s = g.input(vec![1.0, 0.0]);
        let w = g.param(&store, "w").unwrap();
        let l = detector_loss(&mut g, &[s], &[1.0, 0.0], 0.5, &[w]).unwrap();
        let clamp_term = -2.0 * (1.0f64 - 1e-12).ln();
        assert!((g.scalar(l) - 0.5 * 0.3 - clamp_term).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let k = rng.gen_range(1..8);
            let s1: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.99)).collect();
            let s2: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.99)).collect();
            let y: Vec<f64> = (0..k).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let oracle = |s: &[f64]| -> f64 {
                let mut acc = 0.0;
                for i in 0..k {
                    acc -= y[i] * s[i].ln() + (1.0 - y[i]) * (1.0 - s[i]).ln();
                }
                acc
            };
            let want = 0.5 * (oracle(&s1) + oracle(&s2));
            let mut g = Graph::new();
            let a = g.input(s1.clone());
            let b = g.input(s2.clone());
            let l = detector_loss(&mut g, &[a, b], &y, 0.0, &[]).unwrap();
            assert!((g.scalar(l) - want).abs() < 1e-12);
        }
    }
}
