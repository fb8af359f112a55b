//! Built-in numerical checks run by `msan selfcheck`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::grad_check;
use crate::corpus::{FeatureSequence, Modality, VideoRecord};
use crate::decoder::{attend_values, ensemble_weight, reference};
use crate::error::Result;
use crate::metrics::{bleu, cider_d_per_video};
use crate::model::{Fault, ModelConfig, Net, SemanticDistribution, StreamSpec, VideoEncoding};
use crate::search::{beam_search, greedy, MsanScorer, SearchOptions};
use crate::tensor::Tensor;
use crate::train::joint_loss;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub results: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect()
    }
}

fn rvec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, rvec(rng, r * c, -1.0, 1.0)).expect("positive shape")
}

/// A small two-stream model layout for checks.
pub fn small_model(nh: usize, nx: usize, k: usize, nf: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        streams: vec![
            StreamSpec { modality: Modality::Frames, input_dim: 3 },
            StreamSpec { modality: Modality::Flow, input_dim: 3 },
        ],
        attribute_modalities: vec![Modality::Frames, Modality::Flow],
        enc_hidden: 4,
        det_hidden: 4,
        hidden: nh,
        factors: nf,
        embed_dim: nx,
        attn_dim: nh,
        num_attributes: k,
        vocab_size,
    }
}

pub fn random_record(rng: &mut ChaCha8Rng, model: &ModelConfig, steps: usize) -> VideoRecord {
    let streams = model
        .streams
        .iter()
        .map(|s| {
            let seq = (0..steps).map(|_| rvec(rng, s.input_dim, -1.0, 1.0)).collect();
            (s.modality, FeatureSequence(seq))
        })
        .collect();
    VideoRecord {
        id: "check".into(),
        streams,
        captions: vec![],
    }
}

/// Random inputs for a decoder-only scorer.
pub fn random_conditioning(rng: &mut ChaCha8Rng, model: &ModelConfig) -> (VideoEncoding, Vec<SemanticDistribution>) {
    let video = rvec(rng, model.video_dim(), -1.0, 1.0);
    let sem = model
        .attribute_modalities
        .iter()
        .map(|&m| SemanticDistribution {
            modality: m,
            probs: rvec(rng, model.num_attributes, 0.0, 1.0),
        })
        .collect();
    (
        VideoEncoding {
            per_modality: Vec::new(),
            video,
        },
        sem,
    )
}

/// Central-difference check of the full joint loss.
pub fn check_joint_gradient(seed: u64, fault: Option<Fault>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = small_model(8, 6, 4, 5, 9);
    // Unit-scale parameters keep detector outputs distinct, so attention
    // gradients stay well above the central-difference roundoff floor.
    let params = model.random_params(&mut rng, 1.0);
    let record = random_record(&mut rng, &model, 3);
    let labels: Vec<f64> = (0..4).map(|i| (i % 2) as f64).collect();
    let tokens = [4, 6, 5];
    let check = grad_check(&params, 1e-4, |g, p| {
        let net = Net::new(&model, p).with_fault(fault);
        Ok(joint_loss(&net, g, &record, &tokens, &labels, 0.01, None)?.total)
    })?;
    Ok(check.max_relative_error)
}

/// Worst absolute deviation of the basis-member sum and of the factorized
/// step from their explicit counterparts.
pub fn check_factorization(instances: usize, seed: u64, fault: Option<Fault>) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lin, mut step) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (nh, nx, nf, k) = (
            rng.gen_range(1..=16),
            rng.gen_range(1..=16),
            rng.gen_range(1..=16),
            rng.gen_range(1..=8),
        );
        let (a, b, c) = (rmat(&mut rng, nh, nf), rmat(&mut rng, nf, k), rmat(&mut rng, nf, nx));
        let s = rvec(&mut rng, k, 0.0, 1.0);
        let members = reference::member_matrices(&a, &b, &c)?;
        let sum = reference::ensemble_sum(&s, &members);
        let direct = ensemble_weight(&Tensor::vector(s.clone()), &a, &b, &c)?;
        for (x, y) in sum.data().iter().zip(direct.data()) {
            lin = lin.max((x - y).abs());
        }

        let model = small_model(nh, nx, k, nf, 5);
        let store = model.random_params(&mut rng, 0.5);
        let w = rvec(&mut rng, nx, -1.0, 1.0);
        let h = rvec(&mut rng, nh, -1.0, 1.0);
        let cc = rvec(&mut rng, nh, -1.0, 1.0);
        let v = rvec(&mut rng, model.video_dim(), -1.0, 1.0);
        for (t, video) in [(1, Some(v.as_slice())), (2, None)] {
            let (h1, c1) = reference::factorized_step(&store, fault, &s, &w, &h, &cc, t, video)?;
            let (h2, c2) = reference::explicit_step(&store, &s, &w, &h, &cc, video)?;
            for (x, y) in h1.iter().zip(&h2).chain(c1.iter().zip(&c2)) {
                step = step.max((x - y).abs());
            }
        }
    }
    Ok((lin, step))
}

/// Attention over random draws: worst simplex violation, whether a single
/// distribution is returned exactly, and worst deviation from uniform for
/// identical distributions.
pub fn check_attention(draws: usize, seed: u64) -> Result<(f64, bool, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut simplex, mut single, mut uniform) = (0.0f64, true, 0.0f64);
    for i in 0..draws {
        let k = rng.gen_range(1..=8);
        let nh = rng.gen_range(1..=8);
        let scale = [0.1, 1.0, 10.0, 100.0][i % 4];
        let model = small_model(nh, 2, k, 2, 5);
        let store = model.random_params(&mut rng, scale);
        let h = rvec(&mut rng, nh, -scale, scale);
        let l = rng.gen_range(1..=4);
        let sem: Vec<Vec<f64>> = (0..l).map(|_| rvec(&mut rng, k, 0.0, 1.0)).collect();
        let (s_t, a) = attend_values(&store, &h, &sem)?;
        if a.iter().any(|&w| w < 0.0) {
            simplex = f64::INFINITY;
        }
        simplex = simplex.max((a.iter().sum::<f64>() - 1.0).abs());
        if l == 1 && s_t != sem[0] {
            single = false;
        }
        let same = vec![sem[0].clone(); l];
        let (_, a) = attend_values(&store, &h, &same)?;
        for w in a {
            uniform = uniform.max((w - 1.0 / l as f64).abs());
        }
    }
    Ok((simplex, single, uniform))
}

/// Number of random models on which beam search with width 1 disagrees with greedy decoding.
pub fn check_beam_one(models: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..models {
        let model = small_model(6, 4, 3, 4, rng.gen_range(5..=9));
        let params = model.random_params(&mut rng, 1.0);
        let (enc, sem) = random_conditioning(&mut rng, &model);
        let scorer = MsanScorer::new(Net::new(&model, &params), &enc, &sem);
        let opts = SearchOptions::new(6);
        if greedy(&scorer, &opts)? != beam_search(&scorer, 1, &opts)? {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Worst deviation of the metric implementations from hand-computed values.
pub fn check_metric_oracles() -> Result<f64> {
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let mut worst = 0.0f64;
    let b = bleu(&[t("the cat sat")], &[vec![t("the cat sat down")]], 1)?;
    worst = worst.max((b - (-1.0f64 / 3.0).exp()).abs());
    for n in 1..=4 {
        worst = worst.max((bleu(&[t("a man is singing")], &[vec![t("a man is singing")]], n)? - 1.0).abs());
    }
    let per = cider_d_per_video(&[t("a b b"), t("c")], &[vec![t("a b")], vec![t("a c")]])?;
    let pen = (-1.0f64 / 72.0).exp();
    worst = worst.max((per[0] - (0.5 + 0.5f64.sqrt()) / 4.0 * pen * 10.0).abs());
    worst = worst.max((per[1] - 0.25 * pen * 10.0).abs());
    Ok(worst)
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_selfcheck(fault: Option<Fault>) -> SelfCheckReport {
    let mut results = Vec::new();
    results.push(timed("gradient", || {
        let e = check_joint_gradient(7, fault)?;
        Ok((e < 1e-4, format!("max relative error {e:.3e} (limit 1e-4)")))
    }));
    results.push(timed("factorization-equivalence", || {
        let (lin, step) = check_factorization(100, 11, fault)?;
        Ok((
            lin < 1e-10 && step < 1e-10,
            format!("ensemble linearity {lin:.3e}, factorized vs explicit step {step:.3e} (limit 1e-10)"),
        ))
    }));
    results.push(timed("attention-simplex", || {
        let (simplex, single, uniform) = check_attention(1000, 13)?;
        Ok((
            simplex < 1e-6 && single && uniform < 1e-9,
            format!("simplex {simplex:.3e}, single exact {single}, uniform {uniform:.3e}"),
        ))
    }));
    results.push(timed("beam1-equals-greedy", || {
        let m = check_beam_one(50, 17)?;
        Ok((m == 0, format!("{m} of 50 models disagree")))
    }));
    results.push(timed("metric-oracles", || {
        let e = check_metric_oracles()?;
        Ok((e < 1e-6, format!("max deviation {e:.3e} (limit 1e-6)")))
    }));
    SelfCheckReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn clean_build_passes() {
        let r = run_selfcheck(None);
        assert!(r.passed(), "{:?}", r.results);
    }

    #[test]
    fn flipped_hidden_factor_is_caught() {
        let r = run_selfcheck(Some(Fault::FlipHiddenFactor));
        assert_eq!(r.failures(), vec!["factorization-equivalence"]);
    }

    #[test]
    fn graph_and_values_agree_on_fault_free_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = small_model(5, 3, 4, 2, 7);
        let params = model.random_params(&mut rng, 0.5);
        let record = random_record(&mut rng, &model, 2);
        let net = Net::new(&model, &params);
        let (enc, sem) = net.analyze(&record).unwrap();
        let mut g = Graph::new();
        let e = net.encode(&mut g, &record).unwrap();
        let s = net.semantics(&mut g, &e).unwrap();
        let l = net.caption_loss(&mut g, &e, &s, &[4, 5], None).unwrap();
        let direct = g.scalar(l);
        assert!((net.caption_loss_value(&enc, &sem, &[4, 5]).unwrap() - direct).abs() < 1e-12);
    }
}
