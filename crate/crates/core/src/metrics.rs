//! Corpus BLEU@1..4 and CIDEr-D.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MsanError, Result};

pub const MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

type Gram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Gram<'_>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_pairing(cands: usize, refs: usize) -> Result<()> {
    if cands == 0 {
        return Err(MsanError::Usage("no candidates to score".into()));
    }
    if cands != refs {
        return Err(MsanError::Usage(format!("{cands} candidates but {refs} reference sets")));
    }
    Ok(())
}

/// Sufficient statistics of one segment; corpus BLEU sums them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_N],
    pub totals: [usize; MAX_N],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn compute(cand: &[String], refs: &[Vec<String>]) -> BleuStats {
        let mut s = BleuStats {
            cand_len: cand.len(),
            ..BleuStats::default()
        };
        // Closest reference length, the shorter one on ties.
        s.ref_len = refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=MAX_N {
            let c = ngram_counts(cand, n);
            let mut max_ref: HashMap<Gram<'_>, usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            s.matches[n - 1] = c.iter().map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0))).sum();
            s.totals[n - 1] = cand.len().saturating_sub(n - 1);
        }
        s
    }

    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_N {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU@n from these statistics, without smoothing.
    pub fn score(&self, n: usize) -> f64 {
        assert!((1..=MAX_N).contains(&n), "BLEU order {n} out of range");
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64).min(0.0).exp();
        bp * (log_sum / n as f64).exp()
    }
}

pub fn bleu(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], n: usize) -> Result<f64> {
    check_pairing(cands.len(), refs.len())?;
    if !(1..=MAX_N).contains(&n) {
        return Err(MsanError::Usage(format!("BLEU order must be in 1..={MAX_N}, got {n}")));
    }
    let mut total = BleuStats::default();
    for (c, r) in cands.iter().zip(refs) {
        total.add(&BleuStats::compute(c, r));
    }
    Ok(total.score(n))
}

/// Document frequencies over the reference sets of a corpus.
#[derive(Debug, Clone)]
pub struct CiderD {
    df: HashMap<Vec<String>, f64>,
    log_docs: f64,
}

struct TfIdf {
    vecs: Vec<HashMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

impl CiderD {
    pub fn new(refs: &[Vec<Vec<String>>]) -> CiderD {
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for set in refs {
            let mut seen: HashSet<&[String]> = HashSet::new();
            for r in set {
                for n in 1..=MAX_N {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        CiderD {
            df,
            log_docs: (refs.len() as f64).ln(),
        }
    }

    fn tfidf(&self, tokens: &[String]) -> TfIdf {
        let mut vecs = Vec::with_capacity(MAX_N);
        let mut norms = Vec::with_capacity(MAX_N);
        for n in 1..=MAX_N {
            let v: HashMap<Vec<String>, f64> = ngram_counts(tokens, n)
                .into_iter()
                .map(|(g, tf)| {
                    let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                    (g.to_vec(), tf as f64 * (self.log_docs - df.ln()))
                })
                .collect();
            norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
            vecs.push(v);
        }
        TfIdf {
            vecs,
            norms,
            len: tokens.len(),
        }
    }

    fn sim(hyp: &TfIdf, r: &TfIdf) -> [f64; MAX_N] {
        let delta = hyp.len as f64 - r.len as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut out = [0.0; MAX_N];
        for n in 0..MAX_N {
            let mut val = 0.0;
            for (g, h) in &hyp.vecs[n] {
                if let Some(rv) = r.vecs[n].get(g) {
                    val += h.min(*rv) * rv;
                }
            }
            if hyp.norms[n] != 0.0 && r.norms[n] != 0.0 {
                val /= hyp.norms[n] * r.norms[n];
            }
            out[n] = val * penalty;
        }
        out
    }

    /// CIDEr-D of one candidate against its own references.
    pub fn score(&self, cand: &[String], refs: &[Vec<String>]) -> f64 {
        if refs.is_empty() {
            return 0.0;
        }
        let hyp = self.tfidf(cand);
        let mut total = 0.0;
        for r in refs {
            let s = Self::sim(&hyp, &self.tfidf(r));
            total += s.iter().sum::<f64>() / MAX_N as f64;
        }
        total / refs.len() as f64 * 10.0
    }
}

pub fn cider_d_per_video(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<Vec<f64>> {
    check_pairing(cands.len(), refs.len())?;
    let c = CiderD::new(refs);
    Ok(cands.iter().zip(refs).map(|(h, r)| c.score(h, r)).collect())
}

/// Corpus CIDEr-D: the mean of per-video scores.
pub fn cider_d(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    let per = cider_d_per_video(cands, refs)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub id: String,
    pub candidate: String,
    pub bleu_stats: BleuStats,
    pub bleu4: f64,
    pub cider_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// BLEU@n keyed by n.
    pub bleu: BTreeMap<usize, f64>,
    pub cider_d: f64,
    pub candidates: usize,
    pub references: usize,
    pub per_video: Vec<VideoScore>,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn compute(ids: &[String], cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<Self> {
        check_pairing(cands.len(), refs.len())?;
        if ids.len() != cands.len() {
            return Err(MsanError::Usage("one id per candidate is required".into()));
        }
        let cider = cider_d_per_video(cands, refs)?;
        let mut per_video = Vec::with_capacity(ids.len());
        let mut total = BleuStats::default();
        for i in 0..ids.len() {
            let stats = BleuStats::compute(&cands[i], &refs[i]);
            total.add(&stats);
            per_video.push(VideoScore {
                id: ids[i].clone(),
                candidate: cands[i].join(" "),
                bleu_stats: stats,
                bleu4: stats.score(4),
                cider_d: cider[i],
            });
        }
        Ok(EvaluationReport {
            bleu: (1..=MAX_N).map(|n| (n, total.score(n))).collect(),
            cider_d: cider.iter().sum::<f64>() / cider.len() as f64,
            candidates: cands.len(),
            references: refs.iter().map(Vec::len).sum(),
            per_video,
            notes: vec!["METEOR is not computed".into()],
        })
    }

    /// Corpus scores recomputed from the per-video breakdown.
    pub fn reaggregate(&self) -> (BTreeMap<usize, f64>, f64) {
        let mut total = BleuStats::default();
        for v in &self.per_video {
            total.add(&v.bleu_stats);
        }
        let cider = self.per_video.iter().map(|v| v.cider_d).sum::<f64>() / self.per_video.len().max(1) as f64;
        ((1..=MAX_N).map(|n| (n, total.score(n))).collect(), cider)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: Vec<(String, f64)> = self
            .bleu
            .iter()
            .map(|(n, v)| (format!("BLEU@{n}"), *v))
            .chain([("CIDEr-D".to_string(), self.cider_d)])
            .collect();
        writeln!(out, "{:<10} {:>8}", "metric", "score").unwrap();
        for (name, v) in rows {
            writeln!(out, "{name:<10} {v:>8.4}").unwrap();
        }
        writeln!(out, "{} candidates, {} references", self.candidates, self.references).unwrap();
        for n in &self.notes {
            writeln!(out, "note: {n}").unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,bleu4,cider_d,candidate\n");
        for v in &self.per_video {
            let cand = v.candidate.replace('"', "\"\"");
            writeln!(out, "{},{},{},\"{cand}\"", v.id, v.bleu4, v.cider_d).unwrap();
        }
        out
    }
}
