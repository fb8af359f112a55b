//! Greedy and beam-search decoding over any incremental next-token scorer.
//!
//! `max_len` bounds the number of content tokens. A hypothesis still alive
//! after `max_len` tokens is closed with a forced EOS step, so every returned
//! sequence carries the log-probability of its terminating EOS and can be
//! re-scored by the caption loss.

use std::cmp::Ordering;

use crate::autodiff::Graph;
use crate::decoder::{self, DecoderState, SemanticsInput};
use crate::error::{MsanError, Result};
use crate::model::{Net, SemanticDistribution, VideoEncoding};
use crate::tensor::log_softmax_slice;
use crate::vocab::{BOS, EOS, PAD};

/// Incremental scorer: consumes the previous token and returns the next
/// state with log-probabilities over the vocabulary.
pub trait StepScorer {
    type State: Clone;
    fn initial(&self) -> Result<Self::State>;
    fn advance(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub max_len: usize,
    /// Tokens never emitted.
    pub banned: Vec<usize>,
}

impl SearchOptions {
    pub fn new(max_len: usize) -> Self {
        SearchOptions {
            max_len,
            banned: vec![PAD, BOS],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Emitted tokens without BOS and EOS.
    pub tokens: Vec<usize>,
    /// Total log-probability, including the EOS step.
    pub logprob: f64,
    /// Whether EOS was chosen rather than forced by the length limit.
    pub finished: bool,
}

fn check(opts: &SearchOptions) -> Result<()> {
    if opts.max_len == 0 {
        return Err(MsanError::Usage("max_len must be at least 1".into()));
    }
    if opts.banned.contains(&EOS) {
        return Err(MsanError::Usage("EOS cannot be banned".into()));
    }
    Ok(())
}

fn allowed(opts: &SearchOptions, v: usize) -> impl Iterator<Item = usize> + '_ {
    (0..v).filter(move |t| !opts.banned.contains(t))
}

/// Argmax at every step, lowest id on ties.
pub fn greedy<S: StepScorer>(scorer: &S, opts: &SearchOptions) -> Result<Decoded> {
    check(opts)?;
    let mut state = scorer.initial()?;
    let mut input = BOS;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    loop {
        let (next, lp) = scorer.advance(&state, input)?;
        if tokens.len() == opts.max_len {
            return Ok(Decoded {
                tokens,
                logprob: logprob + lp[EOS],
                finished: false,
            });
        }
        let mut best = EOS;
        for t in allowed(opts, lp.len()) {
            if lp[t] > lp[best] || (lp[t] == lp[best] && t < best) {
                best = t;
            }
        }
        logprob += lp[best];
        if best == EOS {
            return Ok(Decoded {
                tokens,
                logprob,
                finished: true,
            });
        }
        tokens.push(best);
        state = next;
        input = best;
    }
}

#[derive(Clone)]
struct Hyp<St> {
    /// Emitted tokens; a finished hypothesis ends with EOS.
    tokens: Vec<usize>,
    logprob: f64,
    state: St,
    finished: bool,
    forced: bool,
}

fn rank<St>(a: &Hyp<St>, b: &Hyp<St>) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search by total log-probability without length normalization.
/// Ties are broken by the lexicographically smaller token sequence.
pub fn beam_search<S: StepScorer>(scorer: &S, beam: usize, opts: &SearchOptions) -> Result<Decoded> {
    check(opts)?;
    if beam == 0 {
        return Err(MsanError::Usage("beam size must be at least 1".into()));
    }
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        logprob: 0.0,
        state: scorer.initial()?,
        finished: false,
        forced: false,
    }];
    let mut pool: Vec<Hyp<S::State>> = Vec::new();
    while !alive.is_empty() {
        let mut cands = Vec::new();
        for h in &alive {
            let input = h.tokens.last().copied().unwrap_or(BOS);
            let (next, lp) = scorer.advance(&h.state, input)?;
            let at_limit = h.tokens.len() == opts.max_len;
            for t in allowed(opts, lp.len()) {
                if at_limit && t != EOS {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                cands.push(Hyp {
                    tokens,
                    logprob: h.logprob + lp[t],
                    state: next.clone(),
                    finished: t == EOS,
                    forced: at_limit,
                });
            }
        }
        cands.sort_by(rank);
        cands.truncate(beam);
        alive.clear();
        for c in cands {
            if c.finished {
                pool.push(c);
            } else {
                alive.push(c);
            }
        }
        // Extensions only lower the score, so a pooled hypothesis at least as
        // good as every live one cannot be overtaken.
        if let (Some(best), Some(top)) = (pool.iter().min_by(|a, b| rank(a, b)), alive.first()) {
            if best.logprob > top.logprob {
                break;
            }
        }
    }
    let best = pool
        .into_iter()
        .min_by(rank)
        .ok_or_else(|| MsanError::Usage("beam search produced no hypothesis".into()))?;
    let mut tokens = best.tokens;
    tokens.pop();
    Ok(Decoded {
        tokens,
        logprob: best.logprob,
        finished: !best.forced,
    })
}

/// Total log-probability of `tokens` followed by EOS.
pub fn score_sequence<S: StepScorer>(scorer: &S, tokens: &[usize]) -> Result<f64> {
    let mut state = scorer.initial()?;
    let mut input = BOS;
    let mut total = 0.0;
    for &t in tokens.iter().chain([EOS].iter()) {
        let (next, lp) = scorer.advance(&state, input)?;
        total += lp[t];
        state = next;
        input = t;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub t: usize,
}

/// The trained decoder conditioned on one video.
pub struct MsanScorer<'a> {
    pub net: Net<'a, 'a>,
    pub encoding: &'a VideoEncoding,
    pub semantics: &'a [SemanticDistribution],
}

impl<'a> MsanScorer<'a> {
    pub fn new(net: Net<'a, 'a>, encoding: &'a VideoEncoding, semantics: &'a [SemanticDistribution]) -> Self {
        MsanScorer {
            net,
            encoding,
            semantics,
        }
    }
}

impl StepScorer for MsanScorer<'_> {
    type State = StepState;

    fn initial(&self) -> Result<StepState> {
        let n = self.net.config.hidden;
        Ok(StepState {
            h: vec![0.0; n],
            c: vec![0.0; n],
            t: 1,
        })
    }

    fn advance(&self, state: &StepState, token: usize) -> Result<(StepState, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.net.decoder_vars(&mut g)?;
        let sem = if self.net.config.uses_attributes() {
            SemanticsInput::Attend(self.semantics.iter().map(|s| g.input(s.probs.clone())).collect())
        } else {
            let k = self.net.config.num_attributes;
            SemanticsInput::Fixed(g.input(vec![1.0 / k as f64; k]))
        };
        let prev = DecoderState {
            h: g.input(state.h.clone()),
            c: g.input(state.c.clone()),
            t: state.t,
        };
        let s_t = decoder::step_semantics(&mut g, &vars, &sem, prev.h)?;
        let w = g.column(vars.embed, token);
        let video = (state.t == 1).then(|| g.input(self.encoding.video.clone()));
        let next = decoder::semantic_lstm_step(&mut g, &vars, s_t, w, &prev, video)?;
        let logits = decoder::step_logits(&mut g, &vars, next.h);
        let lp = log_softmax_slice(g.value(logits));
        if lp.iter().any(|x| x.is_nan()) {
            return Err(MsanError::NonFinite(format!("decoder step {}", state.t)));
        }
        Ok((
            StepState {
                h: g.value(next.h).to_vec(),
                c: g.value(next.c).to_vec(),
                t: state.t + 1,
            },
            lp,
        ))
    }
}
