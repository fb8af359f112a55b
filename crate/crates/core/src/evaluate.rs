//! Caption generation for a corpus and scoring against its references.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, VideoRecord};
use crate::error::{MsanError, Result};
use crate::metrics::EvaluationReport;
use crate::model::Net;
use crate::search::{beam_search, greedy, Decoded, MsanScorer, SearchOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

pub fn decode_record(net: &Net<'_, '_>, record: &VideoRecord, strategy: Strategy, opts: &SearchOptions) -> Result<Decoded> {
    let (encoding, semantics) = net.analyze(record)?;
    let scorer = MsanScorer::new(*net, &encoding, &semantics);
    match strategy {
        Strategy::Greedy => greedy(&scorer, opts),
        Strategy::Beam(b) => beam_search(&scorer, b, opts),
    }
}

/// Decodes every record in parallel; results keep corpus order.
pub fn caption_corpus(ck: &Checkpoint, corpus: &Corpus, strategy: Strategy) -> Result<Vec<(Decoded, CaptionLine)>> {
    let model = ck.msan();
    let net = model.net();
    let dims: Vec<_> = ck.model.streams.iter().map(|s| (s.modality, s.input_dim)).collect();
    if !corpus.is_empty() && corpus.stream_dims() != dims {
        return Err(MsanError::Schema(format!(
            "corpus streams {:?} do not match the checkpoint's {:?}",
            corpus.stream_dims(),
            dims
        )));
    }
    let opts = SearchOptions::new(ck.train_config.max_caption_len);
    corpus
        .records
        .par_iter()
        .map(|r| {
            let d = decode_record(&net, r, strategy, &opts)?;
            let line = CaptionLine {
                id: r.id.clone(),
                caption: ck.vocab.decode(&d.tokens).join(" "),
                logprob: d.logprob,
            };
            Ok((d, line))
        })
        .collect()
}

pub fn evaluate_lines(corpus: &Corpus, lines: &[CaptionLine]) -> Result<EvaluationReport> {
    let ids: Vec<String> = lines.iter().map(|l| l.id.clone()).collect();
    let cands: Vec<Vec<String>> = lines
        .iter()
        .map(|l| l.caption.split_whitespace().map(String::from).collect())
        .collect();
    let refs: Vec<Vec<Vec<String>>> = corpus.records.iter().map(|r| r.captions.clone()).collect();
    EvaluationReport::compute(&ids, &cands, &refs)
}

/// Beam-searches a caption per video and scores the results.
pub fn evaluate(ck: &Checkpoint, corpus: &Corpus, beam: usize) -> Result<(EvaluationReport, Vec<CaptionLine>)> {
    let lines: Vec<CaptionLine> = caption_corpus(ck, corpus, Strategy::Beam(beam))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    Ok((evaluate_lines(corpus, &lines)?, lines))
}
