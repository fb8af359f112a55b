//! The pipeline steps behind each CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::TrainConfig;
use crate::corpus::{load_corpus, Corpus, DataSplits, Modality};
use crate::error::{MsanError, Result};
use crate::evaluate::{caption_corpus, evaluate, CaptionLine, Strategy};
use crate::metrics::EvaluationReport;
use crate::model::Fault;
use crate::selfcheck::{run_selfcheck, SelfCheckReport};
use crate::synthetic::{generate_synthetic_corpus, SynthConfig};
use crate::train::{train, EpochLog};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub versions: Versions,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub msan: String,
    pub checkpoint_format: u32,
}

impl RunManifest {
    fn new(command: &str, config: impl Serialize) -> Self {
        RunManifest {
            command: command.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoint: None,
            seed: None,
            versions: Versions {
                msan: env!("CARGO_PKG_VERSION").into(),
                checkpoint_format: FORMAT_VERSION,
            },
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MsanError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| MsanError::io(path, e))
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSynthArgs {
    pub out: PathBuf,
    pub videos: usize,
    pub attrs: usize,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub dim: usize,
    pub seq_len: usize,
    pub noise: f64,
}

impl Default for GenSynthArgs {
    fn default() -> Self {
        let d = SynthConfig::default();
        GenSynthArgs {
            out: PathBuf::from("data"),
            videos: d.n_videos,
            attrs: d.n_attributes,
            seed: d.seed,
            modalities: d.modalities,
            dim: d.feature_dim,
            seq_len: d.seq_len,
            noise: d.noise,
        }
    }
}

pub fn cmd_gen_synth(args: &GenSynthArgs) -> Result<DataSplits> {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_videos: args.videos,
        n_attributes: args.attrs,
        modalities: args.modalities.clone(),
        feature_dim: args.dim,
        seq_len: args.seq_len,
        noise: args.noise,
        seed: args.seed,
    })?;
    let splits = DataSplits::partition(corpus);
    splits.save_dir(&args.out)?;
    let mut m = RunManifest::new("gen-synth", args);
    m.outputs = DataSplits::FILES.iter().map(|f| args.out.join(f)).collect();
    m.seed = Some(args.seed);
    m.write(&args.out.join("manifest.json"))?;
    Ok(splits)
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub out: PathBuf,
    pub modalities: Option<String>,
    /// `key=value` overrides applied after the config file.
    pub overrides: Vec<String>,
}

/// Preset, then config file, then flag overrides.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let base = TrainConfig::preset(args.preset.as_deref().unwrap_or("synthetic"))?;
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p, base)?,
        None => base,
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| MsanError::Usage(format!("override {kv:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(m) = &args.modalities {
        cfg.set("modalities", m)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn cmd_train(args: &TrainArgs, mut progress: impl FnMut(&EpochLog)) -> Result<TrainResult> {
    let splits = DataSplits::load_dir(&args.data)?;
    let cfg = resolve_train_config(args)?;
    let log_path = sibling(&args.out, "log.jsonl");
    let mut lines = Vec::new();
    let out = train(&splits.train, &splits.val, &cfg, |e| {
        lines.push(serde_json::to_string(e).expect("log serializes"));
        progress(e);
    })?;
    out.checkpoint.save(&args.out)?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(&log_path, text.as_bytes())?;
    let mut m = RunManifest::new("train", &cfg);
    m.inputs = DataSplits::FILES[..2].iter().map(|f| args.data.join(f)).collect();
    m.inputs.extend(args.config.clone());
    m.outputs = vec![args.out.clone(), log_path];
    m.checkpoint = Some(args.out.clone());
    m.seed = Some(cfg.seed);
    m.write(&sibling(&args.out, "manifest.json"))?;
    Ok(TrainResult {
        checkpoint: out.checkpoint,
        log: out.log,
    })
}

/// A JSONL file, or a split directory whose `test.jsonl` is used.
pub fn load_eval_data(path: &Path) -> Result<(Corpus, PathBuf)> {
    let file = if path.is_dir() { path.join(DataSplits::FILES[2]) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(MsanError::Usage(format!("data file {} does not exist", file.display())));
    }
    Ok((load_corpus(&file)?, file))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(MsanError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct CaptionArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub beam: usize,
    pub out: Option<PathBuf>,
}

pub fn captions_to_jsonl(lines: &[CaptionLine]) -> String {
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("caption serializes") + "\n")
        .collect()
}

pub fn cmd_caption(args: &CaptionArgs) -> Result<Vec<CaptionLine>> {
    let ck = load_checkpoint(&args.ckpt)?;
    let (corpus, file) = load_eval_data(&args.data)?;
    let lines: Vec<CaptionLine> = caption_corpus(&ck, &corpus, Strategy::Beam(args.beam))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    if let Some(out) = &args.out {
        write_file(out, captions_to_jsonl(&lines).as_bytes())?;
        let mut m = RunManifest::new("caption", args);
        m.inputs = vec![file];
        m.outputs = vec![out.clone()];
        m.checkpoint = Some(args.ckpt.clone());
        m.seed = Some(ck.train_config.seed);
        m.write(&sibling(out, "manifest.json"))?;
    }
    Ok(lines)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub beam: Option<usize>,
    pub out: PathBuf,
}

pub const REPORT_FILES: [&str; 4] = ["report.json", "report.txt", "per_video.csv", "captions.jsonl"];

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluationReport> {
    let ck = load_checkpoint(&args.ckpt)?;
    let (corpus, file) = load_eval_data(&args.data)?;
    let beam = args.beam.unwrap_or(ck.train_config.beam_size);
    let (report, lines) = evaluate(&ck, &corpus, beam)?;
    let files = REPORT_FILES.map(|f| args.out.join(f));
    write_file(&files[0], report.to_json().as_bytes())?;
    write_file(&files[1], report.to_table().as_bytes())?;
    write_file(&files[2], report.to_csv().as_bytes())?;
    write_file(&files[3], captions_to_jsonl(&lines).as_bytes())?;
    let mut m = RunManifest::new("evaluate", args);
    m.inputs = vec![file];
    m.outputs = files.to_vec();
    m.checkpoint = Some(args.ckpt.clone());
    m.seed = Some(ck.train_config.seed);
    m.write(&args.out.join("manifest.json"))?;
    Ok(report)
}

pub fn cmd_selfcheck(fault: Option<Fault>, mut out: impl std::io::Write) -> Result<SelfCheckReport> {
    let report = run_selfcheck(fault);
    for r in &report.results {
        writeln!(
            out,
            "[{}] {:<26} {} ({:.2}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            r.seconds
        )
        .map_err(|e| MsanError::io("<stdout>", e))?;
    }
    out.flush().map_err(|e| MsanError::io("<stdout>", e))?;
    Ok(report)
}
