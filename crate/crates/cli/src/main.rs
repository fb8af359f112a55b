use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msan::commands::{
    cmd_caption, cmd_evaluate, cmd_gen_synth, cmd_selfcheck, cmd_train, sibling, CaptionArgs, EvaluateArgs,
    GenSynthArgs, TrainArgs,
};
use msan::corpus::Modality;
use msan::model::Fault;
use msan::{MsanError, Result};

#[derive(Parser)]
#[command(name = "msan", version, about = "Multimodal semantic attention captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write train/val/test splits.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        videos: usize,
        /// Latent attribute words (nouns and verbs).
        #[arg(long, default_value_t = 8)]
        attrs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature streams to emit, e.g. `f,c,o`.
        #[arg(long, default_value = "f,c,o")]
        modalities: String,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Train a model on a split directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write; the epoch log and manifest go next to it.
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base settings before the config file: `synthetic` or `full`.
        #[arg(long, default_value = "synthetic")]
        preset: String,
        /// Modalities feeding semantic attention: a subset like `f,c,o`, `all` or `none`.
        #[arg(long)]
        modalities: Option<String>,
        /// Override one config key, e.g. `--set seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Caption every video in a JSONL file (or a split directory's test set).
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption and score against the references.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the checkpoint's configured beam size.
        #[arg(long)]
        beam: Option<usize>,
        /// Report directory; defaults to `<ckpt>.eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in numerical and decoding checks.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipHiddenFactor,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenSynth {
            out,
            videos,
            attrs,
            seed,
            modalities,
            dim,
            steps,
            noise,
        } => {
            let splits = cmd_gen_synth(&GenSynthArgs {
                out: out.clone(),
                videos,
                attrs,
                seed,
                modalities: Modality::parse_list(&modalities)?,
                dim,
                seq_len: steps,
                noise,
            })?;
            eprintln!(
                "wrote {} train / {} val / {} test videos to {}",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            config,
            preset,
            modalities,
            overrides,
            quiet,
        } => {
            if !data.is_dir() {
                return Err(MsanError::Usage(format!("data directory {} does not exist", data.display())));
            }
            let args = TrainArgs {
                data,
                config,
                preset: Some(preset),
                out: out.clone(),
                modalities,
                overrides,
            };
            let res = cmd_train(&args, |e| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  loss1 {:.4}  loss2 {:.4}  val {:.4}  {:.1}s",
                        e.epoch, e.train_loss1, e.train_loss2, e.val_loss, e.seconds
                    );
                }
            })?;
            eprintln!(
                "best epoch {} (val {:.4}) saved to {}",
                res.checkpoint.epoch,
                res.checkpoint.val_loss,
                out.display()
            );
        }
        Command::Caption { ckpt, data, beam, out } => {
            let to_stdout = out.is_none();
            let lines = cmd_caption(&CaptionArgs { ckpt, data, beam, out })?;
            if to_stdout {
                print!("{}", msan::commands::captions_to_jsonl(&lines));
            }
        }
        Command::Evaluate { ckpt, data, beam, out } => {
            let out = out.unwrap_or_else(|| sibling(&ckpt, "eval"));
            let report = cmd_evaluate(&EvaluateArgs { ckpt, data, beam, out: out.clone() })?;
            print!("{}", report.to_table());
            eprintln!("reports written to {}", out.display());
        }
        Command::Selfcheck { inject_fault } => {
            let fault = inject_fault.map(|f| match f {
                FaultArg::FlipHiddenFactor => Fault::FlipHiddenFactor,
            });
            let report = cmd_selfcheck(fault, std::io::stdout().lock())?;
            if !report.passed() {
                eprintln!("selfcheck failed: {}", report.failures().join(", "));
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MSAN_THREADS").ok().filter(|s| !s.trim().is_empty()) {
        match n.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is configured once");
            }
            _ => {
                eprintln!("error: MSAN_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
