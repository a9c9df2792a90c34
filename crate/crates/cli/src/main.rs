//! `spectro-explain`: synthesize signals, train the reference CNN, explain
//! its decisions with LIME and assemble the figures.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input or configuration.
//! Failures print one JSON object on stderr.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spectro_explain::pipeline::{self, PipelineConfig};
use spectro_explain::Error;

const SEED_ENV: &str = "SPECTRO_EXPLAIN_SEED";

#[derive(Parser)]
#[command(name = "spectro-explain", version, about = "Spectrogram classification with LIME explanations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one signal file per class.
    Synth {
        /// Synthesis seed; overrides the manifest's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the reference CNN and write checkpoint, report and plots.
    Train {
        /// Training seed; overrides the config's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Explain validation spectrograms with a trained checkpoint.
    Explain {
        /// Seed of the checkpoint to explain.
        #[arg(long)]
        seed: Option<u64>,
        /// Class to explain; all classes when omitted.
        #[arg(long = "class")]
        class_id: Option<u32>,
    },
    /// Retrain `n_retrainings` times and combine the derivative profiles.
    Ensemble {
        /// First retraining seed; overrides the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Class to ensemble; all classes when omitted.
        #[arg(long = "class")]
        class_id: Option<u32>,
    },
    /// Collect the figures of one run into `<out>/report`.
    Report {
        /// Seed of the model whose figures are collected.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Marks errors caused by the caller rather than the program.
#[derive(Debug)]
struct BadInput(String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

fn load_config(global: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|_| BadInput(format!("{SEED_ENV}={raw:?} is not an unsigned 64-bit integer")))?;
    }
    Ok(cfg)
}

fn configure_threads(jobs: Option<usize>) -> Result<()> {
    match jobs {
        Some(0) => bail!(BadInput("--jobs must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?,
        #[cfg(not(feature = "parallel"))]
        Some(_) => {}
        None => {}
    }
    Ok(())
}

fn classes(ds: &spectro_explain::Dataset, class_id: Option<u32>) -> Result<Vec<u32>> {
    match class_id {
        Some(c) if c as usize >= ds.n_classes() => {
            bail!(BadInput(format!("--class {c} outside the {} classes of the manifest", ds.n_classes())))
        }
        Some(c) => Ok(vec![c]),
        None => Ok((0..ds.n_classes() as u32).collect()),
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    configure_threads(cli.global.jobs)?;
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth { seed } => {
            let mut manifest = cfg.load_manifest()?;
            if let Some(s) = seed {
                manifest.seed = s;
            }
            let ds = pipeline::synthesize(&cfg, manifest)?;
            let layout = cfg.layout();
            let files: Vec<String> = (0..ds.n_classes() as u32).map(|c| layout.signal(c).display().to_string()).collect();
            Ok(json!({ "command": "synth", "seed": ds.manifest().seed, "signals": files }))
        }
        Command::Train { seed } => {
            let seed = seed.unwrap_or(cfg.train.seed);
            let ds = pipeline::load_dataset(&cfg)?;
            let (_, report) = pipeline::train_or_load(&cfg, &ds, seed)?;
            Ok(json!({
                "command": "train",
                "seed": seed,
                "checkpoint": cfg.layout().checkpoint(seed),
                "final_val_accuracy": report.final_val_accuracy,
                "val_accuracy": report.val_accuracy,
            }))
        }
        Command::Explain { seed, class_id } => {
            let seed = seed.unwrap_or(cfg.train.seed);
            let ds = pipeline::load_dataset(&cfg)?;
            let mut summaries = Vec::new();
            for c in classes(&ds, class_id)? {
                summaries.push(pipeline::run_explain(&cfg, &ds, seed, c)?);
            }
            Ok(json!({ "command": "explain", "model_seed": seed, "explain_seed": cfg.seed, "classes": summaries }))
        }
        Command::Ensemble { seed, class_id } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if cfg.n_retrainings < 2 {
                bail!(BadInput("ensemble needs n_retrainings >= 2".into()));
            }
            let ds = pipeline::load_dataset(&cfg)?;
            let mut summaries = Vec::new();
            for c in classes(&ds, class_id)? {
                summaries.push(pipeline::run_ensemble(&cfg, &ds, c)?);
            }
            Ok(json!({ "command": "ensemble", "classes": summaries }))
        }
        Command::Report { seed } => {
            let seed = seed.unwrap_or(cfg.train.seed);
            let ds = pipeline::load_dataset(&cfg)?;
            let index = pipeline::run_report(&cfg, &ds, seed)?;
            Ok(json!({ "command": "report", "dir": cfg.layout().report_dir(), "index": index }))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let bad = err.chain().any(|cause| {
        cause.downcast_ref::<BadInput>().is_some() || cause.downcast_ref::<Error>().is_some_and(Error::is_bad_input)
    });
    if bad {
        2
    } else {
        1
    }
}

fn fail(code: u8, kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message }, "exit_code": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(2, "usage", e.to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(summary) => {
            // a closed pipe (e.g. `| head`) is not a failure of the command
            let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let code = exit_code(&err);
            fail(code, if code == 2 { "bad_input" } else { "internal" }, format!("{err:#}"))
        }
    }
}
