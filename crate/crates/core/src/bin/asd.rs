use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asd_core::activity::{trace_accuracy, trace_csv};
use asd_core::audio::Split;
use asd_core::config::ExperimentConfig;
use asd_core::eval::{scores_csv, Method};
use asd_core::pipeline::{self, ScoreTarget};
use asd_core::util::write_atomic;
use asd_core::{AsdError, Result};

/// Anomalous machine-sound detection via machine-activity detection.
///
/// Set ASD_THREADS to cap worker threads.
#[derive(Parser)]
#[command(name = "asd", version)]
struct Cli {
    /// Starting configuration: `full` or `desk`.
    #[arg(long, global = true, default_value = "full")]
    preset: String,
    /// TOML experiment config layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `sad.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus and its manifest.
    GenData,
    /// Train one method and write its checkpoint.
    Train {
        #[arg(long)]
        method: Method,
        /// Existing sad checkpoint to build od-sad on.
        #[arg(long)]
        reuse: Option<PathBuf>,
    },
    /// Score a split or a single clip.
    Score {
        /// One or more methods, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<Method>,
        #[arg(long, conflicts_with = "clip")]
        split: Option<Split>,
        #[arg(long)]
        clip: Option<String>,
    },
    /// Build the AUC report from persisted test scores.
    Evaluate {
        /// Further run directories (same config, other seeds) to average over.
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
    },
    /// Write the activity trace of one clip as CSV.
    Trace {
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in order: gen-data, train x4, score, evaluate.
    Run,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(&cli.preset, cli.config.as_deref(), &cli.sets)?;
    log::info!("config {} -> {}", cfg.hash(), cfg.out_dir.display());
    match cli.command {
        Command::GenData => {
            let m = pipeline::gen_data(&cfg)?;
            println!("{} clips -> {}", m.entries.len(), pipeline::manifest_path(&cfg).display());
        }
        Command::Train { method, reuse } => {
            let path = pipeline::train(&cfg, method, reuse.as_deref())?;
            println!("{}", path.display());
        }
        Command::Score { method, split, clip } => {
            let target = match (split, clip) {
                (_, Some(id)) => ScoreTarget::Clip(id),
                (Some(s), None) => ScoreTarget::Split(s),
                (None, None) => return Err(AsdError::Config("score needs --split or --clip".into())),
            };
            let records = pipeline::score(&cfg, &method, &target)?;
            match target {
                ScoreTarget::Clip(_) => print!("{}", scores_csv(&records, &cfg.hash())),
                ScoreTarget::Split(s) => {
                    for m in &method {
                        println!("{}", pipeline::scores_path(&cfg, *m, s).display());
                    }
                }
            }
        }
        Command::Evaluate { runs } => {
            let mut all = vec![cfg.clone()];
            for dir in runs {
                let mut other = ExperimentConfig::load("full", Some(&dir.join("config.toml")), &[])?;
                other.out_dir = dir;
                all.push(other);
            }
            let report = pipeline::evaluate(&all)?;
            pipeline::write_report(&pipeline::report_dir(&cfg), &report)?;
            print!("{}", report.to_text());
        }
        Command::Trace { clip, out } => {
            let (rows, feats) = pipeline::trace(&cfg, &clip)?;
            let path = out.unwrap_or_else(|| pipeline::trace_path(&cfg, &clip));
            write_atomic(&path, trace_csv(&rows).as_bytes())?;
            match feats.frame_labels.as_deref() {
                Some(labels) => println!("{} (accuracy {:.3})", path.display(), trace_accuracy(&rows, labels)),
                None => println!("{}", path.display()),
            }
        }
        Command::Run => {
            let report = pipeline::run_all(&cfg)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("ASD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not cap threads: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
