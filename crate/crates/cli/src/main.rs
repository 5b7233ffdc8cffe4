//! `svkit`: reproducible speaker-verification sparsity pipelines.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "svkit", version, about = "Structured-sparsity speaker verification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic speaker corpus as WAV files plus manifest.csv.
    Synth {
        #[arg(long)]
        speakers: usize,
        #[arg(long)]
        utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract one FCUB feature file per manifest row.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = svkit_core::audio::DEFAULT_VAD_THRESHOLD)]
        vad_threshold: f64,
    },
    /// Train a model on the non-dev speakers.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.lambda_gs.
        #[arg(long)]
        lambda_gs: Option<f64>,
        /// Output name; defaults to `baseline` when lambda_gs is 0, else `ssl`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Score dev trials and write EER, scores and DET points.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write per-group norms and the prune mask at prune.tau.
    Prune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Physically remove pruned groups, optionally fine-tuning afterwards.
    Compact {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask JSON from `prune`; recomputed at prune.tau when absent.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        fine_tune: bool,
    },
    /// Per-layer forward timing of a dense and a compacted checkpoint.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        compact: PathBuf,
        #[arg(long, default_value_t = svkit_core::sparsity::MIN_REPEATS)]
        repeats: usize,
    },
    /// Aggregate evaluation and bench CSVs into summary.csv.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { speakers, utts, seed, out } => commands::synth(speakers, utts, seed, &out),
        Command::Extract { manifest, out, vad_threshold } => commands::extract(&manifest, &out, vad_threshold),
        Command::Train { config, lambda_gs, name } => commands::train(&config, lambda_gs, name),
        Command::Eval { config, checkpoint } => commands::eval(&config, &checkpoint),
        Command::Prune { config, checkpoint } => commands::prune(&config, &checkpoint),
        Command::Compact { config, checkpoint, mask, fine_tune } => {
            commands::compact(&config, &checkpoint, mask.as_deref(), fine_tune)
        }
        Command::Bench { config, dense, compact, repeats } => commands::bench(&config, &dense, &compact, repeats),
        Command::Report { config } => commands::report(&config),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
