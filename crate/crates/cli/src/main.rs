//! `emkken`: batch front end for corpus ingestion, KQI scoring, training
//! and the evaluation harness.

mod commands;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emkken_core::eval::SweepAxis;

#[derive(Parser, Debug)]
#[command(name = "emkken", version, about = "Citation-network knowledge evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Parallel trials for eval, sweep and ablate.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Config override `KEY=VALUE`, repeatable; dotted keys reach nested fields.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus archive written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,

    /// `id,label` CSV; switches the label criterion to provided labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read edge, metadata and embedding files into a corpus archive.
    Ingest {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// CSV, or raw f32 with a `.json` sidecar.
        #[arg(long)]
        embed: PathBuf,
        #[arg(long)]
        years: Option<PathBuf>,
        /// The edge file starts with a header row.
        #[arg(long)]
        edge_header: bool,
    },
    /// Score every paper with KQI and bin the log scores.
    Kqi {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to the config's `n_classes`.
        #[arg(long)]
        n_classes: Option<usize>,
        /// Also emit `kqi_labels.csv`; all-zero scores become an error.
        #[arg(long)]
        labels: bool,
    },
    /// Label the sample papers with the configured criterion.
    Label {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one model and write its checkpoint and history.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Repeated-trial metrics, or a single checkpoint's test metrics.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to the config's `n_trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Trials over a grid of d_state values.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "d_state1")]
        axis: SweepAxis,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Trials for the full model and each single-component removal.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// SVG line charts of ACC, F1 and AUC from a history or sweep CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a synthetic corpus with planted labels.
    Synth {
        #[arg(long, default_value_t = 500)]
        n_samples: usize,
        #[arg(long, default_value_t = 600)]
        pool: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
