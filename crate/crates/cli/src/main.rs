//! `clickrank` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "clickrank",
    version,
    about = "Session-based hotel impression re-ranking"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of a session log.
    Stats {
        sessions: PathBuf,
        /// Also write the statistics here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one `line N: reason` entry per rejected row.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Generate a synthetic corpus (sessions.csv and metadata.csv).
    Generate {
        #[arg(long)]
        sessions: usize,
        #[arg(long)]
        items: usize,
        /// Probability that the clicked item was interacted with beforehand.
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6.0)]
        mean_len: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a session log into training and validation parts.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        valid_out: PathBuf,
    },
    /// Fit a co-occurrence or item-kNN baseline.
    Fit {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        train: PathBuf,
        /// Score against every history item instead of the last one (ar, mc, sr).
        #[arg(long)]
        all_items: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GRU click scorer.
    TrainRnn {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Feed device and platform through the context network.
        #[arg(long)]
        context: bool,
        /// `key = value` hyper-parameter file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one scorer per grid point and report validation MRR.
    GridSearch {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        /// `key = value` file with comma-separated value lists.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        context: bool,
        #[arg(long)]
        out: PathBuf,
        /// Write the winning configuration as a `train-rnn` config file.
        #[arg(long)]
        best_config: Option<PathBuf>,
    },
    /// Rank clickouts and report MRR.
    Evaluate {
        #[arg(long, value_enum)]
        method: Method,
        /// Baseline or GRU model file (required for learned methods).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Item metadata, for GRU models trained with it.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate every clickout rather than the last of each session.
        #[arg(long)]
        all_clickouts: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        submission: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Ar,
    Mc,
    Sr,
    Iknn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Identity,
    Rules,
    Ar,
    Mc,
    Sr,
    Iknn,
    Rnn,
    #[value(name = "rnn+rules")]
    RnnRules,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
