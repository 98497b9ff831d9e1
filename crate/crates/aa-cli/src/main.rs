use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use aa_cli::commands::{eval, gen, report, scan, train};
use aa_cli::config::{load_config, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "aa",
    version,
    about = "Jet-image classifier pipeline with anomaly awareness: \
             generate data, train, score, window-scan, report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration JSON.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the experiment output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate per-class datasets with sidecars and average-image previews.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a phase: prior, aa (anomaly-aware), or the ablation sweep.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training phase.
        #[arg(long, value_enum)]
        phase: train::Phase,
        /// Override the anomaly-loss weight.
        #[arg(long = "lambda-aa", value_name = "WEIGHT")]
        lambda_aa: Option<f64>,
        /// Checkpoint the aware run continues from (default: the prior
        /// phase's checkpoint).
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
        /// Start the aware run from fresh parameters instead of a
        /// checkpoint.
        #[arg(long)]
        cold_start: bool,
    },
    /// Score datasets with a trained checkpoint; write histograms and ROC curves.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint name under checkpoints/.
        #[arg(long, default_value = "prior")]
        phase: String,
    },
    /// Window-scan a phase's scores for central concentration.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Score-file phase to scan.
        #[arg(long, default_value = "aa")]
        phase: String,
        /// Override the scanned window widths (repeatable).
        #[arg(long = "delta", value_name = "WIDTH")]
        deltas: Vec<f64>,
    },
    /// Consolidate all artifacts into the experiment report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(
    common: &Common,
    lambda_aa: Option<f64>,
    deltas: Option<Vec<f64>>,
) -> aa_core::Result<ExperimentConfig> {
    load_config(
        &common.config,
        &Overrides {
            seed: common.seed,
            out: common.out.clone(),
            lambda_aa,
            deltas,
        },
    )
}

fn dispatch(cli: Cli) -> aa_core::Result<()> {
    match cli.command {
        Command::Gen { common } => gen::run(&resolve(&common, None, None)?),
        Command::Train { common, phase, lambda_aa, init, cold_start } => {
            let config = resolve(&common, lambda_aa, None)?;
            train::run(&config, &train::TrainOpts { phase, init, cold_start })
        }
        Command::Eval { common, phase } => {
            let config = resolve(&common, None, None)?;
            eval::run(&config, &eval::EvalOpts { phase })
        }
        Command::Scan { common, phase, deltas } => {
            let deltas = if deltas.is_empty() { None } else { Some(deltas) };
            let config = resolve(&common, None, deltas)?;
            scan::run(&config, &scan::ScanOpts { phase })
        }
        Command::Report { common } => report::run(&resolve(&common, None, None)?),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(aa_cli::exit_code(&e));
    }
}
