//! Single binary with subcommands binding all modules into reproducible
//! experiments.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/numeric failure,
//! 3 IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avasr_cli::commands::{cmd_evaluate, cmd_gradcheck, cmd_report, cmd_synth_data, cmd_train};
use avasr_cli::config::load_config;
use avasr_cli::CliError;

#[derive(Parser)]
#[command(
    name = "avasr",
    version,
    about = "Audio-visual speech recognition experiments at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat key=value experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key (repeatable): --set train.epochs=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Cap internal parallelism (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audio-visual corpus.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Multi-condition training; resumable via train.resume.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// WER over the SNR grid for one checkpoint or a directory of them.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint file, or a directory of .avcp files for a combined table.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference gradient verification over all nine variants.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Merge evaluation CSVs into combined tables.
    Report {
        /// Input matrix.csv files.
        #[arg(long, required = true)]
        csv: Vec<PathBuf>,
        /// Output directory for combined.csv / combined.txt.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> avasr_cli::Result<avasr_cli::config::ExperimentConfig> {
    let mut cfg = load_config(args.config.as_deref(), &args.sets)?;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if cfg.threads > 0 {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    Ok(cfg)
}

fn run() -> avasr_cli::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::SynthData { cfg } => cmd_synth_data(&resolve(cfg)?),
        Command::Train { cfg } => cmd_train(&resolve(cfg)?),
        Command::Evaluate { cfg, checkpoint } => cmd_evaluate(&resolve(cfg)?, checkpoint),
        Command::Gradcheck { cfg } => {
            let ok = cmd_gradcheck(&resolve(cfg)?)?;
            if !ok {
                return Err(CliError::Core(avasr_core::CoreError::Numeric(
                    "gradient check failed above tolerance".into(),
                )));
            }
            Ok(())
        }
        Command::Report { csv, out } => cmd_report(csv, out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
