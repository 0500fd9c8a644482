//! `liftpool` command-line interface.
//!
//! Exit codes: 0 success, 1 usage, 2 io, 3 config schema, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use liftpool::config::{DatasetConfig, RunConfig};
use liftpool::lifting::OperatorKind;
use liftpool::tensor::PadMode;
use liftpool::threads;
use liftpool::workflows::{
    run_compare, run_decompose, run_eval, run_robustness, run_roundtrip, run_train, MetricKind,
    PoolingChoice, WorkflowError, ALL_POOLINGS,
};

const ROUNDTRIP_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "liftpool",
    version,
    about = "Invertible lifting-scheme pooling: decomposition, training and robustness tools",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OperatorArg {
    Classical,
    Learned,
}

impl From<OperatorArg> for OperatorKind {
    fn from(v: OperatorArg) -> Self {
        match v {
            OperatorArg::Classical => OperatorKind::Classical,
            OperatorArg::Learned => OperatorKind::Learned,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Zero,
    Replicate,
    Symmetric,
    Periodic,
}

impl From<BoundaryArg> for PadMode {
    fn from(v: BoundaryArg) -> Self {
        match v {
            BoundaryArg::Zero => PadMode::Zero,
            BoundaryArg::Replicate => PadMode::Replicate,
            BoundaryArg::Symmetric => PadMode::Symmetric,
            BoundaryArg::Periodic => PadMode::Periodic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a PGM/PPM image into LL/LH/HL/HH sub-band PGMs plus a JSON
    /// sidecar with the normalisation constants
    Decompose {
        /// Input image (binary PGM or PPM; PPM is averaged to grayscale)
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = OperatorArg::Classical)]
        operator: OperatorArg,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Symmetric)]
        boundary: BoundaryArg,
        /// Seed for learned operator weights
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Down- then up-pool an image and report the max abs reconstruction
    /// error (nonzero exit if it exceeds 1e-4)
    Roundtrip {
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = OperatorArg::Classical)]
        operator: OperatorArg,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Symmetric)]
        boundary: BoundaryArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a run-config JSON; writes checkpoint, step log and
    /// metrics into the config's out_dir
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; prints the metrics report JSON
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset config JSON file
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated list: top1, consistency, corruption, miou
        #[arg(long, value_delimiter = ',', default_value = "top1")]
        metrics: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Shift-consistency and corruption-error tables for a classifier
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train one variant per pooling choice with identical data order and
    /// emit a combined CSV
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of max, avg, skip, lift-sum, lift-ll,
        /// lift-lh, lift-hl, lift-hh (default: all eight)
        #[arg(long, value_delimiter = ',')]
        poolings: Vec<String>,
    },
}

fn load_dataset_config(path: &Path) -> Result<DatasetConfig, WorkflowError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| WorkflowError::Io(format!("cannot read dataset config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| WorkflowError::Schema(format!("dataset config schema: {e}")))
}

fn run(command: Command) -> Result<(), WorkflowError> {
    match command {
        Command::Decompose {
            image,
            operator,
            boundary,
            seed,
            out_dir,
        } => {
            let out = run_decompose(&image, operator.into(), boundary.into(), seed, &out_dir)?;
            for path in &out.band_paths {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", out.sidecar_path.display());
            Ok(())
        }
        Command::Roundtrip {
            image,
            operator,
            boundary,
            seed,
        } => {
            let err = run_roundtrip(&image, operator.into(), boundary.into(), seed)?;
            println!("max abs reconstruction error: {err:e}");
            if err > ROUNDTRIP_TOLERANCE {
                return Err(WorkflowError::Numeric(format!(
                    "reconstruction error {err:e} exceeds {ROUNDTRIP_TOLERANCE:e}"
                )));
            }
            Ok(())
        }
        Command::Train { config } => {
            let cfg = RunConfig::from_path(&config)?;
            let out = run_train(&cfg)?;
            if let Some(last) = out.report.per_epoch.last() {
                println!(
                    "trained {} epochs, final train error {:.4}",
                    out.report.per_epoch.len(),
                    last.train_error
                );
            }
            println!("wrote {}", out.checkpoint_path.display());
            println!("wrote {}", out.metrics_path.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            metrics,
            out_dir,
        } => {
            let dataset = load_dataset_config(&data)?;
            let kinds = metrics
                .iter()
                .map(|m| m.parse::<MetricKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let report = run_eval(&checkpoint, &dataset, &kinds, out_dir.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report json"));
            Ok(())
        }
        Command::Robustness {
            checkpoint,
            data,
            out_dir,
        } => {
            let dataset = load_dataset_config(&data)?;
            let report = run_robustness(&checkpoint, &dataset, out_dir.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report json"));
            Ok(())
        }
        Command::Compare { config, poolings } => {
            let cfg = RunConfig::from_path(&config)?;
            let choices: Vec<PoolingChoice> = if poolings.is_empty() {
                ALL_POOLINGS.to_vec()
            } else {
                poolings
                    .iter()
                    .map(|p| p.parse())
                    .collect::<Result<Vec<_>, _>>()?
            };
            let out = run_compare(&cfg, &choices)?;
            for row in &out.rows {
                println!(
                    "{}: final train error {:.4}, data order {}",
                    row.pooling, row.final_train_error, row.data_order_hash
                );
            }
            println!("wrote {}", out.csv_path.display());
            Ok(())
        }
    }
}

fn worker_threads_from_env() -> Result<usize, WorkflowError> {
    match std::env::var("LIFTPOOL_THREADS") {
        Err(_) => Ok(1),
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                WorkflowError::Usage(format!(
                    "LIFTPOOL_THREADS must be a positive integer, got {raw:?}"
                ))
            }),
    }
}

fn main() -> ExitCode {
    let threads = match worker_threads_from_env() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    threads::set_max_threads(threads);

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here too; those print on stdout and
            // exit cleanly. Real usage errors exit 1.
            let is_usage = e.use_stderr();
            let _ = e.print();
            return if is_usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
