//! The command engines behind the CLI: decompose, roundtrip, train, eval,
//! robustness and compare. The CLI binary only parses arguments and maps
//! [`WorkflowError`] onto its exit-code taxonomy (1 usage, 2 io, 3 schema,
//! 4 numeric).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DatasetConfig, RunConfig};
use crate::data::netpbm::{self, GrayImage};
use crate::data::{CorruptionSpec, DataError, ALL_CORRUPTIONS};
use crate::lifting::{
    lift_down_2d, lift_params_init, lift_up_2d, LiftConfig, OperatorKind, PoolMode, Subband,
    SubbandSet2D,
};
use crate::metrics::{
    corruption_error, default_shift_offsets, model_miou, shift_consistency, top1_error,
    MetricsReport,
};
use crate::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::models::{Model, ModelSpec, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::{PadMode, Tensor};
use crate::trainer::{train, TrainError, TrainSummary};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Numeric(String),
}

impl WorkflowError {
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkflowError::Usage(_) => 1,
            WorkflowError::Io(_) => 2,
            WorkflowError::Schema(_) => 3,
            WorkflowError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for WorkflowError {
    fn from(e: std::io::Error) -> Self {
        WorkflowError::Io(e.to_string())
    }
}

impl From<DataError> for WorkflowError {
    fn from(e: DataError) -> Self {
        WorkflowError::Io(e.to_string())
    }
}

impl From<CheckpointError> for WorkflowError {
    fn from(e: CheckpointError) -> Self {
        WorkflowError::Io(format!("checkpoint: {e}"))
    }
}

impl From<crate::tensor::TensorError> for WorkflowError {
    fn from(e: crate::tensor::TensorError) -> Self {
        WorkflowError::Schema(format!("model/config: {e}"))
    }
}

impl From<TrainError> for WorkflowError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => WorkflowError::Schema(msg),
            TrainError::LabelMismatch => {
                WorkflowError::Schema("dataset labels do not match the model task".into())
            }
            TrainError::NonFiniteLoss { step } => {
                WorkflowError::Numeric(format!("non-finite loss at step {step}"))
            }
            TrainError::Tensor(t) => WorkflowError::Numeric(t.to_string()),
            TrainError::Log(e) => WorkflowError::Io(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// decompose / roundtrip
// ---------------------------------------------------------------------------

/// Reads a PGM or PPM (by magic); PPM is channel-averaged to grayscale.
pub fn read_image_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>, WorkflowError> {
    let bytes = std::fs::read(path)
        .map_err(|e| WorkflowError::Io(format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(b"P5") {
        Ok(netpbm::gray_to_tensor(&netpbm::parse_pgm(&bytes)?))
    } else if bytes.starts_with(b"P6") {
        Ok(netpbm::rgb_to_gray_tensor(&netpbm::parse_ppm(&bytes)?))
    } else {
        Err(WorkflowError::Io(format!(
            "{} is neither a binary PGM (P5) nor PPM (P6)",
            path.display()
        )))
    }
}

fn operators_for<T: Scalar>(
    operator: OperatorKind,
    boundary: PadMode,
    seed: u64,
) -> Result<(crate::lifting::LiftOperator<T>, crate::lifting::LiftOperator<T>, LiftConfig), WorkflowError>
{
    let cfg = LiftConfig {
        operator,
        boundary,
        ..Default::default()
    };
    let (p, u) = lift_params_init::<T>(&cfg, 1, seed)?;
    Ok((p, u, cfg))
}

/// Per-band normalisation constants recorded by `decompose`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeSidecar {
    pub source_width: usize,
    pub source_height: usize,
    pub operator: OperatorKind,
    pub boundary: PadMode,
    pub seed: u64,
    pub bands: std::collections::BTreeMap<String, BandStats>,
}

pub struct DecomposeOutputs {
    pub band_paths: Vec<PathBuf>,
    pub sidecar_path: PathBuf,
    pub sidecar: DecomposeSidecar,
}

fn band_to_pgm(band: &Tensor<f32>) -> (GrayImage, BandStats) {
    let (h, w) = (band.shape()[2], band.shape()[3]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in band.data() {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let pixels = if hi > lo {
        band.data()
            .iter()
            .map(|&v| (255.0 * ((v as f64 - lo) / (hi - lo))).round() as u8)
            .collect()
    } else {
        vec![0u8; h * w]
    };
    (
        GrayImage {
            width: w,
            height: h,
            pixels,
        },
        BandStats { min: lo, max: hi },
    )
}

/// Decomposes one image into its four sub-bands, written as min-max
/// normalised PGMs next to a JSON sidecar with the normalisation constants.
pub fn run_decompose(
    image: &Path,
    operator: OperatorKind,
    boundary: PadMode,
    seed: u64,
    out_dir: &Path,
) -> Result<DecomposeOutputs, WorkflowError> {
    let x = read_image_tensor::<f32>(image)?;
    let (p, u, cfg) = operators_for::<f32>(operator, boundary, seed)?;
    let sb: SubbandSet2D<f32> = lift_down_2d(&x, &p, &u, &cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut bands = std::collections::BTreeMap::new();
    let mut band_paths = Vec::new();
    for (name, band) in sb.bands() {
        let (img, stats) = band_to_pgm(band);
        let path = out_dir.join(format!("{name}.pgm"));
        netpbm::write_pgm(&img, &path)?;
        bands.insert(name.to_string(), stats);
        band_paths.push(path);
    }
    let sidecar = DecomposeSidecar {
        source_width: x.shape()[3],
        source_height: x.shape()[2],
        operator,
        boundary,
        seed,
        bands,
    };
    let sidecar_path = out_dir.join("decompose.json");
    std::fs::write(&sidecar_path, serde_json::to_vec_pretty(&sidecar).expect("sidecar json"))?;
    Ok(DecomposeOutputs {
        band_paths,
        sidecar_path,
        sidecar,
    })
}

/// Down- then up-pools one image and returns the max abs reconstruction error.
pub fn run_roundtrip(
    image: &Path,
    operator: OperatorKind,
    boundary: PadMode,
    seed: u64,
) -> Result<f64, WorkflowError> {
    let x = read_image_tensor::<f32>(image)?;
    let (p, u, cfg) = operators_for::<f32>(operator, boundary, seed)?;
    let sb = lift_down_2d(&x, &p, &u, &cfg)?;
    let back = lift_up_2d(&sb, &p, &u, &cfg)?;
    let err = back
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    Ok(err)
}

// ---------------------------------------------------------------------------
// train / eval / robustness
// ---------------------------------------------------------------------------

pub struct TrainOutputs {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub report: MetricsReport,
    pub summary: TrainSummary,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainOutputs, WorkflowError> {
    let started = Instant::now();
    let data = cfg.dataset.load::<f32>()?;
    let mut model = Model::<f32>::build(&cfg.model, cfg.train.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let summary = train(&mut model, &data, &cfg.train, Some(&mut log))?;
    std::io::Write::flush(&mut log)?;

    let checkpoint_path = cfg.out_dir.join("model.lpck");
    save_checkpoint(&model, summary.steps as u64, cfg.train.seed, &checkpoint_path)?;

    let mut report = MetricsReport {
        per_epoch: summary.epochs.clone(),
        runtime_seconds: started.elapsed().as_secs_f64(),
        ..Default::default()
    };
    match &model {
        Model::Classifier(m) => report.top1_error = Some(top1_error(m, &data)?),
        Model::Segnet(m) => report.miou = Some(model_miou(m, &data)?),
    }
    let metrics_path = cfg.out_dir.join("metrics.json");
    write_report(&report, &metrics_path)?;
    Ok(TrainOutputs {
        checkpoint_path,
        metrics_path,
        report,
        summary,
    })
}

fn write_report(report: &MetricsReport, json_path: &Path) -> Result<(), WorkflowError> {
    std::fs::write(json_path, serde_json::to_vec_pretty(report).expect("report json"))?;
    std::fs::write(json_path.with_extension("csv"), report.to_csv())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Top1,
    Consistency,
    Corruption,
    Miou,
}

impl FromStr for MetricKind {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top1" => Ok(MetricKind::Top1),
            "consistency" => Ok(MetricKind::Consistency),
            "corruption" => Ok(MetricKind::Corruption),
            "miou" => Ok(MetricKind::Miou),
            other => Err(WorkflowError::Usage(format!(
                "unknown metric {other}; expected top1, consistency, corruption or miou"
            ))),
        }
    }
}

/// The full corruption ladder at a fixed noise seed.
pub fn standard_corruptions(seed: u64) -> Vec<CorruptionSpec> {
    ALL_CORRUPTIONS
        .into_iter()
        .flat_map(|kind| (1..=3u8).map(move |s| CorruptionSpec::new(kind, s, seed)))
        .collect()
}

pub fn run_eval(
    checkpoint: &Path,
    dataset: &DatasetConfig,
    metrics: &[MetricKind],
    out_dir: Option<&Path>,
) -> Result<MetricsReport, WorkflowError> {
    let started = Instant::now();
    let loaded = load_checkpoint(checkpoint)?;
    let data = dataset.load::<f32>()?;
    let mut report = MetricsReport::default();
    for metric in metrics {
        match (metric, &loaded.model) {
            (MetricKind::Top1, Model::Classifier(m)) => {
                report.top1_error = Some(top1_error(m, &data)?);
            }
            (MetricKind::Consistency, Model::Classifier(m)) => {
                report.consistency =
                    Some(shift_consistency(m, &data, &default_shift_offsets(), None)?);
            }
            (MetricKind::Corruption, Model::Classifier(m)) => {
                report.corruption = Some(corruption_error(m, &data, &standard_corruptions(0))?);
            }
            (MetricKind::Miou, Model::Segnet(m)) => {
                report.miou = Some(model_miou(m, &data)?);
            }
            (m, _) => {
                return Err(WorkflowError::Usage(format!(
                    "metric {m:?} does not apply to this model kind"
                )))
            }
        }
    }
    report.runtime_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_report(&report, &dir.join("eval.json"))?;
    }
    Ok(report)
}

/// Consistency plus the corruption table, written as one report.
pub fn run_robustness(
    checkpoint: &Path,
    dataset: &DatasetConfig,
    out_dir: Option<&Path>,
) -> Result<MetricsReport, WorkflowError> {
    let started = Instant::now();
    let loaded = load_checkpoint(checkpoint)?;
    let Model::Classifier(model) = &loaded.model else {
        return Err(WorkflowError::Usage(
            "robustness metrics need a classifier checkpoint".into(),
        ));
    };
    let data = dataset.load::<f32>()?;
    let report = MetricsReport {
        top1_error: Some(top1_error(model, &data)?),
        consistency: Some(shift_consistency(model, &data, &default_shift_offsets(), None)?),
        corruption: Some(corruption_error(model, &data, &standard_corruptions(0))?),
        runtime_seconds: started.elapsed().as_secs_f64(),
        ..Default::default()
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_report(&report, &dir.join("robustness.json"))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// The eight pooling variants the compare command sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingChoice {
    Max,
    Avg,
    Skip,
    LiftSum,
    LiftLl,
    LiftLh,
    LiftHl,
    LiftHh,
}

pub const ALL_POOLINGS: [PoolingChoice; 8] = [
    PoolingChoice::Max,
    PoolingChoice::Avg,
    PoolingChoice::Skip,
    PoolingChoice::LiftSum,
    PoolingChoice::LiftLl,
    PoolingChoice::LiftLh,
    PoolingChoice::LiftHl,
    PoolingChoice::LiftHh,
];

impl PoolingChoice {
    pub fn label(&self) -> &'static str {
        match self {
            PoolingChoice::Max => "max",
            PoolingChoice::Avg => "avg",
            PoolingChoice::Skip => "skip",
            PoolingChoice::LiftSum => "lift-sum",
            PoolingChoice::LiftLl => "lift-ll",
            PoolingChoice::LiftLh => "lift-lh",
            PoolingChoice::LiftHl => "lift-hl",
            PoolingChoice::LiftHh => "lift-hh",
        }
    }

    /// Applies this choice onto a classifier spec.
    pub fn apply(&self, spec: &mut crate::models::TinyClassifierSpec) {
        match self {
            PoolingChoice::Max => spec.pooling = PoolKind::Max,
            PoolingChoice::Avg => spec.pooling = PoolKind::Avg,
            PoolingChoice::Skip => spec.pooling = PoolKind::Skip,
            PoolingChoice::LiftSum => {
                spec.pooling = PoolKind::Lift;
                spec.lift.pool_mode = PoolMode::SubbandSum;
            }
            PoolingChoice::LiftLl => {
                spec.pooling = PoolKind::Lift;
                spec.lift.pool_mode = PoolMode::Select(Subband::Ll);
            }
            PoolingChoice::LiftLh => {
                spec.pooling = PoolKind::Lift;
                spec.lift.pool_mode = PoolMode::Select(Subband::Lh);
            }
            PoolingChoice::LiftHl => {
                spec.pooling = PoolKind::Lift;
                spec.lift.pool_mode = PoolMode::Select(Subband::Hl);
            }
            PoolingChoice::LiftHh => {
                spec.pooling = PoolKind::Lift;
                spec.lift.pool_mode = PoolMode::Select(Subband::Hh);
            }
        }
    }
}

impl FromStr for PoolingChoice {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_POOLINGS
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| {
                WorkflowError::Usage(format!(
                    "unknown pooling {s}; expected one of max, avg, skip, lift-sum, lift-ll, lift-lh, lift-hl, lift-hh"
                ))
            })
    }
}

impl fmt::Display for PoolingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub pooling: String,
    pub final_train_error: f64,
    pub top1_error: f64,
    pub data_order_hash: String,
    pub runtime_seconds: f64,
}

pub struct CompareOutputs {
    pub rows: Vec<CompareRow>,
    pub csv_path: PathBuf,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("pooling,final_train_error,top1_error,data_order_hash,runtime_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.pooling, r.final_train_error, r.top1_error, r.data_order_hash, r.runtime_seconds
        ));
    }
    out
}

/// Trains one variant per pooling choice with identical data and seed, and
/// writes the combined CSV. No ordering between variants is asserted.
pub fn run_compare(
    cfg: &RunConfig,
    poolings: &[PoolingChoice],
) -> Result<CompareOutputs, WorkflowError> {
    let ModelSpec::Classifier(base_spec) = &cfg.model else {
        return Err(WorkflowError::Usage(
            "compare sweeps classifier pooling variants; the config must name a classifier".into(),
        ));
    };
    if poolings.is_empty() {
        return Err(WorkflowError::Usage("no pooling variants requested".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::with_capacity(poolings.len());
    for choice in poolings {
        let mut spec = base_spec.clone();
        choice.apply(&mut spec);
        let variant_cfg = RunConfig {
            model: ModelSpec::Classifier(spec),
            train: cfg.train.clone(),
            dataset: cfg.dataset.clone(),
            out_dir: cfg.out_dir.join(choice.label()),
        };
        let outputs = run_train(&variant_cfg)?;
        let final_error = outputs
            .summary
            .epochs
            .last()
            .map(|e| e.train_error)
            .unwrap_or(1.0);
        rows.push(CompareRow {
            pooling: choice.label().to_string(),
            final_train_error: final_error,
            top1_error: outputs.report.top1_error.unwrap_or(1.0),
            data_order_hash: outputs.summary.data_order_hash.clone(),
            runtime_seconds: outputs.report.runtime_seconds,
        });
    }
    let csv_path = cfg.out_dir.join("compare.csv");
    std::fs::write(&csv_path, compare_csv(&rows))?;
    Ok(CompareOutputs { rows, csv_path })
}
