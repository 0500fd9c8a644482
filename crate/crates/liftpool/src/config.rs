//! Run configuration: the JSON document driving `train`, `eval`, `robustness`
//! and `compare`. Unknown keys are rejected everywhere, so typos fail fast.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::cifar::{parse_cifar_binary, CifarFormat};
use crate::data::idx::{parse_idx, parse_idx_raw};
use crate::data::{synth_shapes, synth_shapes_seg, DataError, Dataset, Labels};
use crate::models::ModelSpec;
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classify,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetConfig {
    /// Deterministic synthetic shapes.
    Synth {
        n: usize,
        size: usize,
        classes: usize,
        seed: u64,
        task: TaskKind,
    },
    /// IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// CIFAR binary file.
    Cifar { path: PathBuf, format: CifarFormat },
}

impl DatasetConfig {
    pub fn load<T: Scalar>(&self) -> Result<Dataset<T>, DataError> {
        match self {
            DatasetConfig::Synth {
                n,
                size,
                classes,
                seed,
                task,
            } => Ok(match task {
                TaskKind::Classify => synth_shapes(*n, *size, *classes, *seed),
                TaskKind::Segment => synth_shapes_seg(*n, *size, *classes, *seed),
            }),
            DatasetConfig::Idx { images, labels } => {
                let image_tensor = parse_idx::<T>(&std::fs::read(images)?)?;
                let images = match image_tensor.shape().len() {
                    3 => {
                        let s = image_tensor.shape().to_vec();
                        image_tensor
                            .reshape(vec![s[0], 1, s[1], s[2]])
                            .map_err(|e| DataError::Invalid(e.to_string()))?
                    }
                    4 => image_tensor,
                    other => {
                        return Err(DataError::Invalid(format!(
                            "idx image tensor must be rank 3 or 4, got rank {other}"
                        )))
                    }
                };
                let (label_shape, label_bytes) = parse_idx_raw(&std::fs::read(labels)?)?;
                if label_shape.len() != 1 || label_shape[0] != images.shape()[0] {
                    return Err(DataError::Invalid(format!(
                        "label count {:?} does not match {} images",
                        label_shape,
                        images.shape()[0]
                    )));
                }
                Ok(Dataset {
                    images,
                    labels: Labels::Classes(label_bytes.iter().map(|&b| b as usize).collect()),
                    split: "idx".into(),
                })
            }
            DatasetConfig::Cifar { path, format } => {
                Ok(parse_cifar_binary(&std::fs::read(path)?, *format)?)
            }
        }
    }
}

/// The whole run document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_path(path: &Path) -> Result<Self, crate::workflows::WorkflowError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            crate::workflows::WorkflowError::Io(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
            .map_err(|e| crate::workflows::WorkflowError::Schema(format!("config schema: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "model": { "classifier": {
            "in_channels": 1, "input_hw": [16, 16], "block_channels": [4, 8],
            "classes": 3, "pooling": "lift",
            "lift": { "kernel_size": 5, "pool_mode": "subband-sum" }
        }},
        "train": { "lr": 0.1, "epochs": 2, "batch_size": 10, "seed": 7 },
        "dataset": { "synth": { "n": 20, "size": 16, "classes": 3, "seed": 1, "task": "classify" } },
        "out_dir": "/tmp/run"
    }"#;

    #[test]
    fn parses_and_loads() {
        let cfg = RunConfig::from_json_str(GOOD).unwrap();
        let data = cfg.dataset.load::<f32>().unwrap();
        assert_eq!(data.len(), 20);
        assert_eq!(cfg.train.epochs, 2);
        // Defaults fill in the untouched knobs.
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.weight_decay, 5e-4);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = GOOD.replace("\"lr\": 0.1", "\"lr\": 0.1, \"warmup\": 5");
        assert!(RunConfig::from_json_str(&bad).is_err());
        let bad_top = GOOD.replace("\"out_dir\"", "\"outdir_typo\"");
        assert!(RunConfig::from_json_str(&bad_top).is_err());
    }

    #[test]
    fn select_pool_mode_round_trips() {
        let cfg = RunConfig::from_json_str(GOOD).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
