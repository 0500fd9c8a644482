//! Evaluation metrics: top-1 error, per-pixel error, shift consistency,
//! corruption error tables and mean intersection-over-union, plus the
//! serializable report the CLI writes as JSON and CSV.

use serde::{Deserialize, Serialize};

use crate::data::{apply_corruption, shift_images, CorruptionSpec, Dataset, Labels, IGNORE_LABEL};
use crate::models::{argmax_rows, Model, TinyClassifier, TinySegNet};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};
use crate::trainer::TrainError;

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub c_u: f64,
    pub c_p: f64,
    pub total: f64,
    /// Top-1 error for classifiers, pixel error for segmentation.
    pub train_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub corruption: String,
    pub severity: u8,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTable {
    pub rows: Vec<CorruptionRow>,
    /// Mean over kinds of the per-kind severity means.
    pub mean: f64,
}

/// The full evaluation record a run emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_epoch: Vec<EpochMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    pub runtime_seconds: f64,
}

impl MetricsReport {
    /// Flat CSV rendering: one `metric,label,value` row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,label,value\n");
        for e in &self.per_epoch {
            out.push_str(&format!("epoch_train_error,{},{}\n", e.epoch, e.train_error));
            out.push_str(&format!("epoch_total_loss,{},{}\n", e.epoch, e.total));
        }
        if let Some(v) = self.top1_error {
            out.push_str(&format!("top1_error,,{v}\n"));
        }
        if let Some(v) = self.consistency {
            out.push_str(&format!("consistency,,{v}\n"));
        }
        if let Some(table) = &self.corruption {
            for row in &table.rows {
                out.push_str(&format!(
                    "corruption_error,{}-{},{}\n",
                    row.corruption, row.severity, row.error
                ));
            }
            out.push_str(&format!("corruption_error_mean,,{}\n", table.mean));
        }
        if let Some(v) = self.miou {
            out.push_str(&format!("miou,,{v}\n"));
        }
        out.push_str(&format!("runtime_seconds,,{}\n", self.runtime_seconds));
        out
    }
}

const EVAL_CHUNK: usize = 64;

/// Argmax predictions over a whole dataset, evaluated in chunks.
pub fn predict_classes<T: Scalar>(
    model: &TinyClassifier<T>,
    images: &Tensor<T>,
) -> TensorResult<Vec<usize>> {
    let n = images.shape()[0];
    let row: usize = images.shape()[1..].iter().product();
    let mut preds = Vec::with_capacity(n);
    let mut at = 0;
    while at < n {
        let take = EVAL_CHUNK.min(n - at);
        let mut shape = images.shape().to_vec();
        shape[0] = take;
        let chunk = Tensor::new(
            shape,
            images.data()[at * row..(at + take) * row].to_vec(),
        )?;
        let logits = model.logits(&chunk)?;
        preds.extend(argmax_rows(&logits));
        at += take;
    }
    Ok(preds)
}

/// Fraction of argmax mispredictions.
pub fn top1_error<T: Scalar>(
    model: &TinyClassifier<T>,
    data: &Dataset<T>,
) -> Result<f64, TrainError> {
    let Labels::Classes(labels) = &data.labels else {
        return Err(TrainError::LabelMismatch);
    };
    let preds = predict_classes(model, &data.images)?;
    let wrong = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Fraction of non-ignored pixels misclassified.
pub fn pixel_error<T: Scalar>(
    model: &TinySegNet<T>,
    data: &Dataset<T>,
) -> Result<f64, TrainError> {
    let Labels::Masks { data: truth, .. } = &data.labels else {
        return Err(TrainError::LabelMismatch);
    };
    let preds = model.predict_masks(&data.images)?;
    let mut wrong = 0usize;
    let mut counted = 0usize;
    for (&p, &t) in preds.iter().zip(truth) {
        if t == IGNORE_LABEL {
            continue;
        }
        counted += 1;
        if p != t {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / counted.max(1) as f64)
}

/// Training error of either model kind (used for the per-epoch record).
pub fn train_error<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<f64, TrainError> {
    match model {
        Model::Classifier(m) => top1_error(m, data),
        Model::Segnet(m) => pixel_error(m, data),
    }
}

/// The default shift offsets: all of `{0,1,2} x {0,1,2}`.
pub fn default_shift_offsets() -> Vec<(isize, isize)> {
    let mut offsets = Vec::new();
    for dy in 0..3isize {
        for dx in 0..3isize {
            offsets.push((dy, dx));
        }
    }
    offsets
}

/// How often the classifier gives the same answer for two shifted copies of
/// the same image, over all ordered offset pairs (optionally capped).
pub fn shift_consistency<T: Scalar>(
    model: &TinyClassifier<T>,
    data: &Dataset<T>,
    offsets: &[(isize, isize)],
    pair_cap: Option<usize>,
) -> Result<f64, TrainError> {
    let mut preds_per_offset = Vec::with_capacity(offsets.len());
    for &(dy, dx) in offsets {
        let shifted = shift_images(&data.images, dy, dx);
        preds_per_offset.push(predict_classes(model, &shifted)?);
    }
    let mut pairs = Vec::new();
    for a in 0..offsets.len() {
        for b in 0..offsets.len() {
            pairs.push((a, b));
        }
    }
    if let Some(cap) = pair_cap {
        pairs.truncate(cap);
    }
    let n = data.len();
    let mut agreements = 0usize;
    for &(a, b) in &pairs {
        for i in 0..n {
            if preds_per_offset[a][i] == preds_per_offset[b][i] {
                agreements += 1;
            }
        }
    }
    Ok(agreements as f64 / (pairs.len() * n) as f64)
}

/// Top-1 error per corruption spec, plus the mean over kinds of per-kind
/// severity means. Errors are raw (no reference-model normalisation).
pub fn corruption_error<T: Scalar>(
    model: &TinyClassifier<T>,
    data: &Dataset<T>,
    specs: &[CorruptionSpec],
) -> Result<CorruptionTable, TrainError> {
    let Labels::Classes(labels) = &data.labels else {
        return Err(TrainError::LabelMismatch);
    };
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let corrupted = apply_corruption(&data.images, *spec);
        let preds = predict_classes(model, &corrupted)?;
        let wrong = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
        rows.push(CorruptionRow {
            corruption: spec.label(),
            severity: spec.severity,
            error: wrong as f64 / labels.len() as f64,
        });
    }
    // Mean over kinds of the per-kind severity means.
    let mut kinds: Vec<crate::data::CorruptionKind> = Vec::new();
    for spec in specs {
        if !kinds.contains(&spec.kind) {
            kinds.push(spec.kind);
        }
    }
    let mut kind_means = Vec::new();
    for kind in &kinds {
        let errs: Vec<f64> = rows
            .iter()
            .zip(specs)
            .filter(|(_, s)| s.kind == *kind)
            .map(|(r, _)| r.error)
            .collect();
        kind_means.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let mean = kind_means.iter().sum::<f64>() / kind_means.len().max(1) as f64;
    Ok(CorruptionTable { rows, mean })
}

/// Mean over ground-truth-present classes of `|pred & truth| / |pred | truth|`.
/// Pixels labelled 255 in the truth are excluded entirely.
pub fn miou(pred: &[u8], truth: &[u8], classes: usize) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mask lengths differ");
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    let mut present = vec![false; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t == IGNORE_LABEL {
            continue;
        }
        let t = t as usize;
        present[t] = true;
        if (p as usize) == t {
            inter[t] += 1;
            union[t] += 1;
        } else {
            union[t] += 1;
            if (p as usize) < classes {
                union[p as usize] += 1;
            }
        }
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        if present[c] {
            total += inter[c] as f64 / union[c] as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// mIoU of a segmentation model over a dataset.
pub fn model_miou<T: Scalar>(
    model: &TinySegNet<T>,
    data: &Dataset<T>,
) -> Result<f64, TrainError> {
    let Labels::Masks { data: truth, .. } = &data.labels else {
        return Err(TrainError::LabelMismatch);
    };
    let preds = model.predict_masks(&data.images)?;
    Ok(miou(&preds, truth, model.spec.classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shapes, CorruptionKind};
    use crate::lifting::LiftConfig;
    use crate::models::{PoolKind, TinyClassifierSpec};

    fn quick_model() -> TinyClassifier<f32> {
        TinyClassifier::build(
            TinyClassifierSpec {
                in_channels: 1,
                input_hw: (16, 16),
                block_channels: vec![2, 2],
                classes: 3,
                pooling: PoolKind::Avg,
                lift: LiftConfig::default(),
            },
            1,
        )
        .unwrap()
    }

    /// Forces the dense head to emit one constant winning class.
    fn make_constant(model: &mut TinyClassifier<f32>, class: usize) {
        for e in model.params_mut().entries_mut() {
            if e.name == "head.bias" {
                e.tensor.data_mut()[class] = 100.0;
            } else if e.name == "head.weight" {
                for v in e.tensor.data_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    #[test]
    fn top1_error_extremes() {
        let data = synth_shapes::<f32>(12, 16, 3, 2);
        let mut model = quick_model();
        make_constant(&mut model, 0);
        let err = top1_error(&model, &data).unwrap();
        // Constant class 0 on a balanced 3-class set: 2/3 wrong.
        assert!((err - 2.0 / 3.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&err));
    }

    #[test]
    fn constant_model_is_fully_shift_consistent() {
        let data = synth_shapes::<f32>(6, 16, 3, 2);
        let mut model = quick_model();
        make_constant(&mut model, 1);
        let c = shift_consistency(&model, &data, &default_shift_offsets(), None).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn identical_offsets_always_agree() {
        let data = synth_shapes::<f32>(4, 16, 3, 3);
        let model = quick_model();
        let c = shift_consistency(&model, &data, &[(0, 0)], None).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn corruption_table_shape_and_mean() {
        let data = synth_shapes::<f32>(9, 16, 3, 4);
        let mut model = quick_model();
        make_constant(&mut model, 0);
        let specs: Vec<CorruptionSpec> = [CorruptionKind::GaussianNoise, CorruptionKind::Shift]
            .into_iter()
            .flat_map(|kind| (1..=3).map(move |s| CorruptionSpec::new(kind, s, 5)))
            .collect();
        let table = corruption_error(&model, &data, &specs).unwrap();
        assert_eq!(table.rows.len(), 6);
        // Constant predictor: every corruption error equals the clean error.
        let clean = top1_error(&model, &data).unwrap();
        for row in &table.rows {
            assert!((row.error - clean).abs() < 1e-12);
        }
        // Mean equals the hand-average of per-kind means.
        let noise_mean = table.rows[..3].iter().map(|r| r.error).sum::<f64>() / 3.0;
        let shift_mean = table.rows[3..].iter().map(|r| r.error).sum::<f64>() / 3.0;
        assert!((table.mean - (noise_mean + shift_mean) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn miou_hand_fixtures() {
        // Perfect masks.
        let truth = [0u8, 1, 1, 2];
        assert_eq!(miou(&truth, &truth, 3), 1.0);

        // Disjoint binary masks: foreground IoU 0. Background is also
        // completely mispredicted here, so the mean is 0.
        let pred = [1u8, 0, 0, 0];
        let gt = [0u8, 1, 1, 1];
        assert_eq!(miou(&pred, &gt, 2), 0.0);

        // Pred covers half of a 4-pixel true region with no false positives:
        // IoU 0.5 for that class.
        let gt = [1u8, 1, 1, 1];
        let pred = [1u8, 1, 0, 0];
        let m = miou(&pred, &gt, 2);
        assert!((m - 0.5).abs() < 1e-12, "got {m}");

        // Ignored pixels are excluded.
        let gt = [1u8, IGNORE_LABEL, 1, 1];
        let pred = [1u8, 0, 1, 1];
        assert_eq!(miou(&pred, &gt, 2), 1.0);

        // 2x2 fixture with background: classes {0,1} both present.
        let gt = [0u8, 0, 1, 1];
        let pred = [0u8, 1, 1, 1];
        // class 0: inter 1, union 2 -> 0.5 ; class 1: inter 2, union 3.
        let expect = (0.5 + 2.0 / 3.0) / 2.0;
        assert!((miou(&pred, &gt, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn report_csv_has_rows() {
        let report = MetricsReport {
            top1_error: Some(0.25),
            consistency: Some(0.9),
            runtime_seconds: 1.5,
            ..Default::default()
        };
        let csv = report.to_csv();
        assert!(csv.contains("top1_error,,0.25"));
        assert!(csv.contains("consistency,,0.9"));
        let parsed: MetricsReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert_eq!(parsed, report);
    }
}
