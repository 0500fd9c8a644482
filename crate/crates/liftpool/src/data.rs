//! Data ingestion and synthesis: binary dataset parsers (IDX, CIFAR), the
//! netpbm image codec, a deterministic synthetic-shapes generator, and the
//! corruption / shift transforms used by the robustness harness.

pub mod cifar;
pub mod idx;
pub mod netpbm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{format}: {field}: {problem}")]
    Malformed {
        format: &'static str,
        field: &'static str,
        problem: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn malformed(
        format: &'static str,
        field: &'static str,
        problem: impl Into<String>,
    ) -> Self {
        DataError::Malformed {
            format,
            field,
            problem: problem.into(),
        }
    }
}

/// Mask value marking pixels excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Classification labels or per-pixel masks (255 = ignore).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Classes(Vec<usize>),
    Masks {
        data: Vec<u8>,
        height: usize,
        width: usize,
    },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Masks { data, height, width } => data.len() / (height * width),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images in `[0, 1]` with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Labels,
    pub split: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the selected rows into a batch tensor plus matching labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Labels) {
        let shape = self.images.shape();
        let row = shape[1..].iter().product::<usize>();
        let mut out_shape = shape.to_vec();
        out_shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
        }
        let images = Tensor::new(out_shape, data).expect("batch shape");
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(indices.iter().map(|&i| c[i]).collect()),
            Labels::Masks { data, height, width } => {
                let plane = height * width;
                let mut out = Vec::with_capacity(indices.len() * plane);
                for &i in indices {
                    out.extend_from_slice(&data[i * plane..(i + 1) * plane]);
                }
                Labels::Masks {
                    data: out,
                    height: *height,
                    width: *width,
                }
            }
        };
        (images, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Rectangle,
    Disk,
    Cross,
}

const SHAPE_KINDS: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Cross];

fn draw_shape(
    canvas: &mut [f64],
    mask: &mut [u8],
    size: usize,
    kind: ShapeKind,
    class_id: u8,
    rng: &mut Rng64,
) {
    // Big, clearly distinct silhouettes: elongated rectangles, round disks,
    // thin-armed crosses.
    let r = size / 5 + rng.below(size / 7 + 1);
    let cx = (r + 1 + rng.below(size - 2 * r - 1)) as isize;
    let cy = (r + 1 + rng.below(size - 2 * r - 1)) as isize;
    let level = rng.uniform(0.55, 0.95);
    let r = r as isize;
    let short = (r / 2).max(1);
    let wide_x = rng.below(2) == 0;
    let (rx, ry) = if wide_x { (r, short) } else { (short, r) };
    let arm = (r / 3).max(1);
    for y in 0..size as isize {
        for x in 0..size as isize {
            let inside = match kind {
                ShapeKind::Rectangle => (x - cx).abs() <= rx && (y - cy).abs() <= ry,
                ShapeKind::Disk => (x - cx).pow(2) + (y - cy).pow(2) <= r * r,
                ShapeKind::Cross => {
                    ((x - cx).abs() <= arm && (y - cy).abs() <= r)
                        || ((y - cy).abs() <= arm && (x - cx).abs() <= r)
                }
            };
            if inside {
                let at = (y * size as isize + x) as usize;
                canvas[at] = level;
                mask[at] = class_id + 1;
            }
        }
    }
}

fn synth_impl<T: Scalar>(
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
    segmentation: bool,
) -> Dataset<T> {
    assert!(size >= 16, "synthetic shapes need size >= 16");
    assert!(
        (1..=SHAPE_KINDS.len()).contains(&classes),
        "classes must be 1..=3 shape kinds"
    );
    let mut rng = Rng64::new(seed);
    let plane = size * size;
    let mut images = Vec::with_capacity(n * plane);
    let mut class_labels = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n * plane);
    for i in 0..n {
        // Round-robin class assignment keeps the histogram balanced.
        let class_id = i % classes;
        let mut canvas = vec![0.0f64; plane];
        let mut mask = vec![0u8; plane];
        draw_shape(
            &mut canvas,
            &mut mask,
            size,
            SHAPE_KINDS[class_id],
            class_id as u8,
            &mut rng,
        );
        images.extend(canvas.iter().map(|&v| T::from_f64_lossy(v)));
        class_labels.push(class_id);
        masks.extend_from_slice(&mask);
    }
    let images = Tensor::new(vec![n, 1, size, size], images).expect("synth shape");
    let labels = if segmentation {
        Labels::Masks {
            data: masks,
            height: size,
            width: size,
        }
    } else {
        Labels::Classes(class_labels)
    };
    Dataset {
        images,
        labels,
        split: "synth".into(),
    }
}

/// Grayscale images of one randomly placed rectangle / disk / cross each;
/// labels are the shape kind. Deterministic under `seed`.
pub fn synth_shapes<T: Scalar>(n: usize, size: usize, classes: usize, seed: u64) -> Dataset<T> {
    synth_impl(n, size, classes, seed, false)
}

/// Segmentation variant: per-pixel masks with background 0 and shape pixels
/// `kind + 1`.
pub fn synth_shapes_seg<T: Scalar>(n: usize, size: usize, classes: usize, seed: u64) -> Dataset<T> {
    synth_impl(n, size, classes, seed, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    BoxBlur,
    Shift,
}

pub const ALL_CORRUPTIONS: [CorruptionKind; 3] = [
    CorruptionKind::GaussianNoise,
    CorruptionKind::BoxBlur,
    CorruptionKind::Shift,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1..=3; higher is harder.
    pub severity: u8,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Self {
        assert!((1..=3).contains(&severity), "severity must be 1..=3");
        CorruptionSpec { kind, severity, seed }
    }

    pub fn label(&self) -> String {
        let kind = match self.kind {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::BoxBlur => "box-blur",
            CorruptionKind::Shift => "shift",
        };
        format!("{kind}-{}", self.severity)
    }
}

/// Edge-replicated translation of every image by `(dy, dx)` pixels.
pub fn shift_images<T: Scalar>(images: &Tensor<T>, dy: isize, dx: isize) -> Tensor<T> {
    let (n, c, h, w) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let mut out = Tensor::zeros(images.shape());
    let od = out.data_mut();
    let id = images.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h as isize {
            let sy = (y - dy).clamp(0, h as isize - 1) as usize;
            for x in 0..w as isize {
                let sx = (x - dx).clamp(0, w as isize - 1) as usize;
                od[base + y as usize * w + x as usize] = id[base + sy * w + sx];
            }
        }
    }
    out
}

fn box_blur<T: Scalar>(images: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let half = (k / 2) as isize;
    let norm = T::one() / T::from_usize_lossy(k * k);
    let mut out = Tensor::zeros(images.shape());
    let od = out.data_mut();
    let id = images.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = T::zero();
                for ky in -half..=half {
                    let sy = (y + ky).clamp(0, h as isize - 1) as usize;
                    for kx in -half..=half {
                        let sx = (x + kx).clamp(0, w as isize - 1) as usize;
                        acc += id[base + sy * w + sx];
                    }
                }
                od[base + y as usize * w + x as usize] = acc * norm;
            }
        }
    }
    out
}

/// Applies one corruption at its severity. Noise is seeded and clamped back
/// to `[0, 1]`; blur and shift are deterministic by construction.
pub fn apply_corruption<T: Scalar>(images: &Tensor<T>, spec: CorruptionSpec) -> Tensor<T> {
    assert!((1..=3).contains(&spec.severity), "severity must be 1..=3");
    let level = (spec.severity - 1) as usize;
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = [0.05, 0.1, 0.2][level];
            let mut rng = Rng64::new(spec.seed);
            let mut out = images.clone();
            for v in out.data_mut() {
                let noisy = v.to_f64_lossy() + sigma * rng.next_normal();
                *v = T::from_f64_lossy(noisy.clamp(0.0, 1.0));
            }
            out
        }
        CorruptionKind::BoxBlur => box_blur(images, [3usize, 5, 7][level]),
        CorruptionKind::Shift => {
            let px = [1isize, 2, 4][level];
            shift_images(images, px, px)
        }
    }
}
