//! Dense row-major tensor and the elementwise / reduction / axis primitives
//! everything else builds on. Layout is always contiguous row-major; there are
//! no strides, views or broadcasting beyond scalar-with-tensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} is empty or has a zero dimension")]
    BadShape { shape: Vec<usize> },
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },
    #[error("{what} must be divisible by {by}, got {got}")]
    Divisibility {
        what: &'static str,
        by: usize,
        got: usize,
    },
    #[error("kernel size must be odd, got {got}")]
    EvenKernel { got: usize },
    #[error("axis {axis} has odd length {len}; pad to even first")]
    OddLength { axis: usize, len: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    BadRank { expected: usize, shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Boundary extension used by convolution and the lifting steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    Replicate,
    /// Half-sample mirror including the edge sample: `[.. x1 x0 | x0 x1 ..]`.
    #[default]
    Symmetric,
    Periodic,
}

impl PadMode {
    /// Maps a possibly out-of-range position onto a source index.
    /// `None` means "read a zero" (only for [`PadMode::Zero`]).
    pub fn resolve(self, pos: isize, len: usize) -> Option<usize> {
        debug_assert!(len >= 1);
        let n = len as isize;
        if (0..n).contains(&pos) {
            return Some(pos as usize);
        }
        match self {
            PadMode::Zero => None,
            PadMode::Replicate => Some(pos.clamp(0, n - 1) as usize),
            PadMode::Symmetric => {
                let mut p = pos;
                loop {
                    if p < 0 {
                        p = -p - 1;
                    } else if p >= n {
                        p = 2 * n - 1 - p;
                    } else {
                        return Some(p as usize);
                    }
                }
            }
            PadMode::Periodic => Some(pos.rem_euclid(n) as usize),
        }
    }
}

/// Dense n-dimensional array. Conventions: `[N, C, L]` for 1-D features,
/// `[N, C, H, W]` for 2-D feature maps, `[1]` for scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_numel(shape: &[usize]) -> TensorResult<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::BadShape {
            shape: shape.to_vec(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorError::BadShape {
            shape: shape.to_vec(),
        })
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> TensorResult<Self> {
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on an empty or zero-sized shape; use [`Tensor::new`] on untrusted input.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> TensorResult<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        // The only permitted broadcast: scalar with tensor.
        if other.is_scalar() {
            let b = other.data[0];
            return Ok(self.map(|a| f(a, b)));
        }
        if self.is_scalar() {
            let a = self.data[0];
            return Ok(Tensor {
                shape: other.shape.clone(),
                data: other.data.iter().map(|&b| f(a, b)).collect(),
            });
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })
    }

    pub fn add(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn tanh(&self) -> Self {
        self.map(|v| v.tanh())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.data.len())
    }

    /// Maximum value and its lowest flat index (deterministic tie-break).
    pub fn max_with_argmax(&self) -> (T, usize) {
        let mut best = self.data[0];
        let mut arg = 0usize;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> TensorResult<Self> {
        let expected = checked_numel(&shape)?;
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    fn axis_split(&self, axis: usize) -> TensorResult<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                shape: self.shape.clone(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        Ok((outer, len, inner))
    }

    /// Appends one replicated edge slice along `axis`.
    pub fn pad_edge(&self, axis: usize) -> TensorResult<Self> {
        let (outer, len, inner) = self.axis_split(axis)?;
        let mut shape = self.shape.clone();
        shape[axis] = len + 1;
        let mut data = Vec::with_capacity(outer * (len + 1) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
            data.extend_from_slice(&self.data[base + (len - 1) * inner..base + len * inner]);
        }
        Ok(Tensor { shape, data })
    }

    /// Replicate-pads `axis` to even length; returns the original length so a
    /// later [`Tensor::crop_axis`] restores the input exactly.
    pub fn pad_to_even(&self, axis: usize) -> TensorResult<(Self, usize)> {
        let (_, len, _) = self.axis_split(axis)?;
        if len % 2 == 0 {
            Ok((self.clone(), len))
        } else {
            Ok((self.pad_edge(axis)?, len))
        }
    }

    /// Keeps the first `len` positions along `axis`.
    pub fn crop_axis(&self, axis: usize, len: usize) -> TensorResult<Self> {
        let (outer, full, inner) = self.axis_split(axis)?;
        if len == 0 || len > full {
            return Err(TensorError::Invalid(format!(
                "crop length {len} invalid for axis of length {full}"
            )));
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor { shape, data })
    }

    /// Polyphase split along `axis`: positions {0,2,..} and {1,3,..} (0-based).
    /// The axis length must be even.
    pub fn slice_even_odd(&self, axis: usize) -> TensorResult<(Self, Self)> {
        let (outer, len, inner) = self.axis_split(axis)?;
        if len % 2 != 0 {
            return Err(TensorError::OddLength { axis, len });
        }
        let half = len / 2;
        let mut shape = self.shape.clone();
        shape[axis] = half;
        let mut even = Vec::with_capacity(outer * half * inner);
        let mut odd = Vec::with_capacity(outer * half * inner);
        for o in 0..outer {
            let base = o * len * inner;
            for k in 0..half {
                let e = base + (2 * k) * inner;
                let d = base + (2 * k + 1) * inner;
                even.extend_from_slice(&self.data[e..e + inner]);
                odd.extend_from_slice(&self.data[d..d + inner]);
            }
        }
        Ok((
            Tensor {
                shape: shape.clone(),
                data: even,
            },
            Tensor { shape, data: odd },
        ))
    }

    /// Inverse of [`Tensor::slice_even_odd`]: even/odd halves interleaved along `axis`.
    pub fn interleave(even: &Self, odd: &Self, axis: usize) -> TensorResult<Self> {
        if even.shape != odd.shape {
            return Err(TensorError::ShapeMismatch {
                op: "interleave",
                lhs: even.shape.clone(),
                rhs: odd.shape.clone(),
            });
        }
        let (outer, half, inner) = even.axis_split(axis)?;
        let mut shape = even.shape.clone();
        shape[axis] = 2 * half;
        let mut data = Vec::with_capacity(outer * 2 * half * inner);
        for o in 0..outer {
            let base = o * half * inner;
            for k in 0..half {
                let s = base + k * inner;
                data.extend_from_slice(&even.data[s..s + inner]);
                data.extend_from_slice(&odd.data[s..s + inner]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> TensorResult<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let (outer, _, inner) = first.axis_split(axis)?;
        let mut total_len = 0usize;
        for p in parts {
            if p.shape.len() != first.shape.len()
                || p.shape[..axis] != first.shape[..axis]
                || p.shape[axis + 1..] != first.shape[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total_len += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_len;
        let mut data = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis];
                let base = o * len * inner;
                data.extend_from_slice(&p.data[base..base + len * inner]);
            }
        }
        Ok(Tensor { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn construction_rejects_zero_size_and_length_mismatch() {
        assert!(matches!(
            Tensor::<f64>::new(vec![], vec![]),
            Err(TensorError::BadShape { .. })
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 0], vec![]),
            Err(TensorError::BadShape { .. })
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn elementwise_examples() {
        let a = t64(&[2], &[1.0, 2.0]);
        let b = t64(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.sub(&a).unwrap().data(), &[0.0, 0.0]);
        let x = t64(&[2], &[2.0, 3.0]);
        let half = Tensor::scalar(0.5);
        assert_eq!(x.mul(&half).unwrap().data(), &[1.0, 1.5]);
        assert!(matches!(
            a.add(&t64(&[3], &[0.0; 3])),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn activations() {
        let x = t64(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t64(&[1], &[0.0]).tanh().data(), &[0.0]);
        assert!((t64(&[1], &[1e9]).tanh().data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reductions() {
        assert_eq!(t64(&[3], &[1.0, 2.0, 3.0]).sum(), 6.0);
        assert_eq!(t64(&[2], &[2.0, 4.0]).mean(), 3.0);
        // Lowest flat index wins ties.
        assert_eq!(t64(&[3], &[5.0, 7.0, 7.0]).max_with_argmax(), (7.0, 1));
    }

    #[test]
    fn pad_to_even_cases() {
        let (p, orig) = t64(&[3], &[1.0, 2.0, 3.0]).pad_to_even(0).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(orig, 3);

        let (p, orig) = t64(&[2], &[1.0, 2.0]).pad_to_even(0).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(orig, 2);

        // Pads along the last axis of a 2-D tensor.
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (p, orig) = x.pad_to_even(1).unwrap();
        assert_eq!(p.shape(), &[2, 4]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0]);
        assert_eq!(orig, 3);
    }

    #[test]
    fn split_and_interleave_convention() {
        let x = t64(&[6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (e, o) = x.slice_even_odd(0).unwrap();
        assert_eq!(e.data(), &[1.0, 3.0, 5.0]);
        assert_eq!(o.data(), &[2.0, 4.0, 6.0]);
        let merged = Tensor::interleave(&e, &o, 0).unwrap();
        assert_eq!(merged, x);
        assert!(matches!(
            t64(&[3], &[0.0; 3]).slice_even_odd(0),
            Err(TensorError::OddLength { .. })
        ));
    }

    #[test]
    fn pad_mode_resolution() {
        assert_eq!(PadMode::Zero.resolve(-1, 4), None);
        assert_eq!(PadMode::Replicate.resolve(-2, 4), Some(0));
        assert_eq!(PadMode::Replicate.resolve(5, 4), Some(3));
        assert_eq!(PadMode::Symmetric.resolve(-1, 4), Some(0));
        assert_eq!(PadMode::Symmetric.resolve(-2, 4), Some(1));
        assert_eq!(PadMode::Symmetric.resolve(4, 4), Some(3));
        assert_eq!(PadMode::Symmetric.resolve(5, 4), Some(2));
        assert_eq!(PadMode::Periodic.resolve(-1, 4), Some(3));
        assert_eq!(PadMode::Periodic.resolve(4, 4), Some(0));
        // One-element axes stay on the single sample under every mode but Zero.
        assert_eq!(PadMode::Symmetric.resolve(2, 1), Some(0));
        assert_eq!(PadMode::Periodic.resolve(-3, 1), Some(0));
    }

    #[test]
    fn concat_shapes() {
        let a = t64(&[1, 2], &[1.0, 2.0]);
        let b = t64(&[1, 3], &[3.0, 4.0, 5.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 5]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    proptest! {
        #[test]
        fn pad_then_crop_is_identity(len in 1usize..20, rows in 1usize..4) {
            let x = Tensor::<f64>::from_fn(&[rows, len], |i| i as f64 * 0.5 - 3.0);
            let (p, orig) = x.pad_to_even(1).unwrap();
            prop_assert_eq!(orig, len);
            prop_assert_eq!(p.crop_axis(1, orig).unwrap(), x);
        }

        #[test]
        fn split_merge_roundtrip(half in 1usize..16, inner in 1usize..5) {
            let x = Tensor::<f64>::from_fn(&[2 * half, inner], |i| (i as f64).sin());
            let (e, o) = x.slice_even_odd(0).unwrap();
            prop_assert_eq!(Tensor::interleave(&e, &o, 0).unwrap(), x);
        }
    }
}
