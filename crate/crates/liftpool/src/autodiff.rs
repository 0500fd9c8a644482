//! Reverse-mode automatic differentiation over the fixed op set the lifting
//! layers, losses and tiny models need.
//!
//! A [`Tape`] is an append-only list of nodes; inputs always reference earlier
//! ids, so the list is already topologically ordered and [`Tape::backward`]
//! is a single reverse sweep that visits each node once. Forward values can be
//! re-evaluated from the recorded graph with perturbed leaves, which is what
//! [`gradient_check`] uses for its central finite differences.

use crate::conv;
use crate::pools::{self, MaxIndices, PoolConfig};
use crate::scalar::Scalar;
use crate::tensor::{PadMode, Tensor, TensorError, TensorResult};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    ScalarMul(VarId, T),
    Relu(VarId),
    Tanh(VarId),
    Sum(VarId),
    Mean(VarId),
    /// Sum of squares, reduced to a scalar.
    SquaredL2(VarId),
    /// Elementwise `sqrt(x + eps)`; used to build L2-norm losses.
    SqrtEps(VarId, T),
    Linear {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    Conv1d {
        x: VarId,
        w: VarId,
        b: VarId,
        groups: usize,
        pad: PadMode,
        axis: usize,
    },
    FixedConv1d {
        x: VarId,
        taps: [T; 3],
        pad: PadMode,
        axis: usize,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: PadMode,
    },
    MaxPool2d {
        x: VarId,
        cfg: PoolConfig,
        indices: MaxIndices,
    },
    AvgPool2d {
        x: VarId,
        cfg: PoolConfig,
    },
    MaxUnpool2d {
        y: VarId,
        indices: MaxIndices,
        out_h: usize,
        out_w: usize,
    },
    Reshape(VarId),
    Concat {
        parts: Vec<VarId>,
        axis: usize,
    },
    SliceParity {
        x: VarId,
        axis: usize,
        odd: bool,
    },
    Interleave {
        even: VarId,
        odd: VarId,
        axis: usize,
    },
    PadEdge {
        x: VarId,
        axis: usize,
    },
    Crop {
        x: VarId,
        axis: usize,
        len: usize,
    },
    SoftmaxCrossEntropy {
        logits: VarId,
        labels: Vec<usize>,
    },
    /// Pixelwise cross-entropy over `[N, C, H, W]` logits with a flat
    /// `N*H*W` mask; mask value 255 means "ignore this pixel".
    PixelCrossEntropy {
        logits: VarId,
        mask: Vec<u8>,
    },
}

pub use crate::data::IGNORE_LABEL;

/// Gradient map produced by [`Tape::backward`]. Every `requires_grad` leaf is
/// present (zero-filled when the loss never reached it); interior nodes keep
/// their accumulated gradients too.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a `requires_grad` leaf; panics if `id` is not one.
    pub fn wrt(&self, id: VarId) -> &Tensor<T> {
        self.get(id).expect("gradient present for requires_grad leaf")
    }
}

pub struct Tape<T: Scalar> {
    ops: Vec<Op<T>>,
    values: Vec<Tensor<T>>,
    requires: Vec<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let m = row.iter().fold(row[0], |a, &b| if b > a { b } else { a });
    let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            requires: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn requires_grad(&self, id: VarId) -> bool {
        self.requires[id.0]
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires: bool) -> VarId {
        let id = VarId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.requires.push(requires);
        id
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> VarId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.leaf(value, false)
    }

    fn any_requires(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.requires[id.0])
    }

    fn record(&mut self, op: Op<T>) -> TensorResult<VarId> {
        let value = eval_op(&op, &self.values)?;
        let requires = self.any_requires(&op_inputs(&op));
        Ok(self.push(op, value, requires))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> TensorResult<VarId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> TensorResult<VarId> {
        self.record(Op::Sub(a, b))
    }

    pub fn scalar_mul(&mut self, a: VarId, c: T) -> TensorResult<VarId> {
        self.record(Op::ScalarMul(a, c))
    }

    pub fn relu(&mut self, a: VarId) -> TensorResult<VarId> {
        self.record(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: VarId) -> TensorResult<VarId> {
        self.record(Op::Tanh(a))
    }

    pub fn sum(&mut self, a: VarId) -> TensorResult<VarId> {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: VarId) -> TensorResult<VarId> {
        self.record(Op::Mean(a))
    }

    pub fn squared_l2(&mut self, a: VarId) -> TensorResult<VarId> {
        self.record(Op::SquaredL2(a))
    }

    pub fn sqrt_eps(&mut self, a: VarId, eps: T) -> TensorResult<VarId> {
        self.record(Op::SqrtEps(a, eps))
    }

    /// Dense layer: `x [N,F] * w [F,O] + b [O]`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> TensorResult<VarId> {
        self.record(Op::Linear { x, w, b })
    }

    pub fn conv1d_grouped(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        groups: usize,
        pad: PadMode,
    ) -> TensorResult<VarId> {
        self.conv1d_grouped_axis(x, w, b, groups, pad, 2)
    }

    pub fn conv1d_grouped_axis(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        groups: usize,
        pad: PadMode,
        axis: usize,
    ) -> TensorResult<VarId> {
        self.record(Op::Conv1d {
            x,
            w,
            b,
            groups,
            pad,
            axis,
        })
    }

    /// Parameter-free three-tap filter along `axis` (classical lift operators).
    pub fn fixed_conv1d(
        &mut self,
        x: VarId,
        taps: [T; 3],
        pad: PadMode,
        axis: usize,
    ) -> TensorResult<VarId> {
        self.record(Op::FixedConv1d { x, taps, pad, axis })
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: PadMode,
    ) -> TensorResult<VarId> {
        self.record(Op::Conv2d { x, w, b, stride, pad })
    }

    /// Max pooling; returns the pooled value and the recorded argmax indices
    /// the paired up-pooling consumes.
    pub fn max_pool2d(&mut self, x: VarId, cfg: PoolConfig) -> TensorResult<(VarId, MaxIndices)> {
        let (value, indices) = pools::max_pool2d(&self.values[x.0], cfg)?;
        let requires = self.requires[x.0];
        let id = self.push(
            Op::MaxPool2d {
                x,
                cfg,
                indices: indices.clone(),
            },
            value,
            requires,
        );
        Ok((id, indices))
    }

    pub fn avg_pool2d(&mut self, x: VarId, cfg: PoolConfig) -> TensorResult<VarId> {
        self.record(Op::AvgPool2d { x, cfg })
    }

    /// Up-pooling through recorded argmax indices; the indices are constants,
    /// gradient flows only through `y`.
    pub fn max_unpool2d(
        &mut self,
        y: VarId,
        indices: &MaxIndices,
        out_h: usize,
        out_w: usize,
    ) -> TensorResult<VarId> {
        self.record(Op::MaxUnpool2d {
            y,
            indices: indices.clone(),
            out_h,
            out_w,
        })
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> TensorResult<VarId> {
        let value = self.values[x.0].reshape(shape)?;
        let requires = self.requires[x.0];
        Ok(self.push(Op::Reshape(x), value, requires))
    }

    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> TensorResult<VarId> {
        self.record(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }

    /// Polyphase split: `(positions 0,2,4,.. , positions 1,3,5,..)` along `axis`.
    pub fn split_even_odd(&mut self, x: VarId, axis: usize) -> TensorResult<(VarId, VarId)> {
        let even = self.record(Op::SliceParity { x, axis, odd: false })?;
        let odd = self.record(Op::SliceParity { x, axis, odd: true })?;
        Ok((even, odd))
    }

    pub fn interleave(&mut self, even: VarId, odd: VarId, axis: usize) -> TensorResult<VarId> {
        self.record(Op::Interleave { even, odd, axis })
    }

    pub fn pad_edge(&mut self, x: VarId, axis: usize) -> TensorResult<VarId> {
        self.record(Op::PadEdge { x, axis })
    }

    pub fn crop(&mut self, x: VarId, axis: usize, len: usize) -> TensorResult<VarId> {
        self.record(Op::Crop { x, axis, len })
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> TensorResult<VarId> {
        let shape = self.values[logits.0].shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                shape: shape.to_vec(),
            });
        }
        let (n, classes) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(TensorError::Invalid(format!(
                "expected {n} labels, got {}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::Invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        self.record(Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
        })
    }

    /// Mean over non-ignored pixels of the per-pixel cross-entropy. The mask
    /// is flat `[N, H, W]` row-major with 255 as the ignore label.
    pub fn pixel_cross_entropy(&mut self, logits: VarId, mask: &[u8]) -> TensorResult<VarId> {
        let shape = self.values[logits.0].shape();
        if shape.len() != 4 {
            return Err(TensorError::BadRank {
                expected: 4,
                shape: shape.to_vec(),
            });
        }
        let (n, classes, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if mask.len() != n * h * w {
            return Err(TensorError::Invalid(format!(
                "mask length {} does not match {n}x{h}x{w} pixels",
                mask.len()
            )));
        }
        if let Some(bad) = mask
            .iter()
            .find(|&&m| m != IGNORE_LABEL && m as usize >= classes)
        {
            return Err(TensorError::Invalid(format!(
                "mask label {bad} out of range for {classes} classes"
            )));
        }
        if mask.iter().all(|&m| m == IGNORE_LABEL) {
            return Err(TensorError::Invalid("all pixels ignored".into()));
        }
        self.record(Op::PixelCrossEntropy {
            logits,
            mask: mask.to_vec(),
        })
    }

    /// Reverse sweep from a scalar loss. Visits each node exactly once in
    /// reverse record order; repeated uses of a variable accumulate by sum.
    pub fn backward(&self, loss: VarId) -> TensorResult<Gradients<T>> {
        if !self.values[loss.0].is_scalar() {
            return Err(TensorError::Invalid(format!(
                "loss must be scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            if !self.requires[id] {
                grads[id] = None;
                continue;
            }
            let Some(grad_out) = grads[id].clone() else {
                continue;
            };
            op_backward(&self.ops[id], &self.values[id], &grad_out, &self.values, &mut grads);
        }
        // Unreached requires_grad leaves still get (zero) gradients.
        for id in 0..self.ops.len() {
            if matches!(self.ops[id], Op::Leaf) && self.requires[id] && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(self.values[id].shape()));
            }
        }
        Ok(Gradients { grads })
    }

    /// Re-evaluates the recorded graph with some leaf values replaced and
    /// returns the value at `target`.
    pub fn replay(&self, overrides: &[(VarId, Tensor<T>)], target: VarId) -> TensorResult<Tensor<T>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(target.0 + 1);
        for id in 0..=target.0 {
            let value = match &self.ops[id] {
                Op::Leaf => {
                    let replaced = overrides.iter().find(|(o, _)| o.0 == id);
                    match replaced {
                        Some((_, v)) => v.clone(),
                        None => self.values[id].clone(),
                    }
                }
                Op::Reshape(x) => values[x.0].reshape(self.values[id].shape().to_vec())?,
                op => eval_op(op, &values)?,
            };
            values.push(value);
        }
        Ok(values.pop().expect("target evaluated"))
    }
}

fn op_inputs<T: Scalar>(op: &Op<T>) -> Vec<VarId> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
        Op::ScalarMul(a, _)
        | Op::Relu(a)
        | Op::Tanh(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SquaredL2(a)
        | Op::SqrtEps(a, _)
        | Op::Reshape(a) => vec![*a],
        Op::Linear { x, w, b } => vec![*x, *w, *b],
        Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
        Op::FixedConv1d { x, .. } => vec![*x],
        Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
        Op::MaxPool2d { x, .. } | Op::AvgPool2d { x, .. } => vec![*x],
        Op::MaxUnpool2d { y, .. } => vec![*y],
        Op::Concat { parts, .. } => parts.clone(),
        Op::SliceParity { x, .. } => vec![*x],
        Op::Interleave { even, odd, .. } => vec![*even, *odd],
        Op::PadEdge { x, .. } => vec![*x],
        Op::Crop { x, .. } => vec![*x],
        Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        Op::PixelCrossEntropy { logits, .. } => vec![*logits],
    }
}

fn eval_op<T: Scalar>(op: &Op<T>, values: &[Tensor<T>]) -> TensorResult<Tensor<T>> {
    let v = |id: &VarId| &values[id.0];
    match op {
        Op::Leaf => unreachable!("leaves are never re-evaluated"),
        Op::Add(a, b) => v(a).add(v(b)),
        Op::Sub(a, b) => v(a).sub(v(b)),
        Op::ScalarMul(a, c) => Ok(v(a).scale(*c)),
        Op::Relu(a) => Ok(v(a).relu()),
        Op::Tanh(a) => Ok(v(a).tanh()),
        Op::Sum(a) => Ok(Tensor::scalar(v(a).sum())),
        Op::Mean(a) => Ok(Tensor::scalar(v(a).mean())),
        Op::SquaredL2(a) => {
            let total = v(a).data().iter().fold(T::zero(), |acc, &x| acc + x * x);
            Ok(Tensor::scalar(total))
        }
        Op::SqrtEps(a, eps) => Ok(v(a).map(|x| (x + *eps).sqrt())),
        Op::Linear { x, w, b } => {
            let (xv, wv, bv) = (v(x), v(w), v(b));
            if xv.shape().len() != 2 || wv.shape().len() != 2 {
                return Err(TensorError::BadRank {
                    expected: 2,
                    shape: xv.shape().to_vec(),
                });
            }
            let (n, f) = (xv.shape()[0], xv.shape()[1]);
            let (fw, o) = (wv.shape()[0], wv.shape()[1]);
            if f != fw || bv.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    lhs: xv.shape().to_vec(),
                    rhs: wv.shape().to_vec(),
                });
            }
            let mut y = Tensor::zeros(&[n, o]);
            let yd = y.data_mut();
            for i in 0..n {
                let x_row = &xv.data()[i * f..(i + 1) * f];
                let y_row = &mut yd[i * o..(i + 1) * o];
                y_row.copy_from_slice(bv.data());
                for (j, &xj) in x_row.iter().enumerate() {
                    let w_row = &wv.data()[j * o..(j + 1) * o];
                    for (c, &wc) in w_row.iter().enumerate() {
                        y_row[c] += xj * wc;
                    }
                }
            }
            Ok(y)
        }
        Op::Conv1d {
            x,
            w,
            b,
            groups,
            pad,
            axis,
        } => conv::conv1d_grouped_axis(v(x), v(w), v(b), *groups, *pad, *axis),
        Op::FixedConv1d { x, taps, pad, axis } => conv::fixed_conv1d_axis(v(x), *taps, *pad, *axis),
        Op::Conv2d { x, w, b, stride, pad } => conv::conv2d(v(x), v(w), v(b), *stride, *pad),
        Op::MaxPool2d { x, cfg, .. } => Ok(pools::max_pool2d(v(x), *cfg)?.0),
        Op::AvgPool2d { x, cfg } => pools::avg_pool2d(v(x), *cfg),
        Op::MaxUnpool2d {
            y,
            indices,
            out_h,
            out_w,
        } => pools::max_up_pool2d(v(y), indices, *out_h, *out_w),
        Op::Reshape(_) => unreachable!("reshape handled by the callers"),
        Op::Concat { parts, axis } => {
            let refs: Vec<&Tensor<T>> = parts.iter().map(v).collect();
            Tensor::concat(&refs, *axis)
        }
        Op::SliceParity { x, axis, odd } => {
            let (even_part, odd_part) = v(x).slice_even_odd(*axis)?;
            Ok(if *odd { odd_part } else { even_part })
        }
        Op::Interleave { even, odd, axis } => Tensor::interleave(v(even), v(odd), *axis),
        Op::PadEdge { x, axis } => v(x).pad_edge(*axis),
        Op::Crop { x, axis, len } => v(x).crop_axis(*axis, *len),
        Op::SoftmaxCrossEntropy { logits, labels } => {
            let lv = v(logits);
            let (n, classes) = (lv.shape()[0], lv.shape()[1]);
            let mut total = T::zero();
            for i in 0..n {
                let probs = softmax_row(&lv.data()[i * classes..(i + 1) * classes]);
                total -= probs[labels[i]].ln();
            }
            Ok(Tensor::scalar(total / T::from_usize_lossy(n)))
        }
        Op::PixelCrossEntropy { logits, mask } => {
            let lv = v(logits);
            let (n, classes, h, w) = (lv.shape()[0], lv.shape()[1], lv.shape()[2], lv.shape()[3]);
            let plane = h * w;
            let mut total = T::zero();
            let mut counted = 0usize;
            let mut row = vec![T::zero(); classes];
            for img in 0..n {
                for p in 0..plane {
                    let label = mask[img * plane + p];
                    if label == IGNORE_LABEL {
                        continue;
                    }
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = lv.data()[(img * classes + c) * plane + p];
                    }
                    let probs = softmax_row(&row);
                    total -= probs[label as usize].ln();
                    counted += 1;
                }
            }
            Ok(Tensor::scalar(total / T::from_usize_lossy(counted)))
        }
    }
}

/// Sums `grad` down to `shape` when the forward broadcast a scalar operand.
fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        grad.clone()
    } else {
        debug_assert_eq!(shape.iter().product::<usize>(), 1);
        Tensor::new(shape.to_vec(), vec![grad.sum()]).expect("scalar reduce")
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: VarId, delta: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => {
            *existing = existing.add(&delta).expect("gradient shapes agree");
        }
        slot @ None => *slot = Some(delta),
    }
}

fn op_backward<T: Scalar>(
    op: &Op<T>,
    value: &Tensor<T>,
    grad_out: &Tensor<T>,
    values: &[Tensor<T>],
    grads: &mut [Option<Tensor<T>>],
) {
    let v = |id: &VarId| &values[id.0];
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, reduce_to_shape(grad_out, v(a).shape()));
            accumulate(grads, *b, reduce_to_shape(grad_out, v(b).shape()));
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, reduce_to_shape(grad_out, v(a).shape()));
            accumulate(
                grads,
                *b,
                reduce_to_shape(&grad_out.scale(-T::one()), v(b).shape()),
            );
        }
        Op::ScalarMul(a, c) => accumulate(grads, *a, grad_out.scale(*c)),
        Op::Relu(a) => {
            // Subgradient 0 at exactly 0.
            let mut dx = grad_out.clone();
            for (g, &x) in dx.data_mut().iter_mut().zip(v(a).data()) {
                if x <= T::zero() {
                    *g = T::zero();
                }
            }
            accumulate(grads, *a, dx);
        }
        Op::Tanh(a) => {
            let mut dx = grad_out.clone();
            for (g, &y) in dx.data_mut().iter_mut().zip(value.data()) {
                *g *= T::one() - y * y;
            }
            accumulate(grads, *a, dx);
        }
        Op::Sum(a) => accumulate(grads, *a, Tensor::full(v(a).shape(), grad_out.item())),
        Op::Mean(a) => {
            let scale = grad_out.item() / T::from_usize_lossy(v(a).numel());
            accumulate(grads, *a, Tensor::full(v(a).shape(), scale));
        }
        Op::SquaredL2(a) => {
            let two_g = grad_out.item() * (T::one() + T::one());
            accumulate(grads, *a, v(a).scale(two_g));
        }
        Op::SqrtEps(a, _) => {
            let half = T::from_f64_lossy(0.5);
            let mut dx = grad_out.clone();
            for (g, &y) in dx.data_mut().iter_mut().zip(value.data()) {
                *g = *g * half / y;
            }
            accumulate(grads, *a, dx);
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (v(x), v(w));
            let (n, f) = (xv.shape()[0], xv.shape()[1]);
            let o = wv.shape()[1];
            let g = grad_out.data();
            let mut dx = Tensor::zeros(xv.shape());
            let mut dw = Tensor::zeros(wv.shape());
            let mut db = Tensor::zeros(&[o]);
            for i in 0..n {
                for j in 0..f {
                    let mut acc = T::zero();
                    for c in 0..o {
                        acc += wv.data()[j * o + c] * g[i * o + c];
                    }
                    dx.data_mut()[i * f + j] = acc;
                }
            }
            for j in 0..f {
                for c in 0..o {
                    let mut acc = T::zero();
                    for i in 0..n {
                        acc += xv.data()[i * f + j] * g[i * o + c];
                    }
                    dw.data_mut()[j * o + c] = acc;
                }
            }
            for c in 0..o {
                let mut acc = T::zero();
                for i in 0..n {
                    acc += g[i * o + c];
                }
                db.data_mut()[c] = acc;
            }
            accumulate(grads, *x, dx);
            accumulate(grads, *w, dw);
            accumulate(grads, *b, db);
        }
        Op::Conv1d {
            x,
            w,
            b,
            groups,
            pad,
            axis,
        } => {
            let (dx, dw, db) =
                conv::conv1d_grouped_axis_backward(v(x), v(w), grad_out, *groups, *pad, *axis);
            accumulate(grads, *x, dx);
            accumulate(grads, *w, dw);
            accumulate(grads, *b, db);
        }
        Op::FixedConv1d { x, taps, pad, axis } => {
            let dx = conv::fixed_conv1d_axis_backward(v(x).shape(), *taps, grad_out, *pad, *axis);
            accumulate(grads, *x, dx);
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (dx, dw, db) = conv::conv2d_backward(v(x), v(w), grad_out, *stride, *pad);
            accumulate(grads, *x, dx);
            accumulate(grads, *w, dw);
            accumulate(grads, *b, db);
        }
        Op::MaxPool2d { x, cfg, indices } => {
            let xv = v(x);
            let (h, w) = (xv.shape()[2], xv.shape()[3]);
            let (ph, pw) = (value.shape()[2], value.shape()[3]);
            let k = cfg.kernel;
            let s = cfg.stride;
            let mut dx = Tensor::zeros(xv.shape());
            let dxd = dx.data_mut();
            let g = grad_out.data();
            for plane in 0..xv.shape()[0] * xv.shape()[1] {
                for oy in 0..ph {
                    for ox in 0..pw {
                        let within = indices.data()[plane * ph * pw + oy * pw + ox];
                        let ty = oy * s + within / k;
                        let tx = ox * s + within % k;
                        dxd[plane * h * w + ty * w + tx] += g[plane * ph * pw + oy * pw + ox];
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::AvgPool2d { x, cfg } => {
            let xv = v(x);
            let (h, w) = (xv.shape()[2], xv.shape()[3]);
            let (ph, pw) = (value.shape()[2], value.shape()[3]);
            let k = cfg.kernel;
            let s = cfg.stride;
            let norm = T::one() / T::from_usize_lossy(k * k);
            let mut dx = Tensor::zeros(xv.shape());
            let dxd = dx.data_mut();
            let g = grad_out.data();
            for plane in 0..xv.shape()[0] * xv.shape()[1] {
                for oy in 0..ph {
                    for ox in 0..pw {
                        let gv = g[plane * ph * pw + oy * pw + ox] * norm;
                        for ky in 0..k {
                            for kx in 0..k {
                                let t = plane * h * w + (oy * s + ky) * w + (ox * s + kx);
                                dxd[t] += gv;
                            }
                        }
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::MaxUnpool2d {
            y,
            indices,
            out_h,
            out_w,
        } => {
            let yv = v(y);
            let (ph, pw) = (yv.shape()[2], yv.shape()[3]);
            let k = indices.kernel();
            let s = indices.stride();
            let mut dy = Tensor::zeros(yv.shape());
            let dyd = dy.data_mut();
            let g = grad_out.data();
            for plane in 0..yv.shape()[0] * yv.shape()[1] {
                for oy in 0..ph {
                    for ox in 0..pw {
                        let within = indices.data()[plane * ph * pw + oy * pw + ox];
                        let ty = oy * s + within / k;
                        let tx = ox * s + within % k;
                        dyd[plane * ph * pw + oy * pw + ox] =
                            g[plane * out_h * out_w + ty * out_w + tx];
                    }
                }
            }
            accumulate(grads, *y, dy);
        }
        Op::Reshape(x) => {
            let dx = grad_out
                .reshape(v(x).shape().to_vec())
                .expect("reshape backward");
            accumulate(grads, *x, dx);
        }
        Op::Concat { parts, axis } => {
            let mut start = 0usize;
            for part in parts {
                let len = v(part).shape()[*axis];
                let slice = crop_range(grad_out, *axis, start, len);
                accumulate(grads, *part, slice);
                start += len;
            }
        }
        Op::SliceParity { x, axis, odd } => {
            let xv = v(x);
            let mut dx = Tensor::zeros(xv.shape());
            scatter_parity(&mut dx, grad_out, *axis, *odd);
            accumulate(grads, *x, dx);
        }
        Op::Interleave { even, odd, axis } => {
            let (de, d_odd) = grad_out
                .slice_even_odd(*axis)
                .expect("even length by construction");
            accumulate(grads, *even, de);
            accumulate(grads, *odd, d_odd);
        }
        Op::PadEdge { x, axis } => {
            let orig_len = v(x).shape()[*axis];
            let mut dx = grad_out.crop_axis(*axis, orig_len).expect("crop backward");
            // The appended slice replicated the last sample, so its gradient
            // folds into that sample.
            let extra = crop_range(grad_out, *axis, orig_len, 1);
            add_into_axis_slice(&mut dx, &extra, *axis, orig_len - 1);
            accumulate(grads, *x, dx);
        }
        Op::Crop { x, axis, len } => {
            let xv = v(x);
            let full = xv.shape()[*axis];
            let mut dx = Tensor::zeros(xv.shape());
            let (outer, _, inner) = split_axis(dx.shape(), *axis);
            let dxd = dx.data_mut();
            let g = grad_out.data();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * full * inner;
                dxd[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(grads, *x, dx);
        }
        Op::SoftmaxCrossEntropy { logits, labels } => {
            let lv = v(logits);
            let (n, classes) = (lv.shape()[0], lv.shape()[1]);
            let scale = grad_out.item() / T::from_usize_lossy(n);
            let mut dl = Tensor::zeros(lv.shape());
            for i in 0..n {
                let probs = softmax_row(&lv.data()[i * classes..(i + 1) * classes]);
                for c in 0..classes {
                    let indicator = if c == labels[i] { T::one() } else { T::zero() };
                    dl.data_mut()[i * classes + c] = (probs[c] - indicator) * scale;
                }
            }
            accumulate(grads, *logits, dl);
        }
        Op::PixelCrossEntropy { logits, mask } => {
            let lv = v(logits);
            let (n, classes, h, w) = (lv.shape()[0], lv.shape()[1], lv.shape()[2], lv.shape()[3]);
            let plane = h * w;
            let counted = mask.iter().filter(|&&m| m != IGNORE_LABEL).count();
            let scale = grad_out.item() / T::from_usize_lossy(counted);
            let mut dl = Tensor::zeros(lv.shape());
            let mut row = vec![T::zero(); classes];
            for img in 0..n {
                for p in 0..plane {
                    let label = mask[img * plane + p];
                    if label == IGNORE_LABEL {
                        continue;
                    }
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = lv.data()[(img * classes + c) * plane + p];
                    }
                    let probs = softmax_row(&row);
                    for c in 0..classes {
                        let indicator = if c == label as usize { T::one() } else { T::zero() };
                        dl.data_mut()[(img * classes + c) * plane + p] =
                            (probs[c] - indicator) * scale;
                    }
                }
            }
            accumulate(grads, *logits, dl);
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Contiguous sub-range `[start, start+len)` along `axis`.
fn crop_range<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, full, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(shape, data).expect("crop_range shape")
}

fn add_into_axis_slice<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, axis: usize, pos: usize) {
    let (outer, full, inner) = split_axis(dst.shape(), axis);
    let d = dst.data_mut();
    for o in 0..outer {
        let base = (o * full + pos) * inner;
        for j in 0..inner {
            d[base + j] += src.data()[o * inner + j];
        }
    }
}

fn scatter_parity<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, axis: usize, odd: bool) {
    let (outer, full, inner) = split_axis(dst.shape(), axis);
    let half = full / 2;
    let offset = usize::from(odd);
    let d = dst.data_mut();
    for o in 0..outer {
        for k in 0..half {
            let dst_base = (o * full + 2 * k + offset) * inner;
            let src_base = (o * half + k) * inner;
            d[dst_base..dst_base + inner].copy_from_slice(&src.data()[src_base..src_base + inner]);
        }
    }
}

/// Central-difference check of every coordinate of the given leaves:
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`, maximised.
pub fn gradient_check<T: Scalar>(
    tape: &Tape<T>,
    loss: VarId,
    leaves: &[VarId],
    eps: T,
) -> TensorResult<T> {
    let analytic = tape.backward(loss)?;
    let mut worst = T::zero();
    for &leaf in leaves {
        let base = tape.value(leaf).clone();
        let grad = analytic
            .get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape()));
        for i in 0..base.numel() {
            let mut plus = base.clone();
            plus.data_mut()[i] = plus.data_mut()[i] + eps;
            let mut minus = base.clone();
            minus.data_mut()[i] = minus.data_mut()[i] - eps;
            let f_plus = tape.replay(&[(leaf, plus)], loss)?.item();
            let f_minus = tape.replay(&[(leaf, minus)], loss)?.item();
            let numeric = (f_plus - f_minus) / (eps + eps);
            let a = grad.data()[i];
            let denom = T::one().max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
