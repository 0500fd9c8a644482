//! The lifting layers: LiftDownPool-1D/2D and their exact inverses.
//!
//! One 1-D step: split `x` into even/odd polyphase sets, predict the odd set
//! from the even set (residual is the detail band `d`), then update the even
//! set with the details (the approximation band `s`):
//!
//! ```text
//! d = x_odd  - P(x_even)
//! s = x_even + U(d)
//! ```
//!
//! Inverting runs the same operators backwards: `x_even = s - U(d)`,
//! `x_odd = d + P(x_even)`, merge. A 2-D step applies the 1-D step along the
//! width, then along the height of both halves, yielding LL/LH/HL/HH; one
//! `(P, U)` weight pair is shared by all three 1-D applications.
//!
//! Operators come in two kinds. `Classical` is the fixed two-tap pair
//! (predict: average of the two even neighbours; update: quarter-sum of the
//! two adjacent details, which restores the running average of the signal).
//! `Learned` is `Tanh . Conv(k=1, g=G2) . ReLU . Conv(k=K, g=G1)` applied
//! along the lifted axis, depthwise by default.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::rng::Rng64;
use crate::scalar::Scalar;
use crate::tensor::{PadMode, Tensor, TensorError, TensorResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Classical,
    #[default]
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subband {
    Ll,
    Lh,
    Hl,
    Hh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// `LL + LH + HL + HH`, elementwise.
    #[default]
    SubbandSum,
    /// Keep one named sub-band.
    Select(Subband),
    /// Keep the whole set (encoder/decoder use).
    AllSubbands,
}

/// Configuration surface of a lifting layer. `None` for the group / internal
/// channel counts means "equal to the channel count" (depthwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftConfig {
    pub kernel_size: usize,
    pub groups1: Option<usize>,
    pub groups2: Option<usize>,
    pub mid_channels: Option<usize>,
    pub boundary: PadMode,
    pub operator: OperatorKind,
    pub pool_mode: PoolMode,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            kernel_size: 5,
            groups1: None,
            groups2: None,
            mid_channels: None,
            boundary: PadMode::Symmetric,
            operator: OperatorKind::Learned,
            pool_mode: PoolMode::SubbandSum,
        }
    }
}

impl LiftConfig {
    pub fn classical() -> Self {
        LiftConfig {
            operator: OperatorKind::Classical,
            ..Default::default()
        }
    }

    fn resolved(&self, channels: usize) -> (usize, usize, usize) {
        (
            self.groups1.unwrap_or(channels),
            self.groups2.unwrap_or(channels),
            self.mid_channels.unwrap_or(channels),
        )
    }
}

/// Classical fixed taps, indexed `[t_{-1}, t_0, t_{+1}]`.
fn predict_taps<T: Scalar>() -> [T; 3] {
    let half = T::from_f64_lossy(0.5);
    [T::zero(), half, half]
}

fn update_taps<T: Scalar>() -> [T; 3] {
    let quarter = T::from_f64_lossy(0.25);
    [quarter, quarter, T::zero()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub groups1: usize,
    pub groups2: usize,
}

/// A predictor or updater. Classical operators are parameter-free; learned
/// ones hold the two-convolution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftOperator<T> {
    kind: OperatorKind,
    learned: Option<LearnedParams<T>>,
}

impl<T: Scalar> LiftOperator<T> {
    pub fn classical() -> Self {
        LiftOperator {
            kind: OperatorKind::Classical,
            learned: None,
        }
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn learned_params(&self) -> Option<&LearnedParams<T>> {
        self.learned.as_ref()
    }

    fn learned_from(cfg: &LiftConfig, channels: usize, mut init: impl FnMut(usize) -> T) -> TensorResult<Self> {
        let k = cfg.kernel_size;
        if k.is_multiple_of(2) {
            return Err(TensorError::EvenKernel { got: k });
        }
        let (g1, g2, cmid) = cfg.resolved(channels);
        if g1 == 0 || !channels.is_multiple_of(g1) || cmid % g1 != 0 {
            return Err(TensorError::Divisibility {
                what: "lift conv1 channels vs groups",
                by: g1.max(1),
                got: channels,
            });
        }
        if g2 == 0 || cmid % g2 != 0 || !channels.is_multiple_of(g2) {
            return Err(TensorError::Divisibility {
                what: "lift conv2 channels vs groups",
                by: g2.max(1),
                got: cmid,
            });
        }
        let fan1 = (channels / g1) * k;
        let fan2 = cmid / g2;
        let a1 = T::one() / T::from_usize_lossy(fan1).sqrt();
        let a2 = T::one() / T::from_usize_lossy(fan2).sqrt();
        let w1 = Tensor::from_fn(&[cmid, channels / g1, k], |_| init(0) * a1);
        let w2 = Tensor::from_fn(&[channels, cmid / g2, 1], |_| init(1) * a2);
        Ok(LiftOperator {
            kind: OperatorKind::Learned,
            learned: Some(LearnedParams {
                w1,
                b1: Tensor::zeros(&[cmid]),
                w2,
                b2: Tensor::zeros(&[channels]),
                groups1: g1,
                groups2: g2,
            }),
        })
    }

    /// Learned operator with weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`
    /// and zero biases, drawn deterministically from `rng`.
    pub fn learned_init(cfg: &LiftConfig, channels: usize, rng: &mut Rng64) -> TensorResult<Self> {
        Self::learned_from(cfg, channels, |_| {
            T::from_f64_lossy(rng.next_f64() * 2.0 - 1.0)
        })
    }

    /// All-zero learned operator: `P(x) = U(x) = 0`, so lifting degenerates to
    /// the pure polyphase split. Used by tests.
    pub fn learned_zero(cfg: &LiftConfig, channels: usize) -> TensorResult<Self> {
        Self::learned_from(cfg, channels, |_| T::zero())
    }

    /// Records this operator's parameters on a tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LiftOperatorVars {
        match &self.learned {
            None => LiftOperatorVars::classical(),
            Some(p) => {
                let w1 = tape.leaf(p.w1.clone(), trainable);
                let b1 = tape.leaf(p.b1.clone(), trainable);
                let w2 = tape.leaf(p.w2.clone(), trainable);
                let b2 = tape.leaf(p.b2.clone(), trainable);
                LiftOperatorVars::learned(w1, b1, w2, b2, p.groups1, p.groups2)
            }
        }
    }
}

/// Deterministically initialised `(P, U)` operator pair for one lifting layer.
pub fn lift_params_init<T: Scalar>(
    cfg: &LiftConfig,
    channels: usize,
    seed: u64,
) -> TensorResult<(LiftOperator<T>, LiftOperator<T>)> {
    match cfg.operator {
        OperatorKind::Classical => Ok((LiftOperator::classical(), LiftOperator::classical())),
        OperatorKind::Learned => {
            let mut rng = Rng64::new(seed);
            let p = LiftOperator::learned_init(cfg, channels, &mut rng)?;
            let u = LiftOperator::learned_init(cfg, channels, &mut rng)?;
            Ok((p, u))
        }
    }
}

/// On-tape handle to a bound operator.
#[derive(Debug, Clone, Copy)]
pub struct LiftOperatorVars {
    kind: OperatorKind,
    learned: Option<LearnedVars>,
}

#[derive(Debug, Clone, Copy)]
struct LearnedVars {
    w1: VarId,
    b1: VarId,
    w2: VarId,
    b2: VarId,
    groups1: usize,
    groups2: usize,
}

impl LiftOperatorVars {
    pub fn classical() -> Self {
        LiftOperatorVars {
            kind: OperatorKind::Classical,
            learned: None,
        }
    }

    pub fn learned(w1: VarId, b1: VarId, w2: VarId, b2: VarId, groups1: usize, groups2: usize) -> Self {
        LiftOperatorVars {
            kind: OperatorKind::Learned,
            learned: Some(LearnedVars {
                w1,
                b1,
                w2,
                b2,
                groups1,
                groups2,
            }),
        }
    }

    /// Tape ids of the bound parameters; empty for classical operators.
    pub fn param_ids(&self) -> Vec<VarId> {
        match &self.learned {
            None => vec![],
            Some(v) => vec![v.w1, v.b1, v.w2, v.b2],
        }
    }
}

fn apply_learned<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &LearnedVars,
    x: VarId,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<VarId> {
    let h = tape.conv1d_grouped_axis(x, vars.w1, vars.b1, vars.groups1, boundary, axis)?;
    let h = tape.relu(h)?;
    let h = tape.conv1d_grouped_axis(h, vars.w2, vars.b2, vars.groups2, boundary, axis)?;
    tape.tanh(h)
}

/// `P(x_even)`: classical two-neighbour average `(x_e[k] + x_e[k+1]) / 2`
/// (edge handled by `boundary`), or the learned network along `axis`.
pub fn predict_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    op: &LiftOperatorVars,
    x_even: VarId,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<VarId> {
    match (op.kind, &op.learned) {
        (OperatorKind::Classical, _) => tape.fixed_conv1d(x_even, predict_taps(), boundary, axis),
        (OperatorKind::Learned, Some(vars)) => apply_learned(tape, vars, x_even, axis, boundary),
        (OperatorKind::Learned, None) => unreachable!("learned operator always carries weights"),
    }
}

/// `U(d)`: classical quarter-sum `(d[k-1] + d[k]) / 4`, or the learned network.
pub fn update_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    op: &LiftOperatorVars,
    d: VarId,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<VarId> {
    match (op.kind, &op.learned) {
        (OperatorKind::Classical, _) => tape.fixed_conv1d(d, update_taps(), boundary, axis),
        (OperatorKind::Learned, Some(vars)) => apply_learned(tape, vars, d, axis, boundary),
        (OperatorKind::Learned, None) => unreachable!("learned operator always carries weights"),
    }
}

/// Everything one 1-D down step produces. `s`/`d` feed the next stage;
/// `x_odd` together with `s` and `d` feeds the training constraints.
#[derive(Debug, Clone, Copy)]
pub struct LiftStepVars {
    pub s: VarId,
    pub d: VarId,
    pub x_even: VarId,
    pub x_odd: VarId,
    pub orig_len: usize,
}

/// Per-pass inputs of the constraint terms: `c_u` compares `s` with `x_odd`,
/// `c_p` is the norm of `d`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintTerm {
    pub s: VarId,
    pub x_odd: VarId,
    pub d: VarId,
}

impl From<&LiftStepVars> for ConstraintTerm {
    fn from(step: &LiftStepVars) -> Self {
        ConstraintTerm {
            s: step.s,
            x_odd: step.x_odd,
            d: step.d,
        }
    }
}

/// One lifting step along `axis`. Odd lengths are replicate-padded first and
/// the original length is kept for the inverse.
pub fn lift_down_1d_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: VarId,
    p: &LiftOperatorVars,
    u: &LiftOperatorVars,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<LiftStepVars> {
    let orig_len = tape.value(x).shape()[axis];
    let x = if orig_len % 2 == 1 {
        tape.pad_edge(x, axis)?
    } else {
        x
    };
    let (x_even, x_odd) = tape.split_even_odd(x, axis)?;
    let predicted = predict_on_tape(tape, p, x_even, axis, boundary)?;
    let d = tape.sub(x_odd, predicted)?;
    let updated = update_on_tape(tape, u, d, axis, boundary)?;
    let s = tape.add(x_even, updated)?;
    Ok(LiftStepVars {
        s,
        d,
        x_even,
        x_odd,
        orig_len,
    })
}

/// Exact inverse of [`lift_down_1d_on_tape`] given the same operators.
pub fn lift_up_1d_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    s: VarId,
    d: VarId,
    p: &LiftOperatorVars,
    u: &LiftOperatorVars,
    axis: usize,
    boundary: PadMode,
    orig_len: usize,
) -> TensorResult<VarId> {
    if tape.value(s).shape() != tape.value(d).shape() {
        return Err(TensorError::ShapeMismatch {
            op: "lift_up_1d",
            lhs: tape.value(s).shape().to_vec(),
            rhs: tape.value(d).shape().to_vec(),
        });
    }
    let updated = update_on_tape(tape, u, d, axis, boundary)?;
    let x_even = tape.sub(s, updated)?;
    let predicted = predict_on_tape(tape, p, x_even, axis, boundary)?;
    let x_odd = tape.add(d, predicted)?;
    let merged = tape.interleave(x_even, x_odd, axis)?;
    if tape.value(merged).shape()[axis] != orig_len {
        tape.crop(merged, axis, orig_len)
    } else {
        Ok(merged)
    }
}

/// The four sub-bands of one 2-D step, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct SubbandVars {
    pub ll: VarId,
    pub lh: VarId,
    pub hl: VarId,
    pub hh: VarId,
    pub orig_h: usize,
    pub orig_w: usize,
}

/// Output of a 2-D down step: the sub-bands plus the constraint inputs of all
/// three 1-D passes.
#[derive(Debug, Clone)]
pub struct LiftDown2D {
    pub subbands: SubbandVars,
    pub constraints: Vec<ConstraintTerm>,
}

/// Separable 2-D lifting: one 1-D step along the width, then the same 1-D
/// step (same weights) along the height of both halves.
/// The width pass's low half decomposes into `(LL, LH)`, its high half into
/// `(HL, HH)`.
pub fn lift_down_2d_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: VarId,
    p: &LiftOperatorVars,
    u: &LiftOperatorVars,
    boundary: PadMode,
) -> TensorResult<LiftDown2D> {
    let shape = tape.value(x).shape();
    if shape.len() != 4 {
        return Err(TensorError::BadRank {
            expected: 4,
            shape: shape.to_vec(),
        });
    }
    let (orig_h, orig_w) = (shape[2], shape[3]);
    let horizontal = lift_down_1d_on_tape(tape, x, p, u, 3, boundary)?;
    let low = lift_down_1d_on_tape(tape, horizontal.s, p, u, 2, boundary)?;
    let high = lift_down_1d_on_tape(tape, horizontal.d, p, u, 2, boundary)?;
    Ok(LiftDown2D {
        subbands: SubbandVars {
            ll: low.s,
            lh: low.d,
            hl: high.s,
            hh: high.d,
            orig_h,
            orig_w,
        },
        constraints: vec![
            ConstraintTerm::from(&horizontal),
            ConstraintTerm::from(&low),
            ConstraintTerm::from(&high),
        ],
    })
}

/// Exact inverse of [`lift_down_2d_on_tape`]: vertical inverses rebuild the
/// two width halves, the horizontal inverse rebuilds the input, cropped to
/// the original size.
pub fn lift_up_2d_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    sb: &SubbandVars,
    p: &LiftOperatorVars,
    u: &LiftOperatorVars,
    boundary: PadMode,
) -> TensorResult<VarId> {
    for (a, b) in [(sb.ll, sb.lh), (sb.ll, sb.hl), (sb.ll, sb.hh)] {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "lift_up_2d",
                lhs: tape.value(a).shape().to_vec(),
                rhs: tape.value(b).shape().to_vec(),
            });
        }
    }
    let s = lift_up_1d_on_tape(tape, sb.ll, sb.lh, p, u, 2, boundary, sb.orig_h)?;
    let d = lift_up_1d_on_tape(tape, sb.hl, sb.hh, p, u, 2, boundary, sb.orig_h)?;
    lift_up_1d_on_tape(tape, s, d, p, u, 3, boundary, sb.orig_w)
}

/// Reduction of the sub-band set into the pooled layer output.
pub enum PooledVars {
    Single(VarId),
    All(SubbandVars),
}

pub fn pool_output_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    sb: &SubbandVars,
    mode: PoolMode,
) -> TensorResult<PooledVars> {
    match mode {
        PoolMode::SubbandSum => {
            let a = tape.add(sb.ll, sb.lh)?;
            let b = tape.add(a, sb.hl)?;
            let out = tape.add(b, sb.hh)?;
            Ok(PooledVars::Single(out))
        }
        PoolMode::Select(band) => Ok(PooledVars::Single(match band {
            Subband::Ll => sb.ll,
            Subband::Lh => sb.lh,
            Subband::Hl => sb.hl,
            Subband::Hh => sb.hh,
        })),
        PoolMode::AllSubbands => Ok(PooledVars::All(*sb)),
    }
}

// ---------------------------------------------------------------------------
// Tensor-level wrappers: the same graph run on a scratch tape with constant
// operands, for callers that only want values.
// ---------------------------------------------------------------------------

/// Approximation / detail pair of one 1-D step.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftPair1D<T> {
    pub s: Tensor<T>,
    pub d: Tensor<T>,
    pub orig_len: usize,
}

/// The four sub-bands of one 2-D step plus the original spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet2D<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    pub orig_h: usize,
    pub orig_w: usize,
}

impl<T: Scalar> SubbandSet2D<T> {
    pub fn bands(&self) -> [(&'static str, &Tensor<T>); 4] {
        [("LL", &self.ll), ("LH", &self.lh), ("HL", &self.hl), ("HH", &self.hh)]
    }
}

pub enum Pooled<T> {
    Single(Tensor<T>),
    All(SubbandSet2D<T>),
}

/// `P(x_even)` as a plain tensor function.
pub fn predict<T: Scalar>(
    op: &LiftOperator<T>,
    x_even: &Tensor<T>,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(x_even.clone());
    let vars = op.bind(&mut tape, false);
    let y = predict_on_tape(&mut tape, &vars, x, axis, boundary)?;
    Ok(tape.value(y).clone())
}

/// `U(d)` as a plain tensor function.
pub fn update<T: Scalar>(
    op: &LiftOperator<T>,
    d: &Tensor<T>,
    axis: usize,
    boundary: PadMode,
) -> TensorResult<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(d.clone());
    let vars = op.bind(&mut tape, false);
    let y = update_on_tape(&mut tape, &vars, x, axis, boundary)?;
    Ok(tape.value(y).clone())
}

pub fn lift_down_1d<T: Scalar>(
    x: &Tensor<T>,
    p: &LiftOperator<T>,
    u: &LiftOperator<T>,
    axis: usize,
    cfg: &LiftConfig,
) -> TensorResult<LiftPair1D<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = p.bind(&mut tape, false);
    let uv = u.bind(&mut tape, false);
    let step = lift_down_1d_on_tape(&mut tape, xv, &pv, &uv, axis, cfg.boundary)?;
    Ok(LiftPair1D {
        s: tape.value(step.s).clone(),
        d: tape.value(step.d).clone(),
        orig_len: step.orig_len,
    })
}

pub fn lift_up_1d<T: Scalar>(
    pair: &LiftPair1D<T>,
    p: &LiftOperator<T>,
    u: &LiftOperator<T>,
    axis: usize,
    cfg: &LiftConfig,
) -> TensorResult<Tensor<T>> {
    let mut tape = Tape::new();
    let s = tape.constant(pair.s.clone());
    let d = tape.constant(pair.d.clone());
    let pv = p.bind(&mut tape, false);
    let uv = u.bind(&mut tape, false);
    let x = lift_up_1d_on_tape(&mut tape, s, d, &pv, &uv, axis, cfg.boundary, pair.orig_len)?;
    Ok(tape.value(x).clone())
}

pub fn lift_down_2d<T: Scalar>(
    x: &Tensor<T>,
    p: &LiftOperator<T>,
    u: &LiftOperator<T>,
    cfg: &LiftConfig,
) -> TensorResult<SubbandSet2D<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = p.bind(&mut tape, false);
    let uv = u.bind(&mut tape, false);
    let down = lift_down_2d_on_tape(&mut tape, xv, &pv, &uv, cfg.boundary)?;
    Ok(SubbandSet2D {
        ll: tape.value(down.subbands.ll).clone(),
        lh: tape.value(down.subbands.lh).clone(),
        hl: tape.value(down.subbands.hl).clone(),
        hh: tape.value(down.subbands.hh).clone(),
        orig_h: down.subbands.orig_h,
        orig_w: down.subbands.orig_w,
    })
}

pub fn lift_up_2d<T: Scalar>(
    sb: &SubbandSet2D<T>,
    p: &LiftOperator<T>,
    u: &LiftOperator<T>,
    cfg: &LiftConfig,
) -> TensorResult<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = SubbandVars {
        ll: tape.constant(sb.ll.clone()),
        lh: tape.constant(sb.lh.clone()),
        hl: tape.constant(sb.hl.clone()),
        hh: tape.constant(sb.hh.clone()),
        orig_h: sb.orig_h,
        orig_w: sb.orig_w,
    };
    let pv = p.bind(&mut tape, false);
    let uv = u.bind(&mut tape, false);
    let x = lift_up_2d_on_tape(&mut tape, &vars, &pv, &uv, cfg.boundary)?;
    Ok(tape.value(x).clone())
}

pub fn pool_output<T: Scalar>(sb: &SubbandSet2D<T>, mode: PoolMode) -> TensorResult<Pooled<T>> {
    match mode {
        PoolMode::SubbandSum => {
            let sum = sb.ll.add(&sb.lh)?.add(&sb.hl)?.add(&sb.hh)?;
            Ok(Pooled::Single(sum))
        }
        PoolMode::Select(band) => Ok(Pooled::Single(match band {
            Subband::Ll => sb.ll.clone(),
            Subband::Lh => sb.lh.clone(),
            Subband::Hl => sb.hl.clone(),
            Subband::Hh => sb.hh.clone(),
        })),
        PoolMode::AllSubbands => Ok(Pooled::All(sb.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::rng::Rng64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn classical_cfg() -> LiftConfig {
        LiftConfig::classical()
    }

    /// Independent 1-D classical oracle: the direct index formulas
    /// `d_k = x_{2k+1} - (x_{2k} + x_{2k+2})/2` and
    /// `s_k = x_{2k} + (d_{k-1} + d_k)/4`, with explicit boundary handling.
    fn classical_1d_oracle(x: &[f64], boundary: PadMode) -> (Vec<f64>, Vec<f64>) {
        let mut padded = x.to_vec();
        if padded.len() % 2 == 1 {
            padded.push(*padded.last().unwrap());
        }
        let half = padded.len() / 2;
        let even: Vec<f64> = (0..half).map(|k| padded[2 * k]).collect();
        let odd: Vec<f64> = (0..half).map(|k| padded[2 * k + 1]).collect();
        let fetch = |v: &[f64], i: isize| -> f64 {
            match boundary.resolve(i, v.len()) {
                Some(s) => v[s],
                None => 0.0,
            }
        };
        let d: Vec<f64> = (0..half)
            .map(|k| odd[k] - (even[k] + fetch(&even, k as isize + 1)) / 2.0)
            .collect();
        let s: Vec<f64> = (0..half)
            .map(|k| even[k] + (fetch(&d, k as isize - 1) + d[k]) / 4.0)
            .collect();
        (s, d)
    }

    #[test]
    fn classical_predict_examples() {
        let p = LiftOperator::<f64>::classical();
        let even = t(&[1, 1, 3], &[0.0, 2.0, 4.0]);
        let out = predict(&p, &even, 2, PadMode::Symmetric).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 4.0]);

        let constant = Tensor::<f64>::full(&[1, 1, 5], 3.5);
        let out = predict(&p, &constant, 2, PadMode::Symmetric).unwrap();
        assert!(out.data().iter().all(|&v| (v - 3.5).abs() < 1e-15));
    }

    #[test]
    fn learned_zero_weights_predict_zero() {
        let cfg = LiftConfig::default();
        let p = LiftOperator::<f64>::learned_zero(&cfg, 3).unwrap();
        let x = Tensor::from_fn(&[2, 3, 6], |i| i as f64);
        let out = predict(&p, &x, 2, cfg.boundary).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_decomposition_worked_example() {
        // Interior details of a linear ramp vanish; the oracle fixes the rest.
        let x = t(&[1, 1, 6], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let cfg = classical_cfg();
        let p = LiftOperator::classical();
        let u = LiftOperator::classical();
        let (os, od) = classical_1d_oracle(x.data(), PadMode::Symmetric);
        assert_eq!(od, vec![0.0, 0.0, 1.0]);
        assert_eq!(os, vec![0.0, 2.0, 4.25]);
        let pair = lift_down_1d(&x, &p, &u, 2, &cfg).unwrap();
        assert_eq!(pair.d.data(), &od[..]);
        assert_eq!(pair.s.data(), &os[..]);

        // And the inverse reproduces the ramp exactly.
        let back = lift_up_1d(&pair, &p, &u, 2, &cfg).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn periodic_worked_example_preserves_mean() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let mut cfg = classical_cfg();
        cfg.boundary = PadMode::Periodic;
        let p = LiftOperator::classical();
        let u = LiftOperator::classical();
        let (os, od) = classical_1d_oracle(x.data(), PadMode::Periodic);
        assert_eq!(od, vec![0.0, 2.0]);
        assert_eq!(os, vec![1.5, 3.5]);
        let pair = lift_down_1d(&x, &p, &u, 2, &cfg).unwrap();
        assert_eq!(pair.d.data(), &od[..]);
        assert_eq!(pair.s.data(), &os[..]);
        assert!((pair.s.mean() - x.mean()).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_learned_reduces_to_polyphase_split() {
        let cfg = LiftConfig::default();
        let p = LiftOperator::<f64>::learned_zero(&cfg, 1).unwrap();
        let u = LiftOperator::<f64>::learned_zero(&cfg, 1).unwrap();
        let x = t(&[1, 1, 6], &[5.0, 1.0, 4.0, 2.0, 9.0, 7.0]);
        let pair = lift_down_1d(&x, &p, &u, 2, &cfg).unwrap();
        assert_eq!(pair.d.data(), &[1.0, 2.0, 7.0]);
        assert_eq!(pair.s.data(), &[5.0, 4.0, 9.0]);
    }

    #[test]
    fn zero_details_zero_weights_upsample_interleaves_zeros() {
        let cfg = LiftConfig::default();
        let p = LiftOperator::<f64>::learned_zero(&cfg, 1).unwrap();
        let u = LiftOperator::<f64>::learned_zero(&cfg, 1).unwrap();
        let pair = LiftPair1D {
            s: t(&[1, 1, 3], &[1.0, 2.0, 3.0]),
            d: Tensor::zeros(&[1, 1, 3]),
            orig_len: 6,
        };
        let x = lift_up_1d(&pair, &p, &u, 2, &cfg).unwrap();
        assert_eq!(x.data(), &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn two_by_two_worked_example() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let cfg = classical_cfg();
        let p = LiftOperator::classical();
        let u = LiftOperator::classical();
        let sb = lift_down_2d(&x, &p, &u, &cfg).unwrap();
        assert_eq!(sb.ll.data(), &[2.5]);
        assert_eq!(sb.lh.data(), &[2.0]);
        assert_eq!(sb.hl.data(), &[1.0]);
        assert_eq!(sb.hh.data(), &[0.0]);
        match pool_output(&sb, PoolMode::SubbandSum).unwrap() {
            Pooled::Single(sum) => assert_eq!(sum.data(), &[5.5]),
            Pooled::All(_) => panic!("expected single tensor"),
        }
        let back = lift_up_2d(&sb, &p, &u, &cfg).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn constant_image_concentrates_in_ll() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 4], 2.25);
        let cfg = classical_cfg();
        let p = LiftOperator::classical();
        let u = LiftOperator::classical();
        let sb = lift_down_2d(&x, &p, &u, &cfg).unwrap();
        assert!(sb.ll.data().iter().all(|&v| (v - 2.25).abs() < 1e-15));
        for band in [&sb.lh, &sb.hl, &sb.hh] {
            assert!(band.data().iter().all(|&v| v.abs() < 1e-15));
        }
        match pool_output(&sb, PoolMode::Select(Subband::Ll)).unwrap() {
            Pooled::Single(out) => assert_eq!(out.data(), sb.ll.data()),
            Pooled::All(_) => panic!("expected single tensor"),
        }
    }

    #[test]
    fn ll_of_2x2_block_is_block_mean() {
        // Classical lifting of any 2x2 block: LL equals the block mean.
        let mut rng = Rng64::new(55);
        for _ in 0..20 {
            let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2], |_| rng.uniform(-3.0, 3.0));
            let sb = lift_down_2d(&x, &LiftOperator::classical(), &LiftOperator::classical(), &classical_cfg())
                .unwrap();
            assert!((sb.ll.data()[0] - x.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn separability_oracle_on_random_6x6() {
        // 2-D lifting must equal the 1-D oracle applied row-wise, then
        // column-wise on each half.
        let mut rng = Rng64::new(77);
        let x = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |_| rng.uniform(-2.0, 2.0));
        let cfg = classical_cfg();
        let p = LiftOperator::classical();
        let u = LiftOperator::classical();
        let sb = lift_down_2d(&x, &p, &u, &cfg).unwrap();

        // Row-wise pass.
        let mut s_rows = vec![vec![0.0; 3]; 6];
        let mut d_rows = vec![vec![0.0; 3]; 6];
        for r in 0..6 {
            let row: Vec<f64> = x.data()[r * 6..(r + 1) * 6].to_vec();
            let (s, d) = classical_1d_oracle(&row, PadMode::Symmetric);
            s_rows[r] = s;
            d_rows[r] = d;
        }
        // Column-wise pass over each half.
        let mut expect = [vec![0.0; 9], vec![0.0; 9], vec![0.0; 9], vec![0.0; 9]];
        for c in 0..3 {
            let s_col: Vec<f64> = (0..6).map(|r| s_rows[r][c]).collect();
            let (ll, lh) = classical_1d_oracle(&s_col, PadMode::Symmetric);
            let d_col: Vec<f64> = (0..6).map(|r| d_rows[r][c]).collect();
            let (hl, hh) = classical_1d_oracle(&d_col, PadMode::Symmetric);
            for r in 0..3 {
                expect[0][r * 3 + c] = ll[r];
                expect[1][r * 3 + c] = lh[r];
                expect[2][r * 3 + c] = hl[r];
                expect[3][r * 3 + c] = hh[r];
            }
        }
        for (band, want) in sb.bands().iter().zip(&expect) {
            let diff = band
                .1
                .data()
                .iter()
                .zip(want.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "band {} differs from oracle by {diff}", band.0);
        }
    }

    #[test]
    fn perfect_reconstruction_learned_operators() {
        let mut rng = Rng64::new(99);
        let cfg = LiftConfig::default();
        for &(c, h, w) in &[(1usize, 8usize, 8usize), (3, 7, 9), (2, 5, 5)] {
            let p = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
            let u = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
            let x = Tensor::<f64>::from_fn(&[2, c, h, w], |_| rng.uniform(-2.0, 2.0));
            let sb = lift_down_2d(&x, &p, &u, &cfg).unwrap();
            let back = lift_up_2d(&sb, &p, &u, &cfg).unwrap();
            assert_eq!(back.shape(), x.shape());
            let diff = back
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "reconstruction error {diff} at c={c} h={h} w={w}");
        }
    }

    #[test]
    fn channel_mixing_operators_reconstruct_and_train() {
        // Non-depthwise configuration: grouped first conv, channel-mixing
        // pointwise second conv, widened internal channels.
        let cfg = LiftConfig {
            kernel_size: 3,
            groups1: Some(2),
            groups2: Some(1),
            mid_channels: Some(6),
            ..Default::default()
        };
        let mut rng = Rng64::new(321);
        let c = 4;
        let p = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
        let u = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, c, 5, 7], |_| rng.uniform(-2.0, 2.0));
        let sb = lift_down_2d(&x, &p, &u, &cfg).unwrap();
        let back = lift_up_2d(&sb, &p, &u, &cfg).unwrap();
        let diff = back
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "mixing-operator reconstruction error {diff}");

        let mut tape = Tape::new();
        let xv = tape.leaf(x, true);
        let pv = p.bind(&mut tape, true);
        let uv = u.bind(&mut tape, true);
        let down = lift_down_2d_on_tape(&mut tape, xv, &pv, &uv, cfg.boundary).unwrap();
        let pooled = match pool_output_on_tape(&mut tape, &down.subbands, PoolMode::SubbandSum).unwrap() {
            PooledVars::Single(v) => v,
            PooledVars::All(_) => unreachable!(),
        };
        let loss = tape.squared_l2(pooled).unwrap();
        let mut leaves = vec![xv];
        leaves.extend(pv.param_ids());
        leaves.extend(uv.param_ids());
        let err = gradient_check(&tape, loss, &leaves, 1e-5).unwrap();
        assert!(err < 1e-4, "mixing-operator gradient error {err}");
    }

    #[test]
    fn invalid_group_configs_rejected() {
        let cfg = LiftConfig {
            groups1: Some(3),
            ..Default::default()
        };
        // 4 channels are not divisible into 3 groups.
        assert!(LiftOperator::<f64>::learned_zero(&cfg, 4).is_err());
        let even_kernel = LiftConfig {
            kernel_size: 4,
            ..Default::default()
        };
        assert!(LiftOperator::<f64>::learned_zero(&even_kernel, 4).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_scaled() {
        let cfg = LiftConfig::default();
        let (p1, u1) = lift_params_init::<f64>(&cfg, 4, 1234).unwrap();
        let (p2, u2) = lift_params_init::<f64>(&cfg, 4, 1234).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(u1, u2);
        // Depthwise K=5: |w1| <= 1/sqrt(5); biases zero.
        let bound = 1.0 / 5.0_f64.sqrt() + 1e-12;
        let params = p1.learned_params().unwrap();
        assert!(params.w1.data().iter().all(|v| v.abs() <= bound));
        assert!(params.b1.data().iter().all(|&v| v == 0.0));
        let (p3, _) = lift_params_init::<f64>(&cfg, 4, 1235).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn learned_block_passes_gradient_check() {
        let mut rng = Rng64::new(2024);
        let cfg = LiftConfig {
            kernel_size: 3,
            ..Default::default()
        };
        let c = 2;
        let p = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
        let u = LiftOperator::<f64>::learned_init(&cfg, c, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[1, c, 4, 6], |_| rng.uniform(-2.0, 2.0)), true);
        let pv = p.bind(&mut tape, true);
        let uv = u.bind(&mut tape, true);
        let down = lift_down_2d_on_tape(&mut tape, x, &pv, &uv, cfg.boundary).unwrap();
        let pooled = match pool_output_on_tape(&mut tape, &down.subbands, PoolMode::SubbandSum).unwrap() {
            PooledVars::Single(v) => v,
            PooledVars::All(_) => unreachable!(),
        };
        let loss = tape.squared_l2(pooled).unwrap();
        let mut leaves = vec![x];
        leaves.extend(pv.param_ids());
        leaves.extend(uv.param_ids());
        let err = gradient_check(&tape, loss, &leaves, 1e-5).unwrap();
        assert!(err < 1e-4, "lift block gradient error {err}");
    }

    #[test]
    fn select_mode_rejected_nothing_and_all_passthrough() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let cfg = classical_cfg();
        let sb = lift_down_2d(&x, &LiftOperator::classical(), &LiftOperator::classical(), &cfg).unwrap();
        match pool_output(&sb, PoolMode::AllSubbands).unwrap() {
            Pooled::All(set) => assert_eq!(set, sb),
            Pooled::Single(_) => panic!("expected full set"),
        }
    }
}
