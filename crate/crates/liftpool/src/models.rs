//! Desk-scale networks that exercise the pooling layers: a two-block
//! classifier (conv-relu-conv-relu-pool per block, dense head) and a two-level
//! encoder-decoder for segmentation whose up-pooling consumes the side
//! information its paired down-pooling produced (argmax indices for max
//! pooling, the three detail sub-bands for lifting).

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::lifting::{
    lift_down_2d_on_tape, lift_up_2d_on_tape, pool_output_on_tape, ConstraintTerm, LiftConfig,
    LiftOperator, LiftOperatorVars, OperatorKind, PoolMode, PooledVars, SubbandVars,
};
use crate::pools::PoolConfig;
use crate::rng::Rng64;
use crate::scalar::Scalar;
use crate::tensor::{PadMode, Tensor, TensorError, TensorResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
    Skip,
    Lift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpPoolKind {
    MaxUnpool,
    LiftUnpool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyClassifierSpec {
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    #[serde(default = "default_classifier_channels")]
    pub block_channels: Vec<usize>,
    pub classes: usize,
    pub pooling: PoolKind,
    #[serde(default)]
    pub lift: LiftConfig,
}

fn default_classifier_channels() -> Vec<usize> {
    vec![16, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinySegNetSpec {
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    #[serde(default = "default_segnet_channels")]
    pub block_channels: Vec<usize>,
    /// Number of mask classes, background included.
    pub classes: usize,
    pub pooling: UpPoolKind,
    #[serde(default)]
    pub lift: LiftConfig,
}

fn default_segnet_channels() -> Vec<usize> {
    vec![16, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Classifier(TinyClassifierSpec),
    Segnet(TinySegNetSpec),
}

/// One named parameter tensor. `decay` marks tensors subject to weight decay
/// (convolution and dense weights; never biases).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub decay: bool,
}

/// Ordered registry of every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params { entries: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            decay,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Records every parameter as a tape leaf, in registry order.
    pub fn bind_all(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<VarId> {
        self.entries
            .iter()
            .map(|e| tape.leaf(e.tensor.clone(), trainable))
            .collect()
    }
}

/// Uniform fan-in init: `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`, applied to
/// weights and their biases alike.
fn conv2d_weight<T: Scalar>(
    rng: &mut Rng64,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Tensor<T> {
    let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
    Tensor::from_fn(&[c_out, c_in, k, k], |_| {
        T::from_f64_lossy(rng.uniform(-bound, bound))
    })
}

fn fan_in_bias<T: Scalar>(rng: &mut Rng64, len: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[len], |_| T::from_f64_lossy(rng.uniform(-bound, bound)))
}

fn dense_weight<T: Scalar>(rng: &mut Rng64, features: usize, out: usize) -> Tensor<T> {
    let bound = 1.0 / (features as f64).sqrt();
    Tensor::from_fn(&[features, out], |_| {
        T::from_f64_lossy(rng.uniform(-bound, bound))
    })
}

#[derive(Debug, Clone, Copy)]
struct OpIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    groups1: usize,
    groups2: usize,
}

#[derive(Debug, Clone, Copy)]
enum PoolParams {
    Fixed,
    Skip { w: usize, b: usize },
    /// `None` operators are classical (parameter-free).
    Lift { p: Option<OpIdx>, u: Option<OpIdx> },
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    conv1: (usize, usize),
    conv2: (usize, usize),
    pool: PoolParams,
}

fn push_operator<T: Scalar>(
    params: &mut Params<T>,
    prefix: &str,
    op: &LiftOperator<T>,
) -> Option<OpIdx> {
    op.learned_params().map(|lp| OpIdx {
        w1: params.push(format!("{prefix}.w1"), lp.w1.clone(), true),
        b1: params.push(format!("{prefix}.b1"), lp.b1.clone(), false),
        w2: params.push(format!("{prefix}.w2"), lp.w2.clone(), true),
        b2: params.push(format!("{prefix}.b2"), lp.b2.clone(), false),
        groups1: lp.groups1,
        groups2: lp.groups2,
    })
}

fn operator_vars(idx: Option<OpIdx>, vars: &[VarId]) -> LiftOperatorVars {
    match idx {
        None => LiftOperatorVars::classical(),
        Some(i) => LiftOperatorVars::learned(
            vars[i.w1],
            vars[i.b1],
            vars[i.w2],
            vars[i.b2],
            i.groups1,
            i.groups2,
        ),
    }
}

fn build_lift_pool<T: Scalar>(
    params: &mut Params<T>,
    prefix: &str,
    cfg: &LiftConfig,
    channels: usize,
    rng: &mut Rng64,
) -> TensorResult<PoolParams> {
    match cfg.operator {
        OperatorKind::Classical => Ok(PoolParams::Lift { p: None, u: None }),
        OperatorKind::Learned => {
            let p = LiftOperator::<T>::learned_init(cfg, channels, rng)?;
            let u = LiftOperator::<T>::learned_init(cfg, channels, rng)?;
            let p_idx = push_operator(params, &format!("{prefix}.p"), &p);
            let u_idx = push_operator(params, &format!("{prefix}.u"), &u);
            Ok(PoolParams::Lift { p: p_idx, u: u_idx })
        }
    }
}

fn lift_vars(pool: &PoolParams, vars: &[VarId]) -> (LiftOperatorVars, LiftOperatorVars) {
    match pool {
        PoolParams::Lift { p, u } => (operator_vars(*p, vars), operator_vars(*u, vars)),
        _ => unreachable!("lift_vars on non-lift pool"),
    }
}

/// Spatial size after one pooling step.
fn pooled_hw(kind: PoolKind, h: usize, w: usize) -> (usize, usize) {
    match kind {
        // k=2, s=2, incomplete edge windows dropped.
        PoolKind::Max | PoolKind::Avg => (h / 2, w / 2),
        // Stride-2 convolution / lifting both cover the odd edge.
        PoolKind::Skip | PoolKind::Lift => (h.div_ceil(2), w.div_ceil(2)),
    }
}

/// Everything a model forward pass yields besides the logits.
pub struct ForwardOut {
    pub logits: VarId,
    pub constraints: Vec<ConstraintTerm>,
}

#[derive(Debug, Clone)]
pub struct TinyClassifier<T> {
    pub spec: TinyClassifierSpec,
    params: Params<T>,
    blocks: Vec<BlockLayout>,
    head: (usize, usize),
    features: usize,
    final_hw: (usize, usize),
}

impl<T: Scalar> TinyClassifier<T> {
    pub fn build(spec: TinyClassifierSpec, seed: u64) -> TensorResult<Self> {
        if matches!(spec.lift.pool_mode, PoolMode::AllSubbands) && spec.pooling == PoolKind::Lift {
            return Err(TensorError::Invalid(
                "classifier lift pooling needs subband-sum or a single selected sub-band".into(),
            ));
        }
        if spec.block_channels.is_empty() || spec.classes == 0 {
            return Err(TensorError::Invalid("empty classifier spec".into()));
        }
        let mut rng = Rng64::new(seed);
        let mut params = Params::new();
        let mut blocks = Vec::new();
        let (mut h, mut w) = spec.input_hw;
        let mut c_in = spec.in_channels;
        for (i, &c_out) in spec.block_channels.iter().enumerate() {
            let conv1_w = params.push(
                format!("block{i}.conv1.weight"),
                conv2d_weight(&mut rng, c_out, c_in, 3),
                true,
            );
            let conv1_b = params.push(
                format!("block{i}.conv1.bias"),
                fan_in_bias(&mut rng, c_out, c_in * 9),
                false,
            );
            let conv2_w = params.push(
                format!("block{i}.conv2.weight"),
                conv2d_weight(&mut rng, c_out, c_out, 3),
                true,
            );
            let conv2_b = params.push(
                format!("block{i}.conv2.bias"),
                fan_in_bias(&mut rng, c_out, c_out * 9),
                false,
            );
            let pool = match spec.pooling {
                PoolKind::Max | PoolKind::Avg => PoolParams::Fixed,
                PoolKind::Skip => {
                    let w_idx = params.push(
                        format!("block{i}.skip.weight"),
                        conv2d_weight(&mut rng, c_out, c_out, 3),
                        true,
                    );
                    let b_idx =
                        params.push(
                        format!("block{i}.skip.bias"),
                        fan_in_bias(&mut rng, c_out, c_out * 9),
                        false,
                    );
                    PoolParams::Skip { w: w_idx, b: b_idx }
                }
                PoolKind::Lift => {
                    build_lift_pool(&mut params, &format!("block{i}.lift"), &spec.lift, c_out, &mut rng)?
                }
            };
            blocks.push(BlockLayout {
                conv1: (conv1_w, conv1_b),
                conv2: (conv2_w, conv2_b),
                pool,
            });
            let (nh, nw) = pooled_hw(spec.pooling, h, w);
            if nh == 0 || nw == 0 {
                return Err(TensorError::Invalid(format!(
                    "spatial size collapsed to zero after block {i}"
                )));
            }
            (h, w) = (nh, nw);
            c_in = c_out;
        }
        let features = c_in * h * w;
        let head_w = params.push(
            "head.weight",
            dense_weight(&mut rng, features, spec.classes),
            true,
        );
        let head_b = params.push(
            "head.bias",
            fan_in_bias(&mut rng, spec.classes, features),
            false,
        );
        Ok(TinyClassifier {
            spec,
            params,
            blocks,
            head: (head_w, head_b),
            features,
            final_hw: (h, w),
        })
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn final_hw(&self) -> (usize, usize) {
        self.final_hw
    }

    /// Builds the forward graph for a bound input/parameter set.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: VarId,
        vars: &[VarId],
    ) -> TensorResult<ForwardOut> {
        let mut constraints = Vec::new();
        let mut h = x;
        for block in &self.blocks {
            let c1 = tape.conv2d(h, vars[block.conv1.0], vars[block.conv1.1], 1, PadMode::Zero)?;
            let a1 = tape.relu(c1)?;
            let c2 = tape.conv2d(a1, vars[block.conv2.0], vars[block.conv2.1], 1, PadMode::Zero)?;
            let a2 = tape.relu(c2)?;
            h = match (&block.pool, self.spec.pooling) {
                (PoolParams::Fixed, PoolKind::Max) => {
                    tape.max_pool2d(a2, PoolConfig::default())?.0
                }
                (PoolParams::Fixed, PoolKind::Avg) => tape.avg_pool2d(a2, PoolConfig::default())?,
                (PoolParams::Skip { w, b }, _) => {
                    tape.conv2d(a2, vars[*w], vars[*b], 2, PadMode::Zero)?
                }
                (pool @ PoolParams::Lift { .. }, _) => {
                    let (p, u) = lift_vars(pool, vars);
                    let down = lift_down_2d_on_tape(tape, a2, &p, &u, self.spec.lift.boundary)?;
                    constraints.extend(down.constraints);
                    match pool_output_on_tape(tape, &down.subbands, self.spec.lift.pool_mode)? {
                        PooledVars::Single(v) => v,
                        PooledVars::All(_) => unreachable!("rejected at build time"),
                    }
                }
                _ => unreachable!("pool layout matches pooling kind"),
            };
        }
        let n = tape.value(h).shape()[0];
        let flat = tape.reshape(h, vec![n, self.features])?;
        let logits = tape.linear(flat, vars[self.head.0], vars[self.head.1])?;
        Ok(ForwardOut { logits, constraints })
    }

    /// Inference logits for a batch.
    pub fn logits(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_all(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, &vars)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Argmax class per batch row.
    pub fn predict(&self, x: &Tensor<T>) -> TensorResult<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct SegLevel {
    enc: (usize, usize),
    dec: (usize, usize),
    pool: PoolParams,
}

#[derive(Debug, Clone)]
pub struct TinySegNet<T> {
    pub spec: TinySegNetSpec,
    params: Params<T>,
    levels: Vec<SegLevel>,
    head: (usize, usize),
}

impl<T: Scalar> TinySegNet<T> {
    pub fn build(spec: TinySegNetSpec, seed: u64) -> TensorResult<Self> {
        if spec.block_channels.len() != 2 {
            return Err(TensorError::Invalid(
                "segnet spec wants exactly two encoder levels".into(),
            ));
        }
        let mut rng = Rng64::new(seed);
        let mut params = Params::new();
        let (c1, c2) = (spec.block_channels[0], spec.block_channels[1]);
        let mut levels = Vec::new();
        for (i, (cin, cout)) in [(spec.in_channels, c1), (c1, c2)].into_iter().enumerate() {
            let enc_w = params.push(
                format!("enc{i}.conv.weight"),
                conv2d_weight(&mut rng, cout, cin, 3),
                true,
            );
            let enc_b = params.push(
                format!("enc{i}.conv.bias"),
                fan_in_bias(&mut rng, cout, cin * 9),
                false,
            );
            // Each decoder conv maps its unpooled level back to c1 channels:
            // dec1 c2->c1 feeds the level-0 up-pool, dec0 c1->c1 feeds the head.
            let dec_out = c1;
            let dec_w = params.push(
                format!("dec{i}.conv.weight"),
                conv2d_weight(&mut rng, dec_out, cout, 3),
                true,
            );
            let dec_b = params.push(
                format!("dec{i}.conv.bias"),
                fan_in_bias(&mut rng, dec_out, cout * 9),
                false,
            );
            let pool = match spec.pooling {
                UpPoolKind::MaxUnpool => PoolParams::Fixed,
                UpPoolKind::LiftUnpool => {
                    build_lift_pool(&mut params, &format!("level{i}.lift"), &spec.lift, cout, &mut rng)?
                }
            };
            levels.push(SegLevel {
                enc: (enc_w, enc_b),
                dec: (dec_w, dec_b),
                pool,
            });
        }
        let head_w = params.push(
            "head.weight",
            conv2d_weight(&mut rng, spec.classes, c1, 1),
            true,
        );
        let head_b = params.push("head.bias", fan_in_bias(&mut rng, spec.classes, c1), false);
        Ok(TinySegNet {
            spec,
            params,
            levels,
            head: (head_w, head_b),
        })
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: VarId,
        vars: &[VarId],
    ) -> TensorResult<ForwardOut> {
        enum Side {
            Max {
                indices: crate::pools::MaxIndices,
                out_h: usize,
                out_w: usize,
            },
            Lift(SubbandVars),
        }

        let mut constraints = Vec::new();
        let mut h = x;
        let mut stash: Vec<Side> = Vec::new();
        for level in &self.levels {
            let conv = tape.conv2d(h, vars[level.enc.0], vars[level.enc.1], 1, PadMode::Zero)?;
            let act = tape.relu(conv)?;
            let (fh, fw) = {
                let s = tape.value(act).shape();
                (s[2], s[3])
            };
            h = match (&level.pool, self.spec.pooling) {
                (PoolParams::Fixed, _) => {
                    let (pooled, indices) = tape.max_pool2d(act, PoolConfig::default())?;
                    stash.push(Side::Max {
                        indices,
                        out_h: fh,
                        out_w: fw,
                    });
                    pooled
                }
                (pool @ PoolParams::Lift { .. }, _) => {
                    let (p, u) = lift_vars(pool, vars);
                    let down = lift_down_2d_on_tape(tape, act, &p, &u, self.spec.lift.boundary)?;
                    constraints.extend(down.constraints.clone());
                    // Only the LL band flows on; the decoder reuses the
                    // stashed details at this level.
                    stash.push(Side::Lift(down.subbands));
                    down.subbands.ll
                }
                _ => unreachable!("pool layout matches pooling kind"),
            };
        }
        for level in self.levels.iter().rev() {
            let side = stash.pop().expect("one side record per level");
            let up = match side {
                Side::Max {
                    indices,
                    out_h,
                    out_w,
                } => tape.max_unpool2d(h, &indices, out_h, out_w)?,
                Side::Lift(sb) => {
                    let (p, u) = lift_vars(&level.pool, vars);
                    let merged = SubbandVars { ll: h, ..sb };
                    lift_up_2d_on_tape(tape, &merged, &p, &u, self.spec.lift.boundary)?
                }
            };
            let conv = tape.conv2d(up, vars[level.dec.0], vars[level.dec.1], 1, PadMode::Zero)?;
            h = tape.relu(conv)?;
        }
        let logits = tape.conv2d(h, vars[self.head.0], vars[self.head.1], 1, PadMode::Zero)?;
        Ok(ForwardOut { logits, constraints })
    }

    pub fn logits(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_all(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, &vars)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Per-pixel argmax masks, flat `[N, H, W]` row-major.
    pub fn predict_masks(&self, x: &Tensor<T>) -> TensorResult<Vec<u8>> {
        let logits = self.logits(x)?;
        let (n, c, hh, ww) = (
            logits.shape()[0],
            logits.shape()[1],
            logits.shape()[2],
            logits.shape()[3],
        );
        let plane = hh * ww;
        let mut out = vec![0u8; n * plane];
        for img in 0..n {
            for p in 0..plane {
                let mut best = 0usize;
                for cls in 1..c {
                    if logits.data()[(img * c + cls) * plane + p]
                        > logits.data()[(img * c + best) * plane + p]
                    {
                        best = cls;
                    }
                }
                out[img * plane + p] = best as u8;
            }
        }
        Ok(out)
    }
}

/// Either trainable network, as stored in checkpoints and driven by the trainer.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Classifier(TinyClassifier<T>),
    Segnet(TinySegNet<T>),
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> TensorResult<Self> {
        match spec {
            ModelSpec::Classifier(s) => Ok(Model::Classifier(TinyClassifier::build(s.clone(), seed)?)),
            ModelSpec::Segnet(s) => Ok(Model::Segnet(TinySegNet::build(s.clone(), seed)?)),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Classifier(m) => ModelSpec::Classifier(m.spec.clone()),
            Model::Segnet(m) => ModelSpec::Segnet(m.spec.clone()),
        }
    }

    pub fn params(&self) -> &Params<T> {
        match self {
            Model::Classifier(m) => m.params(),
            Model::Segnet(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        match self {
            Model::Classifier(m) => m.params_mut(),
            Model::Segnet(m) => m.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::lifting::Subband;

    fn classifier_spec(pooling: PoolKind) -> TinyClassifierSpec {
        TinyClassifierSpec {
            in_channels: 1,
            input_hw: (28, 28),
            block_channels: vec![16, 32],
            classes: 10,
            pooling,
            lift: LiftConfig::default(),
        }
    }

    #[test]
    fn classifier_shape_path_28() {
        let model = TinyClassifier::<f32>::build(classifier_spec(PoolKind::Max), 1).unwrap();
        assert_eq!(model.final_hw(), (7, 7));
        let x = Tensor::<f32>::full(&[2, 1, 28, 28], 0.5);
        let logits = model.logits(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 10]);
    }

    #[test]
    fn pooling_variants_share_shape_contract() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 28, 28], |i| (i % 7) as f32 * 0.1);
        let mut shapes = Vec::new();
        for pooling in [PoolKind::Max, PoolKind::Avg, PoolKind::Skip, PoolKind::Lift] {
            let model = TinyClassifier::<f32>::build(classifier_spec(pooling), 3).unwrap();
            let logits = model.logits(&x).unwrap();
            shapes.push(logits.shape().to_vec());
        }
        assert!(shapes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_initial_logits() {
        let x = Tensor::<f32>::from_fn(&[2, 1, 16, 16], |i| (i % 13) as f32 * 0.07);
        let spec = TinyClassifierSpec {
            input_hw: (16, 16),
            ..classifier_spec(PoolKind::Lift)
        };
        let a = TinyClassifier::<f32>::build(spec.clone(), 9).unwrap();
        let b = TinyClassifier::<f32>::build(spec.clone(), 9).unwrap();
        assert_eq!(a.logits(&x).unwrap(), b.logits(&x).unwrap());
        let c = TinyClassifier::<f32>::build(spec, 10).unwrap();
        assert_ne!(a.logits(&x).unwrap(), c.logits(&x).unwrap());
    }

    #[test]
    fn lift_select_modes_accepted() {
        for band in [Subband::Ll, Subband::Lh, Subband::Hl, Subband::Hh] {
            let spec = TinyClassifierSpec {
                input_hw: (16, 16),
                lift: LiftConfig {
                    pool_mode: PoolMode::Select(band),
                    ..Default::default()
                },
                ..classifier_spec(PoolKind::Lift)
            };
            let model = TinyClassifier::<f32>::build(spec, 4).unwrap();
            let x = Tensor::<f32>::full(&[1, 1, 16, 16], 0.25);
            assert_eq!(model.logits(&x).unwrap().shape(), &[1, 10]);
        }
    }

    #[test]
    fn all_subbands_classifier_rejected() {
        let spec = TinyClassifierSpec {
            lift: LiftConfig {
                pool_mode: PoolMode::AllSubbands,
                ..Default::default()
            },
            ..classifier_spec(PoolKind::Lift)
        };
        assert!(TinyClassifier::<f32>::build(spec, 0).is_err());
    }

    fn segnet_spec(pooling: UpPoolKind) -> TinySegNetSpec {
        TinySegNetSpec {
            in_channels: 1,
            input_hw: (16, 16),
            block_channels: vec![8, 16],
            classes: 4,
            pooling,
            lift: LiftConfig::default(),
        }
    }

    #[test]
    fn segnet_output_matches_input_size() {
        for pooling in [UpPoolKind::MaxUnpool, UpPoolKind::LiftUnpool] {
            let model = TinySegNet::<f32>::build(segnet_spec(pooling), 5).unwrap();
            let x = Tensor::<f32>::from_fn(&[2, 1, 16, 16], |i| (i % 11) as f32 * 0.09);
            let logits = model.logits(&x).unwrap();
            assert_eq!(logits.shape(), &[2, 4, 16, 16]);
            let masks = model.predict_masks(&x).unwrap();
            assert_eq!(masks.len(), 2 * 16 * 16);
        }
    }

    #[test]
    fn segnet_handles_odd_input_sizes() {
        // The lift path pads odd axes and crops on the way back up; the max
        // path drops the edge window and unpools into the original extent.
        for pooling in [UpPoolKind::MaxUnpool, UpPoolKind::LiftUnpool] {
            let spec = TinySegNetSpec {
                input_hw: (15, 13),
                ..segnet_spec(pooling)
            };
            let model = TinySegNet::<f32>::build(spec, 5).unwrap();
            let x = Tensor::<f32>::from_fn(&[1, 1, 15, 13], |i| (i % 7) as f32 * 0.13);
            let logits = model.logits(&x).unwrap();
            assert_eq!(logits.shape(), &[1, 4, 15, 13], "{pooling:?}");
        }
    }

    #[test]
    fn segnet_lift_collects_constraints_per_level() {
        let model = TinySegNet::<f64>::build(segnet_spec(UpPoolKind::LiftUnpool), 6).unwrap();
        let mut tape = Tape::new();
        let vars = model.params().bind_all(&mut tape, false);
        let x = tape.constant(Tensor::<f64>::full(&[1, 1, 16, 16], 0.5));
        let out = model.forward(&mut tape, x, &vars).unwrap();
        // Two levels, three 1-D passes each.
        assert_eq!(out.constraints.len(), 6);
    }

    /// Zero biases put relu pre-activations exactly on the kink wherever an
    /// input window is all clamped zeros, which breaks finite differences.
    /// Nudging the biases keeps the check on smooth ground.
    fn nudge_biases<T: crate::scalar::Scalar>(params: &mut Params<T>) {
        for entry in params.entries_mut() {
            if !entry.decay {
                for (i, v) in entry.tensor.data_mut().iter_mut().enumerate() {
                    *v += T::from_f64_lossy(0.05 + 0.013 * (i % 7) as f64);
                }
            }
        }
    }

    #[test]
    fn full_classifier_gradient_check() {
        let spec = TinyClassifierSpec {
            in_channels: 1,
            input_hw: (8, 8),
            block_channels: vec![2, 3],
            classes: 3,
            pooling: PoolKind::Lift,
            lift: LiftConfig {
                kernel_size: 3,
                ..Default::default()
            },
        };
        let mut model = TinyClassifier::<f64>::build(spec, 7).unwrap();
        nudge_biases(model.params_mut());
        let mut rng = Rng64::new(12);
        let mut tape = Tape::new();
        let vars = model.params().bind_all(&mut tape, true);
        let x = tape.leaf(Tensor::from_fn(&[2, 1, 8, 8], |_| rng.uniform(0.0, 1.0)), false);
        let out = model.forward(&mut tape, x, &vars).unwrap();
        let task = tape.softmax_cross_entropy(out.logits, &[0, 2]).unwrap();
        let (cu, cp) = crate::loss::constraint_sum(
            &mut tape,
            &out.constraints,
            crate::loss::ConstraintForm::MeanSquared,
        )
        .unwrap();
        let (total, _) =
            crate::loss::total_loss(&mut tape, task, cu, cp, &crate::loss::LossConfig::default())
                .unwrap();
        let err = gradient_check(&tape, total, &vars, 1e-6).unwrap();
        assert!(err < 1e-3, "full classifier gradient error {err}");
    }

    #[test]
    fn full_segnet_gradient_check() {
        let spec = TinySegNetSpec {
            in_channels: 1,
            input_hw: (8, 8),
            block_channels: vec![2, 3],
            classes: 3,
            pooling: UpPoolKind::LiftUnpool,
            lift: LiftConfig {
                kernel_size: 3,
                ..Default::default()
            },
        };
        let mut model = TinySegNet::<f64>::build(spec, 8).unwrap();
        nudge_biases(model.params_mut());
        let mut rng = Rng64::new(13);
        let mut tape = Tape::new();
        let vars = model.params().bind_all(&mut tape, true);
        let x = tape.leaf(Tensor::from_fn(&[2, 1, 8, 8], |_| rng.uniform(0.0, 1.0)), false);
        let out = model.forward(&mut tape, x, &vars).unwrap();
        let mask: Vec<u8> = (0..2 * 8 * 8).map(|i| (i % 3) as u8).collect();
        let task = tape.pixel_cross_entropy(out.logits, &mask).unwrap();
        let (cu, cp) = crate::loss::constraint_sum(
            &mut tape,
            &out.constraints,
            crate::loss::ConstraintForm::MeanSquared,
        )
        .unwrap();
        let (total, _) =
            crate::loss::total_loss(&mut tape, task, cu, cp, &crate::loss::LossConfig::default())
                .unwrap();
        let err = gradient_check(&tape, total, &vars, 1e-6).unwrap();
        assert!(err < 1e-3, "full segnet gradient error {err}");
    }
}
