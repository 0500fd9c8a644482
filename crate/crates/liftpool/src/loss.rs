//! Training objective: a task loss (cross-entropy ops live on the tape) plus
//! the two lifting constraint terms. `c_u` pulls the approximation band `s`
//! towards the odd samples it summarises; `c_p` shrinks the detail band `d`.
//! The total is `L = L_task + lambda_u * c_u + lambda_p * c_p`, with
//! `lambda_u = 0.01` and `lambda_p = 0.1` by default. Terms from every
//! lifting layer and every 1-D pass are summed.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::lifting::ConstraintTerm;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};

const L2_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintForm {
    /// `mean(residual^2)`: smooth at zero residual, batch-size invariant.
    #[default]
    MeanSquared,
    /// `sqrt(sum(residual^2) + eps)`: the literal L2-norm form.
    L2Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_u: f64,
    pub lambda_p: f64,
    pub constraint_form: ConstraintForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_u: 0.01,
            lambda_p: 0.1,
            constraint_form: ConstraintForm::MeanSquared,
        }
    }
}

/// Scalar components of one training step. `total` is recomposed here in
/// `f64`, so `total == task_loss + lambda_u*c_u + lambda_p*c_p` holds exactly
/// as written regardless of the tape's element type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task_loss: f64,
    pub c_u: f64,
    pub c_p: f64,
    pub total: f64,
}

fn residual_norm<T: Scalar>(
    tape: &mut Tape<T>,
    residual: VarId,
    form: ConstraintForm,
) -> TensorResult<VarId> {
    let sq = tape.squared_l2(residual)?;
    match form {
        ConstraintForm::MeanSquared => {
            let n = tape.value(residual).numel();
            tape.scalar_mul(sq, T::one() / T::from_usize_lossy(n))
        }
        ConstraintForm::L2Norm => tape.sqrt_eps(sq, T::from_f64_lossy(L2_NORM_EPS)),
    }
}

/// `c_u`: distance between the approximation band and the odd samples.
pub fn constraint_cu<T: Scalar>(
    tape: &mut Tape<T>,
    s: VarId,
    x_odd: VarId,
    form: ConstraintForm,
) -> TensorResult<VarId> {
    let residual = tape.sub(s, x_odd)?;
    residual_norm(tape, residual, form)
}

/// `c_p`: distance between the odd samples and their prediction. Equals the
/// chosen norm of the detail band.
pub fn constraint_cp<T: Scalar>(
    tape: &mut Tape<T>,
    x_odd: VarId,
    p_of_x_even: VarId,
    form: ConstraintForm,
) -> TensorResult<VarId> {
    let residual = tape.sub(x_odd, p_of_x_even)?;
    residual_norm(tape, residual, form)
}

/// Sums the per-pass constraint terms collected by the lifting layers into
/// one `(c_u, c_p)` pair of scalars. Empty input yields explicit zeros.
pub fn constraint_sum<T: Scalar>(
    tape: &mut Tape<T>,
    terms: &[ConstraintTerm],
    form: ConstraintForm,
) -> TensorResult<(VarId, VarId)> {
    let mut cu_total: Option<VarId> = None;
    let mut cp_total: Option<VarId> = None;
    for term in terms {
        let cu = constraint_cu(tape, term.s, term.x_odd, form)?;
        let cp = residual_norm(tape, term.d, form)?;
        cu_total = Some(match cu_total {
            None => cu,
            Some(acc) => tape.add(acc, cu)?,
        });
        cp_total = Some(match cp_total {
            None => cp,
            Some(acc) => tape.add(acc, cp)?,
        });
    }
    let zero = |tape: &mut Tape<T>| tape.constant(Tensor::scalar(T::zero()));
    Ok((
        cu_total.unwrap_or_else(|| zero(tape)),
        cp_total.unwrap_or_else(|| zero(tape)),
    ))
}

/// `L = L_task + lambda_u*c_u + lambda_p*c_p` on the tape, plus the report.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    task: VarId,
    c_u: VarId,
    c_p: VarId,
    cfg: &LossConfig,
) -> TensorResult<(VarId, LossReport)> {
    let scaled_cu = tape.scalar_mul(c_u, T::from_f64_lossy(cfg.lambda_u))?;
    let scaled_cp = tape.scalar_mul(c_p, T::from_f64_lossy(cfg.lambda_p))?;
    let partial = tape.add(task, scaled_cu)?;
    let total = tape.add(partial, scaled_cp)?;

    let task_loss = tape.value(task).item().to_f64_lossy();
    let cu_val = tape.value(c_u).item().to_f64_lossy();
    let cp_val = tape.value(c_p).item().to_f64_lossy();
    let report = LossReport {
        task_loss,
        c_u: cu_val,
        c_p: cp_val,
        total: task_loss + cfg.lambda_u * cu_val + cfg.lambda_p * cp_val,
    };
    Ok((total, report))
}
