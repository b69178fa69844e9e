//! Differentiable training losses between solver output and targets.
//!
//! ADG is the absolute duality gap c_lrn' |x_tru - x_lrn| (elementwise
//! absolute value, dotted with the learned cost); SE is the squared
//! Euclidean error; MSE averages SE terms over a batch of observations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Adg,
    Se,
    /// Mean of SE terms; only meaningful for batched observations.
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Adg => write!(f, "adg"),
            LossKind::Se => write!(f, "se"),
            LossKind::Mse => write!(f, "mse"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adg" => Ok(LossKind::Adg),
            "se" => Ok(LossKind::Se),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::InvalidArgument(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Absolute duality gap c_lrn' |x_tru - x_lrn|, on tape.
///
/// The sign follows the formula: a negative entry of c_lrn can make the
/// value negative, and a residual orthogonal to c_lrn makes it zero even
/// for an infeasible target.
pub fn adg(c_lrn: VarId, x_lrn: VarId, x_tru: &Tensor, tape: &mut Tape) -> Result<VarId> {
    check_vec_shapes("adg", tape, c_lrn, x_lrn, x_tru)?;
    let tru = tape.constant(x_tru.clone())?;
    let resid = tape.sub(tru, x_lrn)?;
    let abs_resid = tape.abs(resid)?;
    tape.dot(c_lrn, abs_resid)
}

/// Classical duality-gap diagnostic |c'(x_tru - x_lrn)|. Not a training
/// default; exposed for comparison with the elementwise form.
pub fn adg_classical(c_lrn: VarId, x_lrn: VarId, x_tru: &Tensor, tape: &mut Tape) -> Result<VarId> {
    check_vec_shapes("adg_classical", tape, c_lrn, x_lrn, x_tru)?;
    let tru = tape.constant(x_tru.clone())?;
    let obj_tru = tape.dot(c_lrn, tru)?;
    let obj_lrn = tape.dot(c_lrn, x_lrn)?;
    let gap = tape.sub(obj_tru, obj_lrn)?;
    tape.abs(gap)
}

/// Squared error |x_tru - x_lrn|^2, on tape.
pub fn se(x_lrn: VarId, x_tru: &Tensor, tape: &mut Tape) -> Result<VarId> {
    let x = tape.value(x_lrn);
    if x.shape() != x_tru.shape() || x.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "se",
            detail: format!("{:?} vs {:?}", x.shape(), x_tru.shape()),
        });
    }
    let tru = tape.constant(x_tru.clone())?;
    let resid = tape.sub(tru, x_lrn)?;
    tape.l2_norm_sq(resid)
}

/// Arithmetic mean of per-observation scalar losses, on tape.
pub fn mse(per_obs_losses: &[VarId], tape: &mut Tape) -> Result<VarId> {
    if per_obs_losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for v in per_obs_losses {
        if !tape.value(*v).is_scalar() {
            let (rows, cols) = tape.value(*v).shape();
            return Err(Error::NonScalarLoss { rows, cols });
        }
    }
    let stacked = tape.concat(per_obs_losses)?;
    let total = tape.sum(stacked)?;
    tape.scale(total, 1.0 / per_obs_losses.len() as f64)
}

fn check_vec_shapes(
    op: &'static str,
    tape: &Tape,
    c: VarId,
    x_lrn: VarId,
    x_tru: &Tensor,
) -> Result<()> {
    let c_v = tape.value(c);
    let x_v = tape.value(x_lrn);
    if c_v.cols() != 1
        || x_v.cols() != 1
        || x_tru.cols() != 1
        || c_v.rows() != x_v.rows()
        || x_v.rows() != x_tru.rows()
    {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "c {:?}, x_lrn {:?}, x_tru {:?}",
                c_v.shape(),
                x_v.shape(),
                x_tru.shape()
            ),
        });
    }
    Ok(())
}
