//! Parametric model families mapping (u, w) to tape expressions for
//! (c, A, b).
//!
//! Three closed families cover the learning tasks:
//! - `Direct`: w is the flat concatenation of (c, A, b); u is ignored.
//!   Non-parametric learning moves the LP data itself.
//! - `LinearShift`: affine shifts w1 + w2 u on every c entry, w3 + w4 u on
//!   one masked entry per row of A, w5 + w6 u on every b entry, around
//!   stored base tensors.
//! - `TrigDemo`: the two-weight trigonometric instance with
//!   c = (cos(w0 + w1 u), sin(w0 + w1 u)) and three u-dependent
//!   constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::LinearProgram;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Direct,
    LinearShift,
    TrigDemo,
}

/// A learnable forward-instance parameterization. `w` is the only
/// requires-grad leaf of an instantiated program.
#[derive(Debug, Clone)]
pub struct ParametricModel {
    pub family: ModelFamily,
    /// Current weights (copied onto a fresh leaf per instantiation).
    pub w: Tensor,
    /// Base cost for LinearShift.
    pub base_c: Option<Tensor>,
    /// Base constraint matrix for LinearShift.
    pub base_a: Option<Tensor>,
    /// Base right-hand side for LinearShift.
    pub base_b: Option<Tensor>,
    /// Shifted column of each A row for LinearShift.
    pub masks: Option<Vec<usize>>,
    pub d: usize,
    pub m: usize,
}

/// A model instantiated on a tape: the weight leaf plus the LP it produced.
#[derive(Debug, Clone, Copy)]
pub struct Instantiated {
    pub w: VarId,
    pub lp: LinearProgram,
}

/// One observed optimum: the feature u it was generated under and the
/// solution itself. Non-parametric tasks use a single dummy u = 0.
#[derive(Debug, Clone)]
pub struct Observation {
    pub u: f64,
    pub x: Tensor,
}

impl ParametricModel {
    /// Direct parameterization of a (d, m) instance; w packs (c, A, b)
    /// row-major.
    pub fn direct(c: &Tensor, a: &Tensor, b: &Tensor) -> Result<Self> {
        let d = c.rows();
        let m = a.rows();
        if a.cols() != d || b.rows() != m || c.cols() != 1 || b.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "direct_model",
                detail: format!("c {:?}, A {:?}, b {:?}", c.shape(), a.shape(), b.shape()),
            });
        }
        let mut w = Vec::with_capacity(d + m * d + m);
        w.extend_from_slice(c.as_slice());
        w.extend_from_slice(a.as_slice());
        w.extend_from_slice(b.as_slice());
        Ok(ParametricModel {
            family: ModelFamily::Direct,
            w: Tensor::vector(w),
            base_c: None,
            base_a: None,
            base_b: None,
            masks: None,
            d,
            m,
        })
    }

    /// Six-weight affine-shift family around (base_c, base_a, base_b), with
    /// one shifted column per A row given by `masks`.
    pub fn linear_shift(
        w: Tensor,
        base_c: Tensor,
        base_a: Tensor,
        base_b: Tensor,
        masks: Vec<usize>,
    ) -> Result<Self> {
        let d = base_c.rows();
        let m = base_a.rows();
        if w.numel() != 6 {
            return Err(Error::InvalidArgument(format!(
                "linear-shift weights must have length 6, got {}",
                w.numel()
            )));
        }
        if base_a.cols() != d || base_b.rows() != m || masks.len() != m {
            return Err(Error::ShapeMismatch {
                op: "linear_shift_model",
                detail: format!(
                    "c {:?}, A {:?}, b {:?}, masks {}",
                    base_c.shape(),
                    base_a.shape(),
                    base_b.shape(),
                    masks.len()
                ),
            });
        }
        if masks.iter().any(|&j| j >= d) {
            return Err(Error::InvalidArgument("mask column out of range".into()));
        }
        Ok(ParametricModel {
            family: ModelFamily::LinearShift,
            w,
            base_c: Some(base_c),
            base_a: Some(base_a),
            base_b: Some(base_b),
            masks: Some(masks),
            d,
            m,
        })
    }

    /// The two-weight trigonometric demo family (d = 2, m = 3).
    pub fn trig_demo(w: Tensor) -> Result<Self> {
        if w.numel() != 2 {
            return Err(Error::InvalidArgument(format!(
                "trig-demo weights must have length 2, got {}",
                w.numel()
            )));
        }
        Ok(ParametricModel {
            family: ModelFamily::TrigDemo,
            w,
            base_c: None,
            base_a: None,
            base_b: None,
            masks: None,
            d: 2,
            m: 3,
        })
    }

    pub fn weight_len(&self) -> usize {
        self.w.numel()
    }

    /// Replace the weights (e.g. after a learning step).
    pub fn with_weights(&self, w: Tensor) -> Result<Self> {
        if w.numel() != self.w.numel() {
            return Err(Error::InvalidArgument(format!(
                "weight length {} does not match family ({})",
                w.numel(),
                self.w.numel()
            )));
        }
        let mut out = self.clone();
        out.w = w;
        Ok(out)
    }

    /// Record (c, A, b) as expressions of a fresh weight leaf at feature u.
    pub fn instantiate(&self, u: f64, tape: &mut Tape) -> Result<Instantiated> {
        let w = tape.leaf(self.w.clone(), true)?;
        let lp = self.instantiate_with(w, u, tape)?;
        Ok(Instantiated { w, lp })
    }

    /// As `instantiate`, but reusing an existing weight leaf.
    pub fn instantiate_with(&self, w: VarId, u: f64, tape: &mut Tape) -> Result<LinearProgram> {
        match self.family {
            ModelFamily::Direct => {
                let (d, m) = (self.d, self.m);
                let c = tape.slice_rows(w, 0, d)?;
                let a_flat = tape.slice_rows(w, d, m * d)?;
                let a = tape.reshape(a_flat, m, d)?;
                let b = tape.slice_rows(w, d + m * d, m)?;
                Ok(LinearProgram { c, a, b })
            }
            ModelFamily::LinearShift => {
                let (d, m) = (self.d, self.m);
                let base_c = self.base_c.as_ref().expect("linear-shift has base c");
                let base_a = self.base_a.as_ref().expect("linear-shift has base A");
                let base_b = self.base_b.as_ref().expect("linear-shift has base b");
                let masks = self.masks.as_ref().expect("linear-shift has masks");

                // shift = w_odd + w_even * u, one scalar per block.
                let shift = |tape: &mut Tape, lo: usize| -> Result<VarId> {
                    let w_const = tape.slice_rows(w, lo, 1)?;
                    let w_slope = tape.slice_rows(w, lo + 1, 1)?;
                    let slope_u = tape.scale(w_slope, u)?;
                    tape.add(w_const, slope_u)
                };
                let sc = shift(tape, 0)?;
                let sa = shift(tape, 2)?;
                let sb = shift(tape, 4)?;

                let cb = tape.constant(base_c.clone())?;
                let ones_d = tape.constant(Tensor::ones(d, 1))?;
                let sc_vec = tape.scalar_mul(sc, ones_d)?;
                let c = tape.add(cb, sc_vec)?;

                let ab = tape.constant(base_a.clone())?;
                let mut mask_t = Tensor::zeros(m, d);
                for (i, &j) in masks.iter().enumerate() {
                    mask_t.set(i, j, 1.0);
                }
                let mask = tape.constant(mask_t)?;
                let sa_mat = tape.scalar_mul(sa, mask)?;
                let a = tape.add(ab, sa_mat)?;

                let bb = tape.constant(base_b.clone())?;
                let ones_m = tape.constant(Tensor::ones(m, 1))?;
                let sb_vec = tape.scalar_mul(sb, ones_m)?;
                let b = tape.add(bb, sb_vec)?;

                Ok(LinearProgram { c, a, b })
            }
            ModelFamily::TrigDemo => {
                let w0 = tape.slice_rows(w, 0, 1)?;
                let w1 = tape.slice_rows(w, 1, 1)?;
                let w1u = tape.scale(w1, u)?;
                let theta = tape.add(w0, w1u)?;
                let cos_t = tape.cos(theta)?;
                let sin_t = tape.sin(theta)?;
                let c = tape.concat(&[cos_t, sin_t])?;

                // Rows: [-1, 0], [0, -1], [w0, 1 + (1/3) w1 u].
                let row1 = tape.constant(Tensor::new(1, 2, vec![-1.0, 0.0])?)?;
                let row2 = tape.constant(Tensor::new(1, 2, vec![0.0, -1.0])?)?;
                let one = tape.scalar_const(1.0)?;
                let w1u_third = tape.scale(w1, u / 3.0)?;
                let a32 = tape.add(one, w1u_third)?;
                let row3_col = tape.concat(&[w0, a32])?;
                let row3 = tape.transpose(row3_col)?;
                let a = tape.concat(&[row1, row2, row3])?;

                // b = (0.2 w0 u, -0.2 w1 u, w0 + 0.1 u).
                let b1 = tape.scale(w0, 0.2 * u)?;
                let b2 = tape.scale(w1, -0.2 * u)?;
                let point_one_u = tape.scalar_const(0.1 * u)?;
                let b3 = tape.add(w0, point_one_u)?;
                let b = tape.concat(&[b1, b2, b3])?;

                Ok(LinearProgram { c, a, b })
            }
        }
    }
}

/// Gradient of an on-tape scalar loss with respect to the model's weight
/// leaf.
pub fn gradient_wrt_w(w: VarId, loss: VarId, tape: &mut Tape) -> Result<Tensor> {
    let grads = tape.backward(loss)?;
    grads
        .get(w)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("weight leaf does not require gradients".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn direct_reshapes_weights() {
        let c = Tensor::vector(vec![1.0, 2.0]);
        let a = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let b = Tensor::vector(vec![1.0, 1.0, 0.0, 0.0]);
        let model = ParametricModel::direct(&c, &a, &b).unwrap();
        assert_eq!(model.weight_len(), 2 + 8 + 4);

        let mut tape = Tape::new();
        let inst = model.instantiate(0.0, &mut tape).unwrap();
        assert_eq!(tape.value(inst.lp.c), &c);
        assert_eq!(tape.value(inst.lp.a), &a);
        assert_eq!(tape.value(inst.lp.b), &b);
    }

    #[test]
    fn direct_gradient_is_concatenated() {
        // loss = c.x0 + sum(A).k + b.y0 decomposes into the w blocks.
        let c = Tensor::vector(vec![1.0, 2.0]);
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::vector(vec![1.0, 1.0]);
        let model = ParametricModel::direct(&c, &a, &b).unwrap();

        let mut tape = Tape::new();
        let inst = model.instantiate(0.0, &mut tape).unwrap();
        let x0 = tape.leaf(Tensor::vector(vec![3.0, 4.0]), false).unwrap();
        let lc = tape.dot(inst.lp.c, x0).unwrap();
        let asum = tape.sum(inst.lp.a).unwrap();
        let bsum = tape.sum(inst.lp.b).unwrap();
        let partial = tape.add(lc, asum).unwrap();
        let loss = tape.add(partial, bsum).unwrap();

        let g = gradient_wrt_w(inst.w, loss, &mut tape).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_shift_zero_weights_reproduce_base() {
        let base_c = Tensor::vector(vec![0.5, -0.3]);
        let base_a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let base_b = Tensor::vector(vec![1.0, 1.0, 0.5]);
        let model = ParametricModel::linear_shift(
            Tensor::vector(vec![0.0; 6]),
            base_c.clone(),
            base_a.clone(),
            base_b.clone(),
            vec![1, 0, 1],
        )
        .unwrap();

        for u in [-0.7, 0.0, 0.4] {
            let mut tape = Tape::new();
            let inst = model.instantiate(u, &mut tape).unwrap();
            assert_eq!(tape.value(inst.lp.c), &base_c);
            assert_eq!(tape.value(inst.lp.a), &base_a);
            assert_eq!(tape.value(inst.lp.b), &base_b);
        }
    }

    #[test]
    fn linear_shift_structure() {
        let base_c = Tensor::vector(vec![1.0, 2.0]);
        let base_a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let base_b = Tensor::vector(vec![3.0, 4.0]);
        let w = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let model =
            ParametricModel::linear_shift(w, base_c, base_a, base_b, vec![1, 0]).unwrap();

        let u = 0.5;
        let mut tape = Tape::new();
        let inst = model.instantiate(u, &mut tape).unwrap();
        let sc = 0.1 + 0.2 * u;
        let sa = 0.3 + 0.4 * u;
        let sb = 0.5 + 0.6 * u;
        assert_relative_eq!(tape.value(inst.lp.c).get(0, 0), 1.0 + sc);
        assert_relative_eq!(tape.value(inst.lp.c).get(1, 0), 2.0 + sc);
        assert_relative_eq!(tape.value(inst.lp.a).get(0, 1), 0.0 + sa);
        assert_relative_eq!(tape.value(inst.lp.a).get(0, 0), 1.0);
        assert_relative_eq!(tape.value(inst.lp.a).get(1, 0), 0.0 + sa);
        assert_relative_eq!(tape.value(inst.lp.b).get(0, 0), 3.0 + sb);
        assert_relative_eq!(tape.value(inst.lp.b).get(1, 0), 4.0 + sb);
    }

    #[test]
    fn linear_shift_chain_rule_in_u() {
        // dloss/dw2 = sum_i u * dloss/dc_i for loss = c . x0.
        let base_c = Tensor::vector(vec![1.0, 2.0]);
        let base_a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let base_b = Tensor::vector(vec![1.0]);
        let u = 0.3;
        let model = ParametricModel::linear_shift(
            Tensor::vector(vec![0.1, 0.2, 0.0, 0.0, 0.0, 0.0]),
            base_c,
            base_a,
            base_b,
            vec![0],
        )
        .unwrap();

        let mut tape = Tape::new();
        let inst = model.instantiate(u, &mut tape).unwrap();
        let x0 = tape.leaf(Tensor::vector(vec![3.0, 4.0]), false).unwrap();
        let loss = tape.dot(inst.lp.c, x0).unwrap();
        let g = gradient_wrt_w(inst.w, loss, &mut tape).unwrap();
        // dloss/dc = x0; w1 collects the sum, w2 the u-weighted sum.
        assert_relative_eq!(g.as_slice()[0], 7.0);
        assert_relative_eq!(g.as_slice()[1], u * 7.0);
    }

    #[test]
    fn trig_demo_matches_direct_substitution() {
        let model = ParametricModel::trig_demo(Tensor::vector(vec![1.0, 1.0])).unwrap();
        let u = 0.5;
        let mut tape = Tape::new();
        let inst = model.instantiate(u, &mut tape).unwrap();

        let c = tape.value(inst.lp.c);
        assert_relative_eq!(c.get(0, 0), (1.5f64).cos());
        assert_relative_eq!(c.get(1, 0), (1.5f64).sin());

        let a = tape.value(inst.lp.a);
        assert_eq!(a.shape(), (3, 2));
        assert_relative_eq!(a.get(0, 0), -1.0);
        assert_relative_eq!(a.get(1, 1), -1.0);
        assert_relative_eq!(a.get(2, 0), 1.0);
        assert_relative_eq!(a.get(2, 1), 1.0 + 0.5 / 3.0); // 7/6

        let b = tape.value(inst.lp.b);
        assert_relative_eq!(b.get(0, 0), 0.1);
        assert_relative_eq!(b.get(1, 0), -0.1);
        assert_relative_eq!(b.get(2, 0), 1.05);
    }

    #[test]
    fn wrong_weight_length_rejected() {
        assert!(ParametricModel::trig_demo(Tensor::vector(vec![1.0])).is_err());
        let base_c = Tensor::vector(vec![1.0]);
        let base_a = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let base_b = Tensor::vector(vec![1.0]);
        assert!(ParametricModel::linear_shift(
            Tensor::vector(vec![0.0; 5]),
            base_c,
            base_a,
            base_b,
            vec![0],
        )
        .is_err());
    }

    #[test]
    fn instantiation_is_deterministic() {
        let model = ParametricModel::trig_demo(Tensor::vector(vec![0.7, -0.2])).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let inst = model.instantiate(0.25, &mut tape).unwrap();
            (
                tape.value(inst.lp.c).clone(),
                tape.value(inst.lp.a).clone(),
                tape.value(inst.lp.b).clone(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trig_gradient_matches_finite_differences() {
        // Loss through instantiation only (solver exercised elsewhere).
        let u = 0.4;
        let err = crate::tape::grad_check(
            |tape, w| {
                let model = ParametricModel::trig_demo(tape.value(w).clone()).unwrap();
                let lp = model.instantiate_with(w, u, tape)?;
                let csum = tape.sum(lp.c)?;
                let asum = tape.sum(lp.a)?;
                let bsum = tape.sum(lp.b)?;
                let partial = tape.add(csum, asum)?;
                tape.add(partial, bsum)
            },
            &Tensor::vector(vec![0.9, 0.7]),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}
