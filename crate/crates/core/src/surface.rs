//! Loss-surface grids over the cost direction.
//!
//! Sweeps c = (cos theta, sin theta) around the unit circle for a 2D
//! instance and records the loss of the solver output against the stored
//! target, at each requested solver precision. At tight precision the SE
//! surface is piecewise constant in theta (the argmin jumps between
//! vertices); loose precision smooths it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instances::TaskInstance;
use crate::ipm::{solve_lp, IpmSettings, LinearProgram, SolveStatus};
use crate::losses::{adg, se, LossKind};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SurfacePoint {
    pub theta: f64,
    pub eps: f64,
    /// NaN when the solve failed at this angle.
    pub loss: f64,
}

/// Evaluate the loss over a resolution x |eps_list| polar grid of cost
/// directions. Only 2D instances are supported.
pub fn loss_surface(
    instance: &TaskInstance,
    loss: LossKind,
    eps_list: &[f64],
    resolution: usize,
) -> Result<Vec<SurfacePoint>> {
    if instance.baseline.d != 2 {
        return Err(Error::InvalidArgument(format!(
            "loss surfaces require d = 2 (instance has d = {})",
            instance.baseline.d
        )));
    }
    if resolution == 0 || eps_list.is_empty() {
        return Err(Error::InvalidArgument("need a positive resolution and eps values".into()));
    }
    let target = &instance
        .targets
        .first()
        .ok_or_else(|| Error::InvalidArgument("instance has no target".into()))?
        .x;

    let mut out = Vec::with_capacity(resolution * eps_list.len());
    for &eps in eps_list {
        let settings = IpmSettings::default().with_eps(eps);
        for i in 0..resolution {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / resolution as f64;
            let mut tape = Tape::new();
            let c = tape.leaf(Tensor::vector(vec![theta.cos(), theta.sin()]), true)?;
            let lp = LinearProgram {
                c,
                a: tape.constant(instance.baseline.a.clone())?,
                b: tape.constant(instance.baseline.b.clone())?,
            };
            let loss_val = match solve_lp(&lp, &settings, &mut tape) {
                Ok(res) if res.status == SolveStatus::Optimal => {
                    let x = res.x.expect("optimal solve has a solution");
                    let node = match loss {
                        LossKind::Adg => adg(c, x, target, &mut tape)?,
                        LossKind::Se | LossKind::Mse => se(x, target, &mut tape)?,
                    };
                    tape.value(node).scalar_value()
                }
                Ok(_) => f64::NAN,
                Err(Error::SingularSystem) => f64::NAN,
                Err(e) => return Err(e),
            };
            out.push(SurfacePoint { theta, eps, loss: loss_val });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{baseline_lp, instance_rng, make_learn_c};

    fn test_instance() -> TaskInstance {
        let mut rng = instance_rng(51, 0);
        let baseline = baseline_lp(2, 4, &mut rng).unwrap();
        make_learn_c(baseline, &mut rng).unwrap()
    }

    #[test]
    fn rejects_non_planar_instances() {
        let mut inst = test_instance();
        inst.baseline.d = 3;
        assert!(loss_surface(&inst, LossKind::Se, &[0.1], 8).is_err());
    }

    #[test]
    fn grid_shape_and_finiteness() {
        let inst = test_instance();
        let grid = loss_surface(&inst, LossKind::Se, &[0.1, 1e-5], 16).unwrap();
        assert_eq!(grid.len(), 32);
        assert!(grid.iter().all(|p| p.loss.is_finite()), "bounded instance solves everywhere");
    }

    #[test]
    fn adg_vanishes_at_optimal_alignment() {
        // The target is a vertex; at some angle it is the argmin, where ADG
        // (c' |x_tru - x_lrn|) is ~0 at tight precision.
        let inst = test_instance();
        let grid = loss_surface(&inst, LossKind::Adg, &[1e-5], 64).unwrap();
        let min = grid.iter().map(|p| p.loss.abs()).fold(f64::INFINITY, f64::min);
        assert!(min < 1e-3, "min |ADG| over angles = {min}");
    }

    #[test]
    fn tight_se_surface_is_piecewise_constant() {
        let inst = test_instance();
        let res = 96;
        let tight = loss_surface(&inst, LossKind::Se, &[1e-5], res).unwrap();
        let loose = loss_surface(&inst, LossKind::Se, &[0.1], res).unwrap();

        // Count cells with (numerically) zero angular derivative.
        let flat = |grid: &[SurfacePoint]| {
            (0..res)
                .filter(|&i| {
                    let a = grid[i].loss;
                    let b = grid[(i + 1) % res].loss;
                    (b - a).abs() < 1e-6
                })
                .count()
        };
        let flat_tight = flat(&tight);
        let flat_loose = flat(&loose);
        assert!(
            flat_tight > res / 2,
            "tight surface should be mostly flat, {flat_tight}/{res} cells"
        );
        assert!(
            flat_loose < flat_tight,
            "loose surface should be smoother: {flat_loose} vs {flat_tight} flat cells"
        );
    }
}
