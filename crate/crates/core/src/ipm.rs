//! Barrier interior-point LP solver recorded on the autodiff tape.
//!
//! Minimizes c'x subject to Ax <= b by damped Newton on the barrier
//! objective f_t(x) = t c'x - sum_i log(b_i - a_i'x), sharpening t by a
//! factor mu per stage until the duality-gap certificate m/t <= eps holds.
//! Every arithmetic step of the x-update chain lands on the tape, so a
//! backward pass from any loss of the solution reaches c, A and b (and
//! through them, model weights).
//!
//! Infeasible, Unbounded and SingularSystem are soft signals carried in the
//! result status; the learner's line search consumes them as step
//! rejections.

use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Inequality-form LP with tape-resident data.
#[derive(Debug, Clone, Copy)]
pub struct LinearProgram {
    /// Cost vector, d x 1.
    pub c: VarId,
    /// Constraint matrix, m x d.
    pub a: VarId,
    /// Right-hand side, m x 1.
    pub b: VarId,
}

impl LinearProgram {
    /// Validate shapes and return (d, m).
    pub fn dims(&self, tape: &Tape) -> Result<(usize, usize)> {
        let c = tape.value(self.c);
        let a = tape.value(self.a);
        let b = tape.value(self.b);
        let d = c.rows();
        let m = a.rows();
        if c.cols() != 1 || b.cols() != 1 || a.cols() != d || b.rows() != m || d < 1 || m < 1 {
            return Err(Error::ShapeMismatch {
                op: "linear_program",
                detail: format!("c {:?}, A {:?}, b {:?}", c.shape(), a.shape(), b.shape()),
            });
        }
        Ok((d, m))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    /// Initial barrier sharpness t^(0).
    pub t0: f64,
    /// Barrier growth factor, > 1.
    pub mu: f64,
    /// Duality-gap precision: terminate once m/t <= eps.
    pub eps: f64,
    /// Stop a centering run when half the squared Newton decrement falls
    /// below this.
    pub newton_tol: f64,
    /// Newton steps allowed per stage.
    pub max_newton: usize,
    /// Outer stage cap.
    pub max_outer: usize,
    /// Declare divergence when |x|_inf exceeds this.
    pub unbounded_norm: f64,
    /// Run phase one off-tape and insert its start point as a constant.
    pub freeze_phase_one: bool,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            t0: 1.0,
            mu: 10.0,
            eps: 1e-5,
            newton_tol: 1e-12,
            max_newton: 100,
            max_outer: 200,
            unbounded_norm: 1e8,
            freeze_phase_one: false,
        }
    }
}

impl IpmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.mu > 1.0 && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ipm settings require t0 > 0, mu > 1, eps > 0 (got t0={}, mu={}, eps={})",
                self.t0, self.mu, self.eps
            )));
        }
        Ok(())
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    SingularSystem,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final iterate, strictly feasible and near-optimal. None unless
    /// status is Optimal.
    pub x: Option<VarId>,
    pub status: SolveStatus,
    /// Outer centering stages run (main solve).
    pub stages: usize,
    /// Newton steps accepted in total, phase one included.
    pub newton_steps: usize,
    pub warning: Option<String>,
    /// Tape length when the solve started recording.
    pub recorded_from: usize,
    /// Tape length at the start of each Newton step, for truncated-backprop
    /// windows.
    pub step_marks: Vec<usize>,
    /// max(Ax - b) of each accepted main-stage iterate (all must be < 0).
    pub infeasibility_trace: Vec<f64>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// c'x of the solution, when one exists.
    pub fn objective(&self, tape: &Tape, lp: &LinearProgram) -> Option<f64> {
        let x = self.x?;
        tape.value(lp.c).dot(tape.value(x)).ok()
    }
}

/// Result of one phase-one run.
#[derive(Debug, Clone)]
pub enum PhaseOne {
    /// Strictly interior start point (constraint margin at least 1e-9).
    Feasible(VarId),
    Infeasible,
}

/// Full central path: one center per stage, last equals `result.x`.
#[derive(Debug, Clone)]
pub struct CentralPathTrace {
    pub centers: Vec<VarId>,
    /// c'x at each stage center.
    pub objectives: Vec<f64>,
    pub result: SolveResult,
}

/// Outcome of a single damped-Newton centering run.
#[derive(Debug, Clone)]
pub struct CenteringOutcome {
    pub x: VarId,
    pub newton_steps: usize,
    /// Barrier value after each accepted step (monotone decreasing).
    pub f_trace: Vec<f64>,
    /// Set when the run hit a divergence or singularity signal.
    pub signal: Option<SolveStatus>,
    pub converged: bool,
}

const ARMIJO_ALPHA: f64 = 0.25;
const BACKTRACK_BETA: f64 = 0.5;
const FEASIBILITY_SHRINK: f64 = 0.99;
const RIDGE: f64 = 1e-10;
const FULL_STEP_RUNAWAY: usize = 50;
const PHASE1_EXIT: f64 = -1e-6;
const PHASE1_MARGIN: f64 = -1e-9;
const PHASE1_EPS: f64 = 1e-6;

/// Solve the LP, recording the whole computation on `tape`.
pub fn solve_lp(lp: &LinearProgram, settings: &IpmSettings, tape: &mut Tape) -> Result<SolveResult> {
    Ok(solve_traced(lp, settings, tape)?.result)
}

/// As `solve_lp`, additionally returning each stage's center.
pub fn central_path_trace(
    lp: &LinearProgram,
    settings: &IpmSettings,
    tape: &mut Tape,
) -> Result<CentralPathTrace> {
    solve_traced(lp, settings, tape)
}

/// Find a strictly interior point of {x : Ax < b}, or certify the region
/// (numerically) empty. Minimizes the auxiliary slack s subject to
/// Ax - s 1 <= b with the same barrier machinery, starting from
/// (0, max(-b) + 1), and exits as soon as s dips below -1e-6.
pub fn phase_one(a: VarId, b: VarId, settings: &IpmSettings, tape: &mut Tape) -> Result<PhaseOne> {
    let at = tape.transpose(a)?;
    let mut solver = Solver::new(tape, settings)?;
    solver.phase_one(a, at, b)
}

/// One centering run at fixed sharpness `t` from a strictly feasible `x`.
pub fn newton_centering(
    x: VarId,
    t: f64,
    lp: &LinearProgram,
    settings: &IpmSettings,
    tape: &mut Tape,
) -> Result<CenteringOutcome> {
    lp.dims(tape)?;
    let at = tape.transpose(lp.a)?;
    let mut solver = Solver::new(tape, settings)?;
    solver.centering(lp.c, lp.a, at, lp.b, x, t, None)
}

fn solve_traced(
    lp: &LinearProgram,
    settings: &IpmSettings,
    tape: &mut Tape,
) -> Result<CentralPathTrace> {
    let (_, m) = lp.dims(tape)?;
    settings.validate()?;
    let recorded_from = tape.len();

    let fail = |status: SolveStatus, steps: usize, marks: Vec<usize>, warning: Option<String>| {
        CentralPathTrace {
            centers: Vec::new(),
            objectives: Vec::new(),
            result: SolveResult {
                x: None,
                status,
                stages: 0,
                newton_steps: steps,
                warning,
                recorded_from,
                step_marks: marks,
                infeasibility_trace: Vec::new(),
            },
        }
    };

    // Phase one: on-tape by default so the start point keeps its dependence
    // on A and b; frozen to a constant when requested.
    let (x0, at, mut solver) = if settings.freeze_phase_one {
        let mut scratch = Tape::new();
        let a2 = scratch.leaf(tape.value(lp.a).clone(), false)?;
        let b2 = scratch.leaf(tape.value(lp.b).clone(), false)?;
        let at2 = scratch.transpose(a2)?;
        let mut aux = Solver::new(&mut scratch, settings)?;
        let outcome = aux.phase_one(a2, at2, b2)?;
        let steps = aux.newton_steps;
        match outcome {
            PhaseOne::Infeasible => {
                return Ok(fail(SolveStatus::Infeasible, steps, Vec::new(), None));
            }
            PhaseOne::Feasible(z) => {
                let x0 = tape.leaf(scratch.value(z).clone(), false)?;
                let at = tape.transpose(lp.a)?;
                let mut solver = Solver::new(tape, settings)?;
                solver.newton_steps = steps;
                (x0, at, solver)
            }
        }
    } else {
        let at = tape.transpose(lp.a)?;
        let mut solver = Solver::new(tape, settings)?;
        match solver.phase_one(lp.a, at, lp.b)? {
            PhaseOne::Infeasible => {
                return Ok(fail(
                    SolveStatus::Infeasible,
                    solver.newton_steps,
                    solver.step_marks,
                    None,
                ));
            }
            PhaseOne::Feasible(x0) => (x0, at, solver),
        }
    };

    let mut centers = Vec::new();
    let mut objectives = Vec::new();
    let mut infeasibility_trace = Vec::new();
    let mut warning: Option<String> = None;
    let mut x = x0;
    let mut t = settings.t0;
    let mut stages = 0;

    loop {
        let outcome = solver.centering(lp.c, lp.a, at, lp.b, x, t, None)?;
        if let Some(signal) = outcome.signal {
            let mut out = fail(signal, solver.newton_steps, solver.step_marks, warning);
            out.result.stages = stages;
            return Ok(out);
        }
        if !outcome.converged && warning.is_none() {
            warning = Some(format!(
                "newton cap {} exceeded at stage {stages} (t={t:.3e})",
                settings.max_newton
            ));
        }
        x = outcome.x;
        stages += 1;
        centers.push(x);
        objectives.push(solver.tape.value(lp.c).dot(solver.tape.value(x))?);
        let ax = solver.tape.value(lp.a).matmul(solver.tape.value(x))?;
        let viol = ax
            .as_slice()
            .iter()
            .zip(solver.tape.value(lp.b).as_slice())
            .fold(f64::NEG_INFINITY, |acc, (axi, bi)| acc.max(axi - bi));
        infeasibility_trace.push(viol);

        if m as f64 / t <= settings.eps {
            break;
        }
        if stages >= settings.max_outer {
            // Certificate never reached within the stage budget.
            let mut out =
                fail(SolveStatus::SingularSystem, solver.newton_steps, solver.step_marks, warning);
            out.result.stages = stages;
            return Ok(out);
        }
        t *= settings.mu;
    }

    Ok(CentralPathTrace {
        centers,
        objectives,
        result: SolveResult {
            x: Some(x),
            status: SolveStatus::Optimal,
            stages,
            newton_steps: solver.newton_steps,
            warning,
            recorded_from,
            step_marks: solver.step_marks,
            infeasibility_trace,
        },
    })
}

/// Shared centering machinery for phase one and the main solve.
struct Solver<'t> {
    tape: &'t mut Tape,
    settings: IpmSettings,
    newton_steps: usize,
    step_marks: Vec<usize>,
}

impl<'t> Solver<'t> {
    fn new(tape: &'t mut Tape, settings: &IpmSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Solver { tape, settings: *settings, newton_steps: 0, step_marks: Vec::new() })
    }

    fn phase_one(&mut self, a: VarId, at: VarId, b: VarId) -> Result<PhaseOne> {
        let a_val = self.tape.value(a);
        let (m, d) = (a_val.rows(), a_val.cols());

        // Auxiliary problem: minimize s subject to Ax - s 1 <= b, i.e.
        // A_aux = [A | -1], c_aux = e_{d+1}, same b.
        let neg_ones_row = self.tape.constant(Tensor::new(1, m, vec![-1.0; m])?)?;
        let at_aux = self.tape.concat(&[at, neg_ones_row])?;
        let a_aux = self.tape.transpose(at_aux)?;
        let mut c_aux_t = Tensor::zeros(d + 1, 1);
        c_aux_t.set(d, 0, 1.0);
        let c_aux = self.tape.constant(c_aux_t)?;

        let s0 = self
            .tape
            .value(b)
            .as_slice()
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &bi| acc.max(-bi))
            + 1.0;
        let mut z0_t = Tensor::zeros(d + 1, 1);
        z0_t.set(d, 0, s0);
        let mut z = self.tape.leaf(z0_t, false)?;

        let mut t = self.settings.t0;
        let mut stages = 0;
        loop {
            let outcome = self.centering(c_aux, a_aux, at_aux, b, z, t, Some(PHASE1_EXIT))?;
            z = outcome.x;
            let s = self.tape.value(z).get(d, 0);
            if s < PHASE1_EXIT {
                break;
            }
            match outcome.signal {
                Some(SolveStatus::SingularSystem) => return Err(Error::SingularSystem),
                Some(_) => return Ok(PhaseOne::Infeasible),
                None => {}
            }
            stages += 1;
            if m as f64 / t <= PHASE1_EPS.min(self.settings.eps)
                || stages >= self.settings.max_outer
            {
                break;
            }
            t *= self.settings.mu;
        }

        if self.tape.value(z).get(d, 0) < PHASE1_MARGIN {
            Ok(PhaseOne::Feasible(self.tape.slice_rows(z, 0, d)?))
        } else {
            Ok(PhaseOne::Infeasible)
        }
    }

    /// Damped Newton on f_t from a strictly feasible x. `early_stop`, when
    /// set, ends the run as soon as c'x drops below the threshold (used by
    /// phase one).
    fn centering(
        &mut self,
        c: VarId,
        a: VarId,
        at: VarId,
        b: VarId,
        x0: VarId,
        t: f64,
        early_stop: Option<f64>,
    ) -> Result<CenteringOutcome> {
        let m = self.tape.value(a).rows();
        let d = self.tape.value(a).cols();
        let ones = self.tape.constant(Tensor::ones(m, 1))?;
        let tc = {
            let tleaf = self.tape.scalar_const(t)?;
            self.tape.scalar_mul(tleaf, c)?
        };

        let mut x = x0;
        let mut f_trace = Vec::new();
        let mut full_steps_in_a_row = 0usize;
        let mut steps = 0usize;

        let stop = |x, steps, f_trace, signal, converged| CenteringOutcome {
            x,
            newton_steps: steps,
            f_trace,
            signal,
            converged,
        };

        while steps < self.settings.max_newton {
            let mark = self.tape.len();

            // Gradient t c + A' delta and Hessian A' diag(delta^2) A.
            let ax = self.tape.matvec(a, x)?;
            let slack = self.tape.sub(b, ax)?;
            let delta = self.tape.div(ones, slack)?;
            let atd = self.tape.matvec(at, delta)?;
            let grad = self.tape.add(tc, atd)?;
            let delta2 = self.tape.square(delta)?;
            let scaled_rows = self.tape.row_scale(delta2, a)?;
            let hess = self.tape.matmul(at, scaled_rows)?;
            let neg_grad = self.tape.neg(grad)?;

            let dx = match self.tape.linear_solve(hess, neg_grad) {
                Ok(dx) => dx,
                Err(Error::SingularSystem) => {
                    // One ridge retry before giving up.
                    let ridge = self.tape.constant(ridge_matrix(d))?;
                    let hess_r = self.tape.add(hess, ridge)?;
                    match self.tape.linear_solve(hess_r, neg_grad) {
                        Ok(dx) => dx,
                        Err(Error::SingularSystem) => {
                            return Ok(stop(
                                x,
                                steps,
                                f_trace,
                                Some(SolveStatus::SingularSystem),
                                false,
                            ));
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => return Err(e),
            };

            let lambda_sq = -self.tape.value(grad).dot(self.tape.value(dx))?;
            if !lambda_sq.is_finite() {
                return Ok(stop(x, steps, f_trace, Some(SolveStatus::SingularSystem), false));
            }
            if 0.5 * lambda_sq <= self.settings.newton_tol {
                return Ok(stop(x, steps, f_trace, None, true));
            }

            let beta = backtrack(
                t,
                self.tape.value(c),
                self.tape.value(a),
                self.tape.value(b),
                self.tape.value(x),
                self.tape.value(dx),
                self.tape.value(slack),
                lambda_sq,
            );
            let Some(beta) = beta else {
                // Armijo stalled at machine precision: treat the iterate as
                // the effective center.
                return Ok(stop(x, steps, f_trace, None, true));
            };

            self.step_marks.push(mark);
            let step = self.tape.scale(dx, beta)?;
            x = self.tape.add(x, step)?;
            steps += 1;
            self.newton_steps += 1;

            if self.tape.value(x).norm_inf() > self.settings.unbounded_norm {
                return Ok(stop(x, steps, f_trace, Some(SolveStatus::Unbounded), false));
            }
            if beta >= 1.0 {
                full_steps_in_a_row += 1;
                if full_steps_in_a_row >= FULL_STEP_RUNAWAY {
                    return Ok(stop(x, steps, f_trace, Some(SolveStatus::Unbounded), false));
                }
            } else {
                full_steps_in_a_row = 0;
            }

            let f_now = barrier_value(
                t,
                self.tape.value(c),
                self.tape.value(a),
                self.tape.value(b),
                self.tape.value(x),
            )
            .ok_or_else(|| Error::InvalidArgument("iterate left the interior".into()))?;
            f_trace.push(f_now);

            if let Some(threshold) = early_stop {
                let obj = self.tape.value(c).dot(self.tape.value(x))?;
                if obj < threshold {
                    return Ok(stop(x, steps, f_trace, None, false));
                }
            }
        }

        Ok(stop(x, steps, f_trace, None, false))
    }
}

fn ridge_matrix(d: usize) -> Tensor {
    let mut r = Tensor::zeros(d, d);
    for i in 0..d {
        r.set(i, i, RIDGE);
    }
    r
}

/// f_t(x), or None when x is not strictly interior.
fn barrier_value(t: f64, c: &Tensor, a: &Tensor, b: &Tensor, x: &Tensor) -> Option<f64> {
    let ax = a.matmul(x).ok()?;
    let mut barrier = 0.0;
    for (axi, bi) in ax.as_slice().iter().zip(b.as_slice()) {
        let slack = bi - axi;
        if slack <= 0.0 {
            return None;
        }
        barrier -= slack.ln();
    }
    Some(t * c.dot(x).ok()? + barrier)
}

/// Backtracking line search: an initial shrink keeps the trial strictly
/// interior, then Armijo with alpha = 0.25 halves until accepted. Returns
/// None when no improving step exists above machine precision.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    t: f64,
    c: &Tensor,
    a: &Tensor,
    b: &Tensor,
    x: &Tensor,
    dx: &Tensor,
    slack: &Tensor,
    lambda_sq: f64,
) -> Option<f64> {
    let adx = a.matmul(dx).ok()?;
    let mut max_step = f64::INFINITY;
    for (adxi, si) in adx.as_slice().iter().zip(slack.as_slice()) {
        if *adxi > 0.0 {
            max_step = max_step.min(si / adxi);
        }
    }
    let mut beta =
        if max_step.is_finite() { (FEASIBILITY_SHRINK * max_step).min(1.0) } else { 1.0 };

    let f0 = barrier_value(t, c, a, b, x)?;
    let slope = -lambda_sq; // grad . dx
    while beta >= 1e-16 {
        let trial = x.zip(dx, |xi, di| xi + beta * di).ok()?;
        if let Some(f_trial) = barrier_value(t, c, a, b, &trial) {
            if f_trial <= f0 + ARMIJO_ALPHA * beta * slope {
                return Some(beta);
            }
        }
        beta *= BACKTRACK_BETA;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Unit box 0 <= x <= 1 as Ax <= b.
    fn unit_box(tape: &mut Tape, c: Vec<f64>) -> LinearProgram {
        let a = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let b = Tensor::vector(vec![1.0, 1.0, 0.0, 0.0]);
        LinearProgram {
            c: tape.leaf(Tensor::vector(c), true).unwrap(),
            a: tape.leaf(a, true).unwrap(),
            b: tape.leaf(b, true).unwrap(),
        }
    }

    #[test]
    fn box_minimum_at_origin() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![1.0, 1.0]);
        let res = solve_lp(&lp, &IpmSettings::default(), &mut tape).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        let x = tape.value(res.x.unwrap());
        assert_abs_diff_eq!(x.as_slice()[0], 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(x.as_slice()[1], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn box_maximum_corner() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![-1.0, -1.0]);
        let res = solve_lp(&lp, &IpmSettings::default(), &mut tape).unwrap();
        let x = tape.value(res.x.unwrap());
        assert_abs_diff_eq!(x.as_slice()[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(x.as_slice()[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn phase_one_finds_interior_point() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![1.0, 1.0]);
        match phase_one(lp.a, lp.b, &IpmSettings::default(), &mut tape).unwrap() {
            PhaseOne::Feasible(x0) => {
                let x = tape.value(x0);
                let ax = tape.value(lp.a).matmul(x).unwrap();
                for (axi, bi) in ax.as_slice().iter().zip(tape.value(lp.b).as_slice()) {
                    assert!(axi < bi, "not strictly interior");
                }
            }
            PhaseOne::Infeasible => panic!("box has an interior"),
        }
    }

    #[test]
    fn phase_one_detects_empty_region() {
        // x <= 0 and -x <= -1 is empty.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), false).unwrap();
        let b = tape.leaf(Tensor::vector(vec![0.0, -1.0]), false).unwrap();
        match phase_one(a, b, &IpmSettings::default(), &mut tape).unwrap() {
            PhaseOne::Infeasible => {}
            PhaseOne::Feasible(_) => panic!("region is empty"),
        }
    }

    #[test]
    fn unbounded_signalled() {
        // minimize -x subject to -x <= 0: unbounded above.
        let mut tape = Tape::new();
        let lp = LinearProgram {
            c: tape.leaf(Tensor::vector(vec![-1.0]), false).unwrap(),
            a: tape.leaf(Tensor::from_rows(&[vec![-1.0]]).unwrap(), false).unwrap(),
            b: tape.leaf(Tensor::vector(vec![0.0]), false).unwrap(),
        };
        let res = solve_lp(&lp, &IpmSettings::default(), &mut tape).unwrap();
        assert_eq!(res.status, SolveStatus::Unbounded);
    }

    #[test]
    fn analytic_center_of_box() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![0.0, 0.0]);
        let x0 = tape.leaf(Tensor::vector(vec![0.3, 0.8]), false).unwrap();
        let out = newton_centering(x0, 1.0, &lp, &IpmSettings::default(), &mut tape).unwrap();
        assert!(out.converged);
        let x = tape.value(out.x);
        assert_abs_diff_eq!(x.as_slice()[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(x.as_slice()[1], 0.5, epsilon = 1e-8);
        // Monotone decrease of the barrier along accepted steps.
        for pair in out.f_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn freeze_phase_one_matches_default_solution() {
        let solve = |freeze: bool| {
            let mut tape = Tape::new();
            let lp = unit_box(&mut tape, vec![1.0, -0.5]);
            let settings = IpmSettings { freeze_phase_one: freeze, ..IpmSettings::default() };
            let res = solve_lp(&lp, &settings, &mut tape).unwrap();
            tape.value(res.x.unwrap()).clone()
        };
        let a = solve(false);
        let b = solve(true);
        assert_abs_diff_eq!(a.as_slice()[0], b.as_slice()[0], epsilon = 1e-6);
        assert_abs_diff_eq!(a.as_slice()[1], b.as_slice()[1], epsilon = 1e-6);
    }

    #[test]
    fn trace_matches_solve_and_descends() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![1.0, 1.0]);
        let settings = IpmSettings::default();
        let trace = central_path_trace(&lp, &settings, &mut tape).unwrap();
        assert_eq!(trace.result.status, SolveStatus::Optimal);
        assert_eq!(trace.centers.len(), trace.result.stages);
        assert_eq!(trace.centers.last().copied().unwrap(), trace.result.x.unwrap());
        for pair in trace.objectives.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "objective rose: {pair:?}");
        }
        // Stage count formula within +-1.
        let m = 4.0;
        let expected = ((m / (settings.eps * settings.t0)).ln() / settings.mu.ln()).ceil() as isize;
        let got = trace.result.stages as isize;
        assert!((got - expected).abs() <= 1, "stages {got} vs formula {expected}");
    }

    #[test]
    fn strict_feasibility_throughout() {
        let mut tape = Tape::new();
        let lp = unit_box(&mut tape, vec![1.0, -0.5]);
        let res = solve_lp(&lp, &IpmSettings::default(), &mut tape).unwrap();
        assert!(res.is_optimal());
        for viol in &res.infeasibility_trace {
            assert!(*viol < 0.0, "iterate infeasible by {viol}");
        }
    }

    #[test]
    fn gradient_through_solve_matches_finite_differences() {
        // d SE(x(c), x_tru) / dc through the unrolled solve, smooth mode.
        let x_tru = Tensor::vector(vec![0.9, 0.1]);
        let settings = IpmSettings::default().with_eps(0.1);
        let err = crate::tape::grad_check(
            |tape, c| {
                let a = Tensor::from_rows(&[
                    vec![1.0, 0.0],
                    vec![0.0, 1.0],
                    vec![-1.0, 0.0],
                    vec![0.0, -1.0],
                ])
                .unwrap();
                let lp = LinearProgram {
                    c,
                    a: tape.leaf(a, false)?,
                    b: tape.leaf(Tensor::vector(vec![1.0, 1.0, 0.0, 0.0]), false)?,
                };
                let res = solve_lp(&lp, &settings, tape)?;
                let x = res.x.ok_or(Error::InvalidArgument("solve failed".into()))?;
                let tru = tape.leaf(x_tru.clone(), false)?;
                let diff = tape.sub(x, tru)?;
                tape.l2_norm_sq(diff)
            },
            &Tensor::vector(vec![1.0, 0.35]),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
