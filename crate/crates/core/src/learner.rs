//! Gradient descent over model weights through the unrolled solver.
//!
//! Each learning step re-solves the forward problem per observation on a
//! fresh tape, backpropagates the loss to the weights, and applies
//! w <- w - beta (alpha o dw/N) with beta from a safe-step line search:
//! beta starts at 1 and halves whenever a trial solve signals
//! Infeasible/Unbounded/SingularSystem or the mean loss fails to improve,
//! terminating the run early once beta drops below 1e-8.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::Task;
use crate::ipm::{solve_lp, IpmSettings, SolveStatus};
use crate::losses::{adg, se, LossKind};
use crate::models::{gradient_wrt_w, Observation, ParametricModel};
use crate::tape::Tape;
use crate::tensor::Tensor;

const ZERO_LOSS: f64 = 1e-12;
const GRAD_CLIP: f64 = 1e6;

/// Solver-precision schedule over learning steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpsSchedule {
    Constant(f64),
    /// Geometric interpolation from `from` at step 0 to `to` at the last
    /// step.
    ExpDecay { from: f64, to: f64 },
}

impl std::fmt::Display for EpsSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpsSchedule::Constant(v) => write!(f, "constant({v:e})"),
            EpsSchedule::ExpDecay { from, to } => write!(f, "decay({from:e}->{to:e})"),
        }
    }
}

impl EpsSchedule {
    pub fn decay_default() -> Self {
        EpsSchedule::ExpDecay { from: 0.1, to: 1e-5 }
    }

    pub fn eps_at(&self, step: usize, max_steps: usize) -> f64 {
        match *self {
            EpsSchedule::Constant(v) => v,
            EpsSchedule::ExpDecay { from, to } => {
                let span = (max_steps.saturating_sub(1)).max(1) as f64;
                from * (to / from).powf(step as f64 / span)
            }
        }
    }

    /// Precision used for reported (initial/final) losses.
    pub fn final_eps(&self, max_steps: usize) -> f64 {
        self.eps_at(max_steps.saturating_sub(1), max_steps)
    }
}

#[derive(Debug, Clone)]
pub struct LearnSettings {
    pub max_steps: usize,
    /// Componentwise learning rates, one entry per weight.
    pub alpha: Tensor,
    pub eps_schedule: EpsSchedule,
    pub loss: LossKind,
    pub beta_min: f64,
    pub ipm: IpmSettings,
    /// Backpropagate only through the trailing k Newton steps of each
    /// solve (the model-instantiation prefix stays differentiable).
    pub truncate_steps: Option<usize>,
}

impl LearnSettings {
    pub fn new(alpha: Tensor, loss: LossKind) -> Self {
        LearnSettings {
            max_steps: 200,
            alpha,
            eps_schedule: default_schedule(loss),
            loss,
            beta_min: 1e-8,
            ipm: IpmSettings::default(),
            truncate_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.as_slice().iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidArgument("alpha must be non-negative".into()));
        }
        if self.beta_min <= 0.0 {
            return Err(Error::InvalidArgument("beta_min must be positive".into()));
        }
        self.ipm.validate()
    }
}

/// ADG runs at fixed tight precision; SE/MSE default to the decay schedule.
pub fn default_schedule(loss: LossKind) -> EpsSchedule {
    match loss {
        LossKind::Adg => EpsSchedule::Constant(1e-5),
        LossKind::Se | LossKind::Mse => EpsSchedule::decay_default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxSteps,
    EarlyBetaUnderflow,
    ZeroLoss,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::MaxSteps => write!(f, "max-steps"),
            Termination::EarlyBetaUnderflow => write!(f, "early-beta-underflow"),
            Termination::ZeroLoss => write!(f, "zero-loss"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean loss over observations at this step's weights (and precision).
    pub loss: f64,
    /// Accepted safe step size (0 on the terminating record).
    pub beta: f64,
    /// |dw|_2 of the accumulated gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub w_lrn: Tensor,
    pub trajectory: Vec<StepRecord>,
    pub termination: Termination,
    /// Mean loss at the initial weights, evaluated at the schedule's final
    /// precision.
    pub initial_loss: f64,
    /// Mean loss at w_lrn at the schedule's final precision.
    pub final_train_loss: f64,
    pub steps_used: usize,
    pub warnings: Vec<String>,
}

/// Outcome of the safe-step search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchOutcome {
    Step(f64),
    EarlyTermination,
}

/// Halve beta from 1 until a trial both solves everywhere and strictly
/// improves the mean loss; give up below `beta_min`. `trial_loss` returns
/// None when any forward solve at that beta signals a failure.
pub fn line_search(
    current_loss: f64,
    beta_min: f64,
    mut trial_loss: impl FnMut(f64) -> Result<Option<f64>>,
) -> Result<LineSearchOutcome> {
    let mut beta = 1.0;
    while beta >= beta_min {
        if let Some(loss) = trial_loss(beta)? {
            if loss < current_loss {
                return Ok(LineSearchOutcome::Step(beta));
            }
        }
        beta *= 0.5;
    }
    Ok(LineSearchOutcome::EarlyTermination)
}

/// Solve the model at each feature value and package the solutions as
/// observations (used to materialize held-out test targets from the true
/// weights).
pub fn solve_observations(
    model: &ParametricModel,
    us: &[f64],
    ipm: &IpmSettings,
) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(us.len());
    for &u in us {
        let mut tape = Tape::new();
        let inst = model.instantiate(u, &mut tape)?;
        let res = solve_lp(&inst.lp, ipm, &mut tape)?;
        match res.x {
            Some(x) if res.status == SolveStatus::Optimal => {
                out.push(Observation { u, x: tape.value(x).clone() });
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "forward solve failed at u = {u} while materializing observations"
                )))
            }
        }
    }
    Ok(out)
}

/// Mean loss over observations at the model's current weights, or None if
/// any forward solve fails.
pub fn evaluate_mean_loss(
    model: &ParametricModel,
    observations: &[Observation],
    loss: LossKind,
    ipm: &IpmSettings,
) -> Result<Option<f64>> {
    let mut total = 0.0;
    for obs in observations {
        match eval_observation(model, obs, loss, ipm, None, false)? {
            Some((l, _)) => total += l,
            None => return Ok(None),
        }
    }
    Ok(Some(total / observations.len() as f64))
}

/// One forward solve + loss (and optionally the weight gradient) for a
/// single observation on a fresh tape. None when the solve signals.
fn eval_observation(
    model: &ParametricModel,
    obs: &Observation,
    loss: LossKind,
    ipm: &IpmSettings,
    truncate_steps: Option<usize>,
    want_grad: bool,
) -> Result<Option<(f64, Option<Tensor>)>> {
    let mut tape = Tape::new();
    let inst = model.instantiate(obs.u, &mut tape)?;
    let res = match solve_lp(&inst.lp, ipm, &mut tape) {
        Ok(res) => res,
        Err(Error::SingularSystem) => return Ok(None),
        Err(e) => return Err(e),
    };
    let Some(x) = res.x else { return Ok(None) };
    if res.status != SolveStatus::Optimal {
        return Ok(None);
    }

    let loss_node = match loss {
        LossKind::Adg => adg(inst.lp.c, x, &obs.x, &mut tape)?,
        LossKind::Se | LossKind::Mse => se(x, &obs.x, &mut tape)?,
    };
    let loss_val = tape.value(loss_node).scalar_value();
    if !loss_val.is_finite() {
        return Ok(None);
    }

    let grad = if want_grad {
        if let Some(k) = truncate_steps {
            if res.step_marks.len() > k {
                let window_start = res.step_marks[res.step_marks.len() - k];
                tape.set_truncation_depth(Some(tape.len() - window_start));
                tape.set_truncation_floor(res.recorded_from);
            }
        }
        Some(gradient_wrt_w(inst.w, loss_node, &mut tape)?)
    } else {
        None
    };
    Ok(Some((loss_val, grad)))
}

/// Gradient descent with safe-step line search over the model weights.
pub fn learn(
    model: &ParametricModel,
    observations: &[Observation],
    settings: &LearnSettings,
) -> Result<LearnResult> {
    if observations.is_empty() {
        return Err(Error::EmptyBatch);
    }
    settings.validate()?;
    if settings.alpha.numel() != model.weight_len() {
        return Err(Error::InvalidArgument(format!(
            "alpha length {} does not match weight length {}",
            settings.alpha.numel(),
            model.weight_len()
        )));
    }

    let n = observations.len() as f64;
    let mut current = model.clone();
    let mut trajectory: Vec<StepRecord> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut termination = Termination::MaxSteps;
    let report_eps = settings.ipm.with_eps(settings.eps_schedule.final_eps(settings.max_steps));

    let initial_loss = evaluate_mean_loss(&current, observations, settings.loss, &report_eps)?
        .ok_or_else(|| {
            Error::BadInitialization("forward solve failed at the initial weights".into())
        })?;

    for step in 0..settings.max_steps {
        let eps = settings.eps_schedule.eps_at(step, settings.max_steps);
        let ipm = settings.ipm.with_eps(eps);

        // Forward + backprop per observation at the current weights.
        let mut mean_loss = 0.0;
        let mut grad_sum = Tensor::zeros(current.weight_len(), 1);
        for obs in observations {
            match eval_observation(&current, obs, settings.loss, &ipm, settings.truncate_steps, true)?
            {
                Some((l, Some(g))) => {
                    mean_loss += l / n;
                    grad_sum = grad_sum.zip(&g, |a, b| a + b)?;
                }
                _ => {
                    if step == 0 {
                        return Err(Error::BadInitialization(format!(
                            "forward solve failed at u = {}",
                            obs.u
                        )));
                    }
                    // Accepted weights stopped solving (precision schedule
                    // edge): end the run with what we have.
                    warnings.push(format!(
                        "forward solve failed at accepted weights on step {step}; stopping"
                    ));
                    termination = Termination::EarlyBetaUnderflow;
                    return finish(
                        current,
                        observations,
                        settings,
                        trajectory,
                        termination,
                        initial_loss,
                        warnings,
                        &report_eps,
                    );
                }
            }
        }

        if mean_loss <= ZERO_LOSS {
            trajectory.push(StepRecord { step, loss: mean_loss, beta: 0.0, grad_norm: 0.0 });
            termination = Termination::ZeroLoss;
            break;
        }

        // Descent direction alpha o (dw / N), hard-clipped against blowups
        // near degenerate geometry.
        let grad_norm = grad_sum.norm2();
        let mut clipped = false;
        let direction = settings
            .alpha
            .zip(&grad_sum, |a, g| {
                let v = a * g / n;
                if v.is_nan() {
                    clipped = true;
                    0.0
                } else if v.abs() > GRAD_CLIP {
                    clipped = true;
                    GRAD_CLIP.copysign(v)
                } else {
                    v
                }
            })?;
        if clipped {
            warnings.push(format!("gradient clipped at step {step}"));
        }

        let w_now = current.w.clone();
        let outcome = line_search(mean_loss, settings.beta_min, |beta| {
            let w_trial = w_now.zip(&direction, |w, g| w - beta * g)?;
            let trial_model = current.with_weights(w_trial)?;
            evaluate_mean_loss(&trial_model, observations, settings.loss, &ipm)
        })?;

        match outcome {
            LineSearchOutcome::EarlyTermination => {
                trajectory.push(StepRecord { step, loss: mean_loss, beta: 0.0, grad_norm });
                termination = Termination::EarlyBetaUnderflow;
                break;
            }
            LineSearchOutcome::Step(beta) => {
                let w_next = w_now.zip(&direction, |w, g| w - beta * g)?;
                current = current.with_weights(w_next)?;
                trajectory.push(StepRecord { step, loss: mean_loss, beta, grad_norm });
            }
        }
    }

    finish(current, observations, settings, trajectory, termination, initial_loss, warnings, &report_eps)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: ParametricModel,
    observations: &[Observation],
    settings: &LearnSettings,
    trajectory: Vec<StepRecord>,
    termination: Termination,
    initial_loss: f64,
    warnings: Vec<String>,
    report_eps: &IpmSettings,
) -> Result<LearnResult> {
    let final_train_loss =
        evaluate_mean_loss(&model, observations, settings.loss, report_eps)?.unwrap_or(f64::NAN);
    let steps_used = trajectory.len();
    Ok(LearnResult {
        w_lrn: model.w,
        trajectory,
        termination,
        initial_loss,
        final_train_loss,
        steps_used,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Randomized hyperparameter search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub t0: f64,
    pub mu: f64,
    pub alpha_c: f64,
    /// Learning rate for constraint-side parameters; None freezes them
    /// (learn-c).
    pub alpha_ab: Option<f64>,
}

/// The task's full hyperparameter grid.
pub fn hyper_grid(task: Task) -> Vec<HyperParams> {
    let t0s = [0.5, 1.0, 5.0, 10.0];
    let mus = [1.5, 2.0, 5.0, 10.0, 20.0];
    let mut grid = Vec::new();
    for &t0 in &t0s {
        for &mu in &mus {
            match task {
                Task::LearnC => {
                    for alpha_c in [1.0, 10.0, 100.0, 1000.0] {
                        grid.push(HyperParams { t0, mu, alpha_c, alpha_ab: None });
                    }
                }
                Task::LearnCab => {
                    for alpha_c in [0.1, 1.0, 10.0] {
                        for alpha_ab in [0.1, 1.0, 10.0] {
                            grid.push(HyperParams { t0, mu, alpha_c, alpha_ab: Some(alpha_ab) });
                        }
                    }
                }
                Task::Parametric | Task::TrigDemo => {
                    for alpha_ab in [1.0, 10.0] {
                        for factor in [0.01, 1.0, 100.0] {
                            grid.push(HyperParams {
                                t0,
                                mu,
                                alpha_c: factor * alpha_ab,
                                alpha_ab: Some(alpha_ab),
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

/// Sample `n` combinations, without replacement when the grid allows.
pub fn sample_hypers(task: Task, n: usize, rng: &mut ChaCha8Rng) -> Vec<HyperParams> {
    let mut grid = hyper_grid(task);
    if n >= grid.len() {
        return grid;
    }
    grid.shuffle(rng);
    grid.truncate(n);
    grid
}

/// Componentwise learning rates for a model under a task's split.
pub fn alpha_for(model: &ParametricModel, task: Task, hp: &HyperParams) -> Tensor {
    let ab = hp.alpha_ab.unwrap_or(0.0);
    match model.family {
        crate::models::ModelFamily::Direct => {
            let d = model.d;
            let len = model.weight_len();
            let mut alpha = vec![ab; len];
            alpha[..d].fill(hp.alpha_c);
            Tensor::vector(alpha)
        }
        crate::models::ModelFamily::LinearShift => {
            Tensor::vector(vec![hp.alpha_c, hp.alpha_c, ab, ab, ab, ab])
        }
        // Both demo weights drive cost and constraints at once; the
        // constraint-side rate applies.
        crate::models::ModelFamily::TrigDemo => {
            let rate = if task == Task::TrigDemo { ab.max(hp.alpha_c.min(ab)) } else { ab };
            Tensor::vector(vec![rate; model.weight_len()])
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperRun {
    pub hypers: HyperParams,
    pub result: std::result::Result<LearnResult, String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct HyperSearchOutcome {
    pub runs: Vec<HyperRun>,
    /// Index of the run with the lowest final training loss, if any
    /// succeeded.
    pub best: Option<usize>,
}

impl HyperSearchOutcome {
    pub fn best_run(&self) -> Option<(&HyperParams, &LearnResult)> {
        let idx = self.best?;
        match &self.runs[idx].result {
            Ok(res) => Some((&self.runs[idx].hypers, res)),
            Err(_) => None,
        }
    }
}

/// Run `n_combos` sampled hyperparameter combinations in parallel and keep
/// them all (the caller reports one row per combo).
pub fn hyper_search(
    model: &ParametricModel,
    observations: &[Observation],
    task: Task,
    base: &LearnSettings,
    n_combos: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HyperSearchOutcome> {
    let combos = sample_hypers(task, n_combos, rng);
    let runs: Vec<HyperRun> = combos
        .into_par_iter()
        .map(|hp| {
            let mut settings = base.clone();
            settings.alpha = alpha_for(model, task, &hp);
            settings.ipm.t0 = hp.t0;
            settings.ipm.mu = hp.mu;
            let start = std::time::Instant::now();
            let result = learn(model, observations, &settings).map_err(|e| e.to_string());
            HyperRun { hypers: hp, result, wall_ms: start.elapsed().as_millis() as u64 }
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, run)| {
            run.result.as_ref().ok().map(|res| (i, res.final_train_loss))
        })
        .filter(|(_, loss)| loss.is_finite())
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite losses"))
        .map(|(i, _)| i);

    Ok(HyperSearchOutcome { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{baseline_lp, instance_rng, make_learn_c, make_trig_demo};
    use approx::assert_abs_diff_eq;

    #[test]
    fn eps_schedule_endpoints() {
        let sched = EpsSchedule::decay_default();
        assert_abs_diff_eq!(sched.eps_at(0, 200), 0.1);
        assert_abs_diff_eq!(sched.eps_at(199, 200), 1e-5, epsilon = 1e-18);
        // Geometric midpoint at the middle step (odd span makes it exact).
        let sched101 = EpsSchedule::decay_default();
        assert_abs_diff_eq!(sched101.eps_at(50, 101), 1e-3, epsilon = 1e-12);
        assert_abs_diff_eq!(EpsSchedule::Constant(1e-5).eps_at(7, 200), 1e-5);
    }

    #[test]
    fn line_search_accepts_unit_step_on_descent() {
        let outcome = line_search(1.0, 1e-8, |beta| Ok(Some(1.0 - 0.5 * beta))).unwrap();
        assert_eq!(outcome, LineSearchOutcome::Step(1.0));
    }

    #[test]
    fn line_search_halves_past_failures() {
        // Solver failure at beta = 1, improvement at 0.5.
        let outcome = line_search(1.0, 1e-8, |beta| {
            if beta > 0.5 {
                Ok(None)
            } else {
                Ok(Some(0.9))
            }
        })
        .unwrap();
        assert_eq!(outcome, LineSearchOutcome::Step(0.5));
    }

    #[test]
    fn line_search_terminates_after_27_halvings() {
        let mut trials = 0;
        let outcome = line_search(1.0, 1e-8, |_| {
            trials += 1;
            Ok(Some(1.0)) // never strictly improves (g = 0 case)
        })
        .unwrap();
        assert_eq!(outcome, LineSearchOutcome::EarlyTermination);
        assert_eq!(trials, 27);
    }

    #[test]
    fn aligned_halving_gives_identical_updates() {
        // Doubling alpha and halving beta lands on bit-identical weights.
        let w = Tensor::vector(vec![0.3, -0.7]);
        let g = Tensor::vector(vec![0.1234567, -0.7654321]);
        let step = |alpha_scale: f64, beta: f64| {
            w.zip(&g, |wi, gi| wi - beta * (alpha_scale * gi)).unwrap()
        };
        assert_eq!(step(1.0, 0.5).as_slice(), step(2.0, 0.25).as_slice());
    }

    #[test]
    fn trig_demo_learns_true_weights() {
        let demo = make_trig_demo().unwrap();
        let par = demo.parametric.as_ref().unwrap();
        let model = ParametricModel::trig_demo(par.w_ini.clone()).unwrap();
        let mut settings =
            LearnSettings::new(Tensor::vector(vec![1.0, 1.0]), LossKind::Mse);
        settings.ipm.t0 = 1.0;
        settings.ipm.mu = 10.0;

        let res = learn(&model, &demo.targets, &settings).unwrap();
        assert!(
            (res.initial_loss - 0.45).abs() <= 0.02,
            "initial MSE {} vs 0.45 +- 0.02",
            res.initial_loss
        );
        assert!(res.final_train_loss < 1e-3, "final MSE {}", res.final_train_loss);
        assert!(
            (res.w_lrn.as_slice()[0] - 1.0).abs() < 0.05
                && (res.w_lrn.as_slice()[1] - 1.0).abs() < 0.05,
            "w_lrn {:?}",
            res.w_lrn.as_slice()
        );
    }

    #[test]
    fn zero_loss_start_terminates_immediately() {
        let demo = make_trig_demo().unwrap();
        let par = demo.parametric.as_ref().unwrap();
        // Start at the true weights: at the targets' own precision the
        // loss is already zero.
        let model = ParametricModel::trig_demo(par.w_tru.clone()).unwrap();
        let mut settings = LearnSettings::new(Tensor::vector(vec![1.0, 1.0]), LossKind::Mse);
        settings.eps_schedule = EpsSchedule::Constant(1e-5);
        let res = learn(&model, &demo.targets, &settings).unwrap();
        assert_eq!(res.termination, Termination::ZeroLoss);
        assert_eq!(res.w_lrn.as_slice(), par.w_tru.as_slice());
        assert_eq!(res.steps_used, 1);
    }

    #[test]
    fn learn_c_drives_adg_down() {
        let mut rng = instance_rng(31, 0);
        let baseline = baseline_lp(2, 4, &mut rng).unwrap();
        let inst = make_learn_c(baseline, &mut rng).unwrap();
        let model = ParametricModel::direct(
            &inst.c_ini,
            &inst.baseline.a,
            &inst.baseline.b,
        )
        .unwrap();
        let hp = HyperParams { t0: 1.0, mu: 5.0, alpha_c: 10.0, alpha_ab: None };
        let mut settings =
            LearnSettings::new(alpha_for(&model, Task::LearnC, &hp), LossKind::Adg);
        settings.ipm.t0 = hp.t0;
        settings.ipm.mu = hp.mu;

        let res = learn(&model, &inst.targets, &settings).unwrap();
        assert!(
            res.final_train_loss < 1e-4,
            "final ADG {} (initial {})",
            res.final_train_loss,
            res.initial_loss
        );
        // A and b stayed frozen under alpha_ab = None.
        let w = res.w_lrn.as_slice();
        let d = 2;
        assert_eq!(&w[d..], &model.w.as_slice()[d..]);
    }

    #[test]
    fn accepted_losses_monotone_under_constant_eps() {
        let mut rng = instance_rng(33, 1);
        let baseline = baseline_lp(2, 4, &mut rng).unwrap();
        let inst = make_learn_c(baseline, &mut rng).unwrap();
        let model =
            ParametricModel::direct(&inst.c_ini, &inst.baseline.a, &inst.baseline.b).unwrap();
        let hp = HyperParams { t0: 1.0, mu: 5.0, alpha_c: 10.0, alpha_ab: None };
        let mut settings =
            LearnSettings::new(alpha_for(&model, Task::LearnC, &hp), LossKind::Se);
        settings.eps_schedule = EpsSchedule::Constant(1e-5);
        settings.ipm.t0 = hp.t0;
        settings.ipm.mu = hp.mu;

        let res = learn(&model, &inst.targets, &settings).unwrap();
        for pair in res.trajectory.windows(2) {
            assert!(
                pair[1].loss <= pair[0].loss + 1e-15,
                "loss rose between accepted steps: {pair:?}"
            );
        }
    }

    #[test]
    fn learn_is_deterministic() {
        let demo = make_trig_demo().unwrap();
        let par = demo.parametric.as_ref().unwrap();
        let model = ParametricModel::trig_demo(par.w_ini.clone()).unwrap();
        let mut settings = LearnSettings::new(Tensor::vector(vec![1.0, 1.0]), LossKind::Mse);
        settings.max_steps = 20;
        let r1 = learn(&model, &demo.targets, &settings).unwrap();
        let r2 = learn(&model, &demo.targets, &settings).unwrap();
        assert_eq!(r1.w_lrn.as_slice(), r2.w_lrn.as_slice());
        assert_eq!(r1.steps_used, r2.steps_used);
    }

    #[test]
    fn hyper_grid_sizes() {
        assert_eq!(hyper_grid(Task::LearnC).len(), 80);
        assert_eq!(hyper_grid(Task::LearnCab).len(), 180);
        assert_eq!(hyper_grid(Task::Parametric).len(), 120);
    }

    #[test]
    fn sample_hypers_without_replacement() {
        let mut rng = instance_rng(1, 2);
        let sample = sample_hypers(Task::LearnC, 20, &mut rng);
        assert_eq!(sample.len(), 20);
        for (i, a) in sample.iter().enumerate() {
            for b in &sample[i + 1..] {
                assert_ne!(a, b, "duplicate combo in sample");
            }
        }
        // Grid smaller than n: everything enumerated.
        let all = sample_hypers(Task::LearnC, 200, &mut rng);
        assert_eq!(all.len(), 80);
    }

    #[test]
    fn hyper_search_best_is_minimum() {
        let demo = make_trig_demo().unwrap();
        let par = demo.parametric.as_ref().unwrap();
        let model = ParametricModel::trig_demo(par.w_ini.clone()).unwrap();
        let mut base = LearnSettings::new(Tensor::vector(vec![1.0, 1.0]), LossKind::Mse);
        base.max_steps = 30;
        let mut rng = instance_rng(9, 9);
        let outcome =
            hyper_search(&model, &demo.targets, Task::TrigDemo, &base, 4, &mut rng).unwrap();
        assert_eq!(outcome.runs.len(), 4);
        let (_, best) = outcome.best_run().expect("at least one run succeeds");
        for run in &outcome.runs {
            if let Ok(res) = &run.result {
                assert!(best.final_train_loss <= res.final_train_loss);
            }
        }
    }
}
