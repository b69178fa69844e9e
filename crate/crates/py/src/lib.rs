//! Python bindings: the autodiff tape, the differentiable LP solver, and
//! the instance/learning pipeline, driven in-process.
//!
//! Build with `cargo build -p invopt-py --release`, then import the
//! produced cdylib as `invopt_py` (see python/smoke_test.py).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use invopt::files::{initial_model, true_model, InstanceFile};
use invopt::instances::{
    baseline_lp, instance_rng, make_learn_c, make_learn_cab, make_parametric, make_trig_demo,
    Task,
};
use invopt::ipm::{self, IpmSettings, LinearProgram, SolveStatus};
use invopt::learner::{
    alpha_for, default_schedule, evaluate_mean_loss, hyper_search, learn, solve_observations,
    EpsSchedule, HyperParams, LearnSettings,
};
use invopt::losses::{self, LossKind};
use invopt::tape::{Tape, VarId};
use invopt::tensor::Tensor;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn invalid<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_tensor(data: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&data).map_err(invalid)
}

fn vec_tensor(data: Vec<f64>) -> Tensor {
    Tensor::vector(data)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.get(i, j)).collect()).collect()
}

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::SingularSystem => "singular-system",
    }
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    name.parse().map_err(invalid)
}

fn parse_task(name: &str) -> PyResult<Task> {
    match name {
        "learn-c" => Ok(Task::LearnC),
        "learn-cab" => Ok(Task::LearnCab),
        "parametric" => Ok(Task::Parametric),
        "trig-demo" => Ok(Task::TrigDemo),
        other => Err(invalid(format!("unknown task '{other}'"))),
    }
}

/// Reverse-mode autodiff tape. Handles returned by the recording methods
/// are plain integers indexing tape nodes.
#[pyclass(name = "Tape")]
struct PyTape {
    tape: Tape,
    vars: Vec<VarId>,
}

impl PyTape {
    fn var(&self, handle: usize) -> PyResult<VarId> {
        self.vars
            .get(handle)
            .copied()
            .ok_or_else(|| invalid(format!("unknown tape handle {handle}")))
    }

    fn push(&mut self, v: VarId) -> usize {
        self.vars.push(v);
        self.vars.len() - 1
    }

    fn unary(&mut self, h: usize, f: impl FnOnce(&mut Tape, VarId) -> invopt::Result<VarId>) -> PyResult<usize> {
        let v = self.var(h)?;
        let out = f(&mut self.tape, v).map_err(err)?;
        Ok(self.push(out))
    }

    fn binary(
        &mut self,
        ha: usize,
        hb: usize,
        f: impl FnOnce(&mut Tape, VarId, VarId) -> invopt::Result<VarId>,
    ) -> PyResult<usize> {
        let a = self.var(ha)?;
        let b = self.var(hb)?;
        let out = f(&mut self.tape, a, b).map_err(err)?;
        Ok(self.push(out))
    }
}

#[pymethods]
impl PyTape {
    #[new]
    fn new() -> Self {
        PyTape { tape: Tape::new(), vars: Vec::new() }
    }

    /// Record a column-vector leaf.
    #[pyo3(signature = (data, requires_grad = false))]
    fn leaf(&mut self, data: Vec<f64>, requires_grad: bool) -> PyResult<usize> {
        let v = self.tape.leaf(vec_tensor(data), requires_grad).map_err(invalid)?;
        Ok(self.push(v))
    }

    /// Record a matrix leaf from nested rows.
    #[pyo3(signature = (data, requires_grad = false))]
    fn leaf_matrix(&mut self, data: Vec<Vec<f64>>, requires_grad: bool) -> PyResult<usize> {
        let v = self.tape.leaf(to_tensor(data)?, requires_grad).map_err(invalid)?;
        Ok(self.push(v))
    }

    fn value(&self, handle: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(tensor_rows(self.tape.value(self.var(handle)?)))
    }

    fn add(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.add(x, y))
    }

    fn sub(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.sub(x, y))
    }

    fn mul(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.mul(x, y))
    }

    fn div(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.div(x, y))
    }

    fn neg(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.neg(x))
    }

    fn dot(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.dot(x, y))
    }

    fn matvec(&mut self, m: usize, v: usize) -> PyResult<usize> {
        self.binary(m, v, |t, x, y| t.matvec(x, y))
    }

    fn matmul(&mut self, a: usize, b: usize) -> PyResult<usize> {
        self.binary(a, b, |t, x, y| t.matmul(x, y))
    }

    fn sum(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.sum(x))
    }

    fn log(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.log(x))
    }

    fn exp(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.exp(x))
    }

    fn cos(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.cos(x))
    }

    fn sin(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.sin(x))
    }

    fn abs(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.abs(x))
    }

    fn square(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.square(x))
    }

    fn l2_norm_sq(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.l2_norm_sq(x))
    }

    fn transpose(&mut self, a: usize) -> PyResult<usize> {
        self.unary(a, |t, x| t.transpose(x))
    }

    fn linear_solve(&mut self, m: usize, r: usize) -> PyResult<usize> {
        self.binary(m, r, |t, x, y| t.linear_solve(x, y))
    }

    fn concat(&mut self, parts: Vec<usize>) -> PyResult<usize> {
        let vars: Vec<VarId> =
            parts.iter().map(|&h| self.var(h)).collect::<PyResult<_>>()?;
        let out = self.tape.concat(&vars).map_err(err)?;
        Ok(self.push(out))
    }

    /// Gradients of a scalar loss for every requires_grad leaf, keyed by
    /// handle.
    fn backward<'py>(&mut self, py: Python<'py>, loss: usize) -> PyResult<Bound<'py, PyDict>> {
        let loss_var = self.var(loss)?;
        let grads = self.tape.backward(loss_var).map_err(err)?;
        let out = PyDict::new(py);
        for (handle, var) in self.vars.iter().enumerate() {
            if let Some(g) = grads.get(*var) {
                out.set_item(handle, tensor_rows(g))?;
            }
        }
        Ok(out)
    }

    /// Backpropagate only through the trailing `depth` nodes.
    #[pyo3(signature = (depth = None))]
    fn set_truncation_depth(&mut self, depth: Option<usize>) {
        self.tape.set_truncation_depth(depth);
    }

    /// Solve min c'x st Ax <= b on this tape; returns a dict with the
    /// solution handle so losses can be recorded downstream.
    #[pyo3(signature = (c, a, b, eps = 1e-5, t0 = 1.0, mu = 10.0))]
    fn solve_lp<'py>(
        &mut self,
        py: Python<'py>,
        c: usize,
        a: usize,
        b: usize,
        eps: f64,
        t0: f64,
        mu: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let lp = LinearProgram { c: self.var(c)?, a: self.var(a)?, b: self.var(b)? };
        let settings = IpmSettings { t0, mu, eps, ..IpmSettings::default() };
        let res = ipm::solve_lp(&lp, &settings, &mut self.tape).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("status", status_str(res.status))?;
        out.set_item("stages", res.stages)?;
        out.set_item("newton_steps", res.newton_steps)?;
        match res.x {
            Some(x) => {
                let flat: Vec<f64> = self.tape.value(x).as_slice().to_vec();
                out.set_item("x", flat)?;
                out.set_item("x_handle", self.push(x))?;
            }
            None => {
                out.set_item("x", py.None())?;
                out.set_item("x_handle", py.None())?;
            }
        }
        Ok(out)
    }

    fn __len__(&self) -> usize {
        self.tape.len()
    }
}

/// Solve one LP given as plain lists; returns solution and status.
#[pyfunction]
#[pyo3(signature = (c, a, b, eps = 1e-5, t0 = 1.0, mu = 10.0))]
fn solve_lp(
    py: Python<'_>,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    eps: f64,
    t0: f64,
    mu: f64,
) -> PyResult<Py<PyDict>> {
    let mut tape = Tape::new();
    let lp = LinearProgram {
        c: tape.leaf(vec_tensor(c), false).map_err(invalid)?,
        a: tape.leaf(to_tensor(a)?, false).map_err(invalid)?,
        b: tape.leaf(vec_tensor(b), false).map_err(invalid)?,
    };
    let settings = IpmSettings { t0, mu, eps, ..IpmSettings::default() };
    let res = ipm::solve_lp(&lp, &settings, &mut tape).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("status", status_str(res.status))?;
    out.set_item("stages", res.stages)?;
    out.set_item("newton_steps", res.newton_steps)?;
    out.set_item("objective", res.objective(&tape, &lp))?;
    out.set_item("x", res.x.map(|x| tape.value(x).as_slice().to_vec()))?;
    Ok(out.into())
}

/// Loss of the solver output against a target, with gradients with respect
/// to c, A and b through the unrolled solve.
#[pyfunction]
#[pyo3(signature = (c, a, b, x_tru, loss = "se", eps = 0.1))]
fn solve_lp_grad(
    py: Python<'_>,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    x_tru: Vec<f64>,
    loss: &str,
    eps: f64,
) -> PyResult<Py<PyDict>> {
    let kind = parse_loss(loss)?;
    let mut tape = Tape::new();
    let lp = LinearProgram {
        c: tape.leaf(vec_tensor(c), true).map_err(invalid)?,
        a: tape.leaf(to_tensor(a)?, true).map_err(invalid)?,
        b: tape.leaf(vec_tensor(b), true).map_err(invalid)?,
    };
    let settings = IpmSettings::default().with_eps(eps);
    let res = ipm::solve_lp(&lp, &settings, &mut tape).map_err(err)?;
    let x = res
        .x
        .ok_or_else(|| err(format!("solve failed: {}", status_str(res.status))))?;
    let target = vec_tensor(x_tru);
    let loss_node = match kind {
        LossKind::Adg => losses::adg(lp.c, x, &target, &mut tape).map_err(err)?,
        LossKind::Se | LossKind::Mse => losses::se(x, &target, &mut tape).map_err(err)?,
    };
    let loss_val = tape.value(loss_node).scalar_value();
    let grads = tape.backward(loss_node).map_err(err)?;

    let out = PyDict::new(py);
    out.set_item("x", tape.value(x).as_slice().to_vec())?;
    out.set_item("loss", loss_val)?;
    out.set_item("grad_c", grads.get(lp.c).map(|g| g.as_slice().to_vec()))?;
    out.set_item("grad_a", grads.get(lp.a).map(tensor_rows))?;
    out.set_item("grad_b", grads.get(lp.b).map(|g| g.as_slice().to_vec()))?;
    Ok(out.into())
}

/// Max relative error of the autodiff gradient d loss / d c against
/// central finite differences through the full unrolled solve.
#[pyfunction]
#[pyo3(signature = (c, a, b, x_tru, eps = 0.1, h = 1e-6))]
fn check_gradient_through_solve(
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    x_tru: Vec<f64>,
    eps: f64,
    h: f64,
) -> PyResult<f64> {
    let a_t = to_tensor(a)?;
    let b_t = vec_tensor(b);
    let target = vec_tensor(x_tru);
    let settings = IpmSettings::default().with_eps(eps);
    invopt::grad_check(
        move |tape, c_var| {
            let lp = LinearProgram {
                c: c_var,
                a: tape.leaf(a_t.clone(), false)?,
                b: tape.leaf(b_t.clone(), false)?,
            };
            let res = ipm::solve_lp(&lp, &settings, tape)?;
            let x = res.x.ok_or(invopt::Error::SingularSystem)?;
            losses::se(x, &target, tape)
        },
        &vec_tensor(c),
        h,
    )
    .map_err(err)
}

/// Generate one instance as its JSON document.
#[pyfunction]
#[pyo3(signature = (task, d = 2, m = 4, seed = 0, index = 0))]
fn gen_instance(task: &str, d: usize, m: usize, seed: u64, index: u64) -> PyResult<String> {
    let task = parse_task(task)?;
    let inst = if task == Task::TrigDemo {
        make_trig_demo().map_err(err)?
    } else {
        let mut rng = instance_rng(seed, index);
        let mut baseline = baseline_lp(d, m, &mut rng).map_err(invalid)?;
        baseline.seed = seed;
        match task {
            Task::LearnC => make_learn_c(baseline, &mut rng).map_err(err)?,
            Task::LearnCab => make_learn_cab(baseline, &mut rng).map_err(err)?,
            Task::Parametric => make_parametric(baseline, &mut rng).map_err(err)?,
            Task::TrigDemo => unreachable!(),
        }
    };
    serde_json::to_string_pretty(&InstanceFile::from_task(&inst)).map_err(err)
}

/// Run the learner on an instance JSON document; returns a result dict.
#[pyfunction]
#[pyo3(signature = (instance_json, loss = None, hyper_combos = None, seed = 0,
                    max_steps = 200, target = "feasible", truncate = None))]
#[allow(clippy::too_many_arguments)]
fn learn_instance(
    py: Python<'_>,
    instance_json: &str,
    loss: Option<&str>,
    hyper_combos: Option<usize>,
    seed: u64,
    max_steps: usize,
    target: &str,
    truncate: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let file: InstanceFile = serde_json::from_str(instance_json).map_err(invalid)?;
    let inst = file.to_task().map_err(invalid)?;
    let kind = match loss {
        Some(name) => parse_loss(name)?,
        None => match inst.task {
            Task::Parametric | Task::TrigDemo => LossKind::Mse,
            _ => LossKind::Se,
        },
    };
    let observations = match inst.task {
        Task::LearnCab => {
            let idx = match target {
                "feasible" => 0,
                "infeasible" => 1,
                other => return Err(invalid(format!("unknown target '{other}'"))),
            };
            vec![inst
                .targets
                .get(idx)
                .ok_or_else(|| invalid("learn-cab instance lacks targets"))?
                .clone()]
        }
        _ => inst.targets.clone(),
    };
    let model = initial_model(&inst).map_err(invalid)?;

    let mut base = LearnSettings::new(model.w.map(|_| 1.0), kind);
    base.max_steps = max_steps;
    base.eps_schedule = default_schedule(kind);
    base.truncate_steps = truncate;

    let (hypers, result) = match hyper_combos {
        Some(n) => {
            let mut rng = instance_rng(seed, 0);
            let outcome =
                hyper_search(&model, &observations, inst.task, &base, n, &mut rng).map_err(err)?;
            let (hp, res) =
                outcome.best_run().ok_or_else(|| err("no hyper combination succeeded"))?;
            (*hp, res.clone())
        }
        None => {
            let hp = HyperParams {
                t0: 1.0,
                mu: 10.0,
                alpha_c: 10.0,
                alpha_ab: if inst.task == Task::LearnC { None } else { Some(1.0) },
            };
            let mut settings = base.clone();
            settings.alpha = alpha_for(&model, inst.task, &hp);
            settings.ipm.t0 = hp.t0;
            settings.ipm.mu = hp.mu;
            (hp, learn(&model, &observations, &settings).map_err(err)?)
        }
    };

    // Held-out error for parametric instances.
    let test_loss = match (&inst.parametric, inst.task) {
        (Some(p), Task::Parametric) if !p.u_test.is_empty() && p.w_tru.numel() > 0 => {
            let tru = true_model(&inst).map_err(err)?.expect("w_tru present");
            let obs =
                solve_observations(&tru, &p.u_test, &IpmSettings::default().with_eps(1e-5))
                    .map_err(err)?;
            let lrn = model.with_weights(result.w_lrn.clone()).map_err(err)?;
            evaluate_mean_loss(&lrn, &obs, kind, &IpmSettings::default().with_eps(1e-5))
                .map_err(err)?
        }
        _ => None,
    };

    let out = PyDict::new(py);
    out.set_item("w_lrn", result.w_lrn.as_slice().to_vec())?;
    out.set_item("initial_loss", result.initial_loss)?;
    out.set_item("final_train_loss", result.final_train_loss)?;
    out.set_item("final_test_loss", test_loss)?;
    out.set_item("steps_used", result.steps_used)?;
    out.set_item("termination", result.termination.to_string())?;
    out.set_item("t0", hypers.t0)?;
    out.set_item("mu", hypers.mu)?;
    out.set_item("alpha_c", hypers.alpha_c)?;
    out.set_item("alpha_ab", hypers.alpha_ab)?;
    Ok(out.into())
}

/// The bundled trigonometric demo instance as JSON.
#[pyfunction]
fn trig_demo() -> PyResult<String> {
    let inst = make_trig_demo().map_err(err)?;
    serde_json::to_string_pretty(&InstanceFile::from_task(&inst)).map_err(err)
}

/// Elementwise-absolute duality gap c' |x_tru - x_lrn|.
#[pyfunction]
fn adg_value(c: Vec<f64>, x_lrn: Vec<f64>, x_tru: Vec<f64>) -> PyResult<f64> {
    let mut tape = Tape::new();
    let c = tape.leaf(vec_tensor(c), false).map_err(invalid)?;
    let x = tape.leaf(vec_tensor(x_lrn), false).map_err(invalid)?;
    let node = losses::adg(c, x, &vec_tensor(x_tru), &mut tape).map_err(invalid)?;
    Ok(tape.value(node).scalar_value())
}

/// Squared error |x_tru - x_lrn|^2.
#[pyfunction]
fn se_value(x_lrn: Vec<f64>, x_tru: Vec<f64>) -> PyResult<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(vec_tensor(x_lrn), false).map_err(invalid)?;
    let node = losses::se(x, &vec_tensor(x_tru), &mut tape).map_err(invalid)?;
    Ok(tape.value(node).scalar_value())
}

/// The eps-decay schedule value at a step.
#[pyfunction]
#[pyo3(signature = (step, max_steps = 200))]
fn eps_decay_at(step: usize, max_steps: usize) -> f64 {
    EpsSchedule::decay_default().eps_at(step, max_steps)
}

#[pymodule]
fn invopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTape>()?;
    m.add_function(wrap_pyfunction!(solve_lp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lp_grad, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradient_through_solve, m)?)?;
    m.add_function(wrap_pyfunction!(gen_instance, m)?)?;
    m.add_function(wrap_pyfunction!(learn_instance, m)?)?;
    m.add_function(wrap_pyfunction!(trig_demo, m)?)?;
    m.add_function(wrap_pyfunction!(adg_value, m)?)?;
    m.add_function(wrap_pyfunction!(se_value, m)?)?;
    m.add_function(wrap_pyfunction!(eps_decay_at, m)?)?;
    Ok(())
}
