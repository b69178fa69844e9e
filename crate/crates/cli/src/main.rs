//! `invopt` — generate inverse-LP benchmark instances, learn their
//! parameters through the unrolled solver, and summarize results.
//!
//! Exit codes: 0 success, 2 invalid input, 3 forward-solve hard failure,
//! 4 early termination with no improvement.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use invopt::files::{
    append_result_rows, initial_model, read_instance, read_result_rows, true_model,
    write_instance, write_learned_model, InstanceFile, LearnedHyper, LearnedModelFile, ResultRow,
    RESULT_SCHEMA_VERSION,
};
use invopt::instances::{
    baseline_lp, instance_rng, make_learn_c, make_learn_cab, make_parametric, make_trig_demo,
    Task, TaskInstance,
};
use invopt::ipm::IpmSettings;
use invopt::learner::{
    alpha_for, default_schedule, evaluate_mean_loss, hyper_search, learn, solve_observations,
    EpsSchedule, HyperParams, LearnResult, LearnSettings, Termination,
};
use invopt::losses::LossKind;
use invopt::models::Observation;
use invopt::report::{format_table, summarize};
use invopt::surface::loss_surface;
use invopt::Error;

#[derive(Parser)]
#[command(name = "invopt", version, about = "Inverse linear optimization via unrolled solving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    LearnC,
    LearnCab,
    Parametric,
    TrigDemo,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::LearnC => Task::LearnC,
            TaskArg::LearnCab => Task::LearnCab,
            TaskArg::Parametric => Task::Parametric,
            TaskArg::TrigDemo => Task::TrigDemo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Adg,
    Se,
    Mse,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::Adg => LossKind::Adg,
            LossArg::Se => LossKind::Se,
            LossArg::Mse => LossKind::Mse,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum EpsDecayArg {
    /// Decay for SE/MSE, constant 1e-5 for ADG.
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum TargetArg {
    Feasible,
    Infeasible,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark instance files.
    Gen {
        #[arg(value_enum)]
        task: TaskArg,
        /// Variables (required except for trig-demo).
        #[arg(long)]
        d: Option<usize>,
        /// Constraints (required except for trig-demo).
        #[arg(long)]
        m: Option<usize>,
        /// Instances to generate (default 20; --full selects 50).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Full-scale batch of 50 instances per size.
        #[arg(long)]
        full: bool,
    },
    /// Learn instance parameters from its observed optima.
    Learn {
        instance: PathBuf,
        /// Training loss (default: mse for parametric tasks, se otherwise).
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Run N sampled hyperparameter combinations, reporting them all.
        #[arg(long)]
        hyper_search: Option<usize>,
        #[arg(long, value_enum, default_value = "auto")]
        eps_decay: EpsDecayArg,
        /// Backpropagate only through the last K Newton steps.
        #[arg(long)]
        truncate: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Which learn-cab target to fit.
        #[arg(long, value_enum, default_value = "feasible")]
        target: TargetArg,
        /// Results CSV (appended).
        #[arg(long, default_value = "results.csv")]
        results: PathBuf,
        /// Learned-model JSON (default: <instance>.learned.json).
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 10.0)]
        mu: f64,
        #[arg(long, default_value_t = 10.0)]
        alpha_c: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha_ab: f64,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
    },
    /// Summarize a results CSV (best combo per instance, quartiles per size).
    Report {
        results: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss grid over cost angles for a 2D instance.
    LossSurface {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "se")]
        loss: LossArg,
        /// Comma-separated solver precisions.
        #[arg(long, default_value = "0.1,0.01,1e-5")]
        eps: String,
        /// Angular grid resolution.
        #[arg(long, default_value_t = 120)]
        resolution: usize,
        /// Output CSV (default: <instance>.surface.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure { code: 2, message: msg.into() }
    }

    fn solve(msg: impl Into<String>) -> Self {
        Failure { code: 3, message: msg.into() }
    }
}

fn input_err(e: Error) -> Failure {
    Failure::input(e.to_string())
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("INVOPT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Gen { task, d, m, count, seed, out_dir, full } => {
            cmd_gen(task.into(), d, m, count, seed, &out_dir, full)
        }
        Command::Learn {
            instance,
            loss,
            hyper_search,
            eps_decay,
            truncate,
            seed,
            target,
            results,
            model_out,
            t0,
            mu,
            alpha_c,
            alpha_ab,
            max_steps,
        } => cmd_learn(LearnArgs {
            instance,
            loss,
            hyper_search,
            eps_decay,
            truncate,
            seed,
            target,
            results,
            model_out,
            t0,
            mu,
            alpha_c,
            alpha_ab,
            max_steps,
        }),
        Command::Report { results, out } => cmd_report(&results, out.as_deref()),
        Command::LossSurface { instance, loss, eps, resolution, out } => {
            cmd_loss_surface(&instance, loss.into(), &eps, resolution, out.as_deref())
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn cmd_gen(
    task: Task,
    d: Option<usize>,
    m: Option<usize>,
    count: Option<usize>,
    seed: u64,
    out_dir: &Path,
    full: bool,
) -> Result<ExitCode, Failure> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", out_dir.display())))?;

    if task == Task::TrigDemo {
        let inst = make_trig_demo().map_err(input_err)?;
        let path = out_dir.join("trig-demo.json");
        write_instance(&path, &InstanceFile::from_task(&inst)).map_err(input_err)?;
        println!("wrote {}", path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let d = d.ok_or_else(|| Failure::input("--d is required for this task"))?;
    let m = m.ok_or_else(|| Failure::input("--m is required for this task"))?;
    let count = count.unwrap_or(if full { 50 } else { 20 });

    let mut warnings = 0usize;
    for i in 0..count {
        let mut rng = instance_rng(seed, i as u64);
        let mut baseline = baseline_lp(d, m, &mut rng).map_err(input_err)?;
        baseline.seed = seed;
        let inst = match task {
            Task::LearnC => make_learn_c(baseline, &mut rng),
            Task::LearnCab => make_learn_cab(baseline, &mut rng),
            Task::Parametric => make_parametric(baseline, &mut rng),
            Task::TrigDemo => unreachable!("handled above"),
        }
        .map_err(input_err)?;
        if let Some(w) = &inst.baseline.warning {
            eprintln!("warning [{i}]: {w}");
            warnings += 1;
        }
        let path = out_dir.join(format!("{task}-d{d}-m{m}-s{seed}-{i:03}.json"));
        write_instance(&path, &InstanceFile::from_task(&inst)).map_err(input_err)?;
    }
    println!(
        "wrote {count} {task} instances (d={d}, m={m}, seed={seed}) to {}{}",
        out_dir.display(),
        if warnings > 0 { format!(" [{warnings} size warnings]") } else { String::new() }
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// learn
// ---------------------------------------------------------------------------

struct LearnArgs {
    instance: PathBuf,
    loss: Option<LossArg>,
    hyper_search: Option<usize>,
    eps_decay: EpsDecayArg,
    truncate: Option<usize>,
    seed: u64,
    target: TargetArg,
    results: PathBuf,
    model_out: Option<PathBuf>,
    t0: f64,
    mu: f64,
    alpha_c: f64,
    alpha_ab: f64,
    max_steps: usize,
}

fn cmd_learn(args: LearnArgs) -> Result<ExitCode, Failure> {
    let file = read_instance(&args.instance).map_err(input_err)?;
    let task_inst = file.to_task().map_err(input_err)?;
    let task = task_inst.task;
    let instance_id = args
        .instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());

    let loss: LossKind = args
        .loss
        .map(Into::into)
        .unwrap_or(match task {
            Task::Parametric | Task::TrigDemo => LossKind::Mse,
            _ => LossKind::Se,
        });
    let schedule = match args.eps_decay {
        EpsDecayArg::Auto => default_schedule(loss),
        EpsDecayArg::On => EpsSchedule::decay_default(),
        EpsDecayArg::Off => EpsSchedule::Constant(1e-5),
    };

    let (observations, target_label) = select_observations(&task_inst, args.target)?;
    let model = initial_model(&task_inst).map_err(input_err)?;

    // Held-out test targets, materialized from the stored true weights.
    let test_obs: Option<Vec<Observation>> = match (&task_inst.parametric, task) {
        (Some(p), Task::Parametric) if !p.u_test.is_empty() && p.w_tru.numel() > 0 => {
            let tru = true_model(&task_inst)
                .map_err(input_err)?
                .expect("parametric instance stores w_tru");
            Some(
                solve_observations(&tru, &p.u_test, &IpmSettings::default().with_eps(1e-5))
                    .map_err(|e| Failure::solve(e.to_string()))?,
            )
        }
        _ => None,
    };

    let mut base = LearnSettings::new(model.w.map(|_| 1.0), loss);
    base.max_steps = args.max_steps;
    base.eps_schedule = schedule;
    base.truncate_steps = args.truncate;

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut best: Option<(HyperParams, LearnResult)> = None;
    let mut hard_failures = 0usize;
    let total_runs;

    let record = |hp: HyperParams, res: &LearnResult, wall_ms: u64, rows: &mut Vec<ResultRow>| {
        let final_test_loss = test_obs.as_ref().and_then(|obs| {
            let lrn = model.with_weights(res.w_lrn.clone()).ok()?;
            evaluate_mean_loss(&lrn, obs, loss, &IpmSettings::default().with_eps(1e-5))
                .ok()
                .flatten()
        });
        rows.push(ResultRow {
            schema_version: RESULT_SCHEMA_VERSION,
            instance_id: instance_id.clone(),
            task,
            d: task_inst.baseline.d,
            m: task_inst.baseline.m,
            loss_kind: loss.to_string(),
            t0: hp.t0,
            mu: hp.mu,
            alpha_c: hp.alpha_c,
            alpha_ab: hp.alpha_ab,
            eps_schedule: schedule.to_string(),
            truncate: args.truncate,
            target: target_label.clone(),
            seed: args.seed,
            initial_loss: res.initial_loss,
            final_train_loss: res.final_train_loss,
            final_test_loss,
            steps_used: res.steps_used,
            termination: res.termination.to_string(),
            wall_ms,
        });
    };

    if let Some(n) = args.hyper_search {
        let mut rng = instance_rng(args.seed, 0);
        let outcome = hyper_search(&model, &observations, task, &base, n, &mut rng)
            .map_err(|e| Failure::input(e.to_string()))?;
        total_runs = outcome.runs.len();
        for run in &outcome.runs {
            match &run.result {
                Ok(res) => record(run.hypers, res, run.wall_ms, &mut rows),
                Err(msg) => {
                    hard_failures += 1;
                    eprintln!("combo {:?} failed: {msg}", run.hypers);
                }
            }
        }
        if let Some((hp, res)) = outcome.best_run() {
            best = Some((*hp, res.clone()));
        }
    } else {
        total_runs = 1;
        let hp = HyperParams {
            t0: args.t0,
            mu: args.mu,
            alpha_c: args.alpha_c,
            alpha_ab: match task {
                Task::LearnC => None,
                _ => Some(args.alpha_ab),
            },
        };
        let mut settings = base.clone();
        settings.alpha = alpha_for(&model, task, &hp);
        settings.ipm.t0 = hp.t0;
        settings.ipm.mu = hp.mu;
        let start = Instant::now();
        match learn(&model, &observations, &settings) {
            Ok(res) => {
                record(hp, &res, start.elapsed().as_millis() as u64, &mut rows);
                best = Some((hp, res));
            }
            Err(Error::BadInitialization(msg)) => return Err(Failure::solve(msg)),
            Err(e) => return Err(Failure::input(e.to_string())),
        }
    }

    if !rows.is_empty() {
        append_result_rows(&args.results, &rows)
            .map_err(|e| Failure::input(format!("cannot write results: {e}")))?;
    }

    let Some((hp, res)) = best else {
        if hard_failures == total_runs {
            return Err(Failure::solve("every hyperparameter combination failed to solve"));
        }
        return Err(Failure::input("no successful learning run"));
    };

    let model_out = args
        .model_out
        .unwrap_or_else(|| args.instance.with_extension("learned.json"));
    let best_test = rows
        .iter()
        .filter(|r| r.final_train_loss == res.final_train_loss)
        .find_map(|r| r.final_test_loss);
    write_learned_model(
        &model_out,
        &LearnedModelFile {
            schema_version: RESULT_SCHEMA_VERSION,
            instance_id: instance_id.clone(),
            task,
            loss_kind: loss.to_string(),
            hyper: LearnedHyper {
                t0: hp.t0,
                mu: hp.mu,
                alpha_c: hp.alpha_c,
                alpha_ab: hp.alpha_ab,
            },
            w_lrn: res.w_lrn.as_slice().to_vec(),
            initial_loss: res.initial_loss,
            final_train_loss: res.final_train_loss,
            final_test_loss: best_test,
            steps_used: res.steps_used,
            termination: res.termination.to_string(),
        },
    )
    .map_err(input_err)?;

    println!(
        "{instance_id}: {loss} {:.3e} -> {:.3e} in {} steps ({}){}",
        res.initial_loss,
        res.final_train_loss,
        res.steps_used,
        res.termination,
        best_test.map_or(String::new(), |t| format!(", test {t:.3e}")),
    );

    let improved = res.final_train_loss < res.initial_loss;
    if res.termination == Termination::EarlyBetaUnderflow && !improved {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn select_observations(
    inst: &TaskInstance,
    target: TargetArg,
) -> Result<(Vec<Observation>, Option<String>), Failure> {
    match inst.task {
        Task::LearnCab => {
            if inst.targets.len() < 2 {
                return Err(Failure::input(
                    "learn-cab instance must store [feasible, infeasible] targets",
                ));
            }
            let (idx, label) = match target {
                TargetArg::Feasible => (0, "feasible"),
                TargetArg::Infeasible => (1, "infeasible"),
            };
            Ok((vec![inst.targets[idx].clone()], Some(label.into())))
        }
        _ => {
            if inst.targets.is_empty() {
                return Err(Failure::input("instance has no targets"));
            }
            Ok((inst.targets.clone(), None))
        }
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(results: &Path, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let rows = read_result_rows(results).map_err(input_err)?;
    let summary = summarize(&rows);
    print!("{}", format_table(&summary));
    if let Some(path) = out {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
        for row in &summary {
            writer.serialize(row).map_err(|e| Failure::input(e.to_string()))?;
        }
        writer.flush().map_err(|e| Failure::input(e.to_string()))?;
        println!("summary written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// loss-surface
// ---------------------------------------------------------------------------

fn cmd_loss_surface(
    instance: &Path,
    loss: LossKind,
    eps: &str,
    resolution: usize,
    out: Option<&Path>,
) -> Result<ExitCode, Failure> {
    let file = read_instance(instance).map_err(input_err)?;
    let task_inst = file.to_task().map_err(input_err)?;
    let eps_list: Vec<f64> = eps
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::input(format!("bad --eps list: {e}")))?;

    let grid =
        loss_surface(&task_inst, loss, &eps_list, resolution).map_err(input_err)?;

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| instance.with_extension("surface.csv"));
    let mut writer = csv::Writer::from_path(&out_path)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", out_path.display())))?;
    for point in &grid {
        writer.serialize(point).map_err(|e| Failure::input(e.to_string()))?;
    }
    writer.flush().map_err(|e| Failure::input(e.to_string()))?;

    println!(
        "wrote {} x {} = {} grid points to {}",
        resolution,
        eps_list.len(),
        grid.len(),
        out_path.display()
    );
    Ok(ExitCode::SUCCESS)
}
