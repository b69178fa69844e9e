//! Experimental instance generation: baseline polytopes as convex hulls of
//! gaussian point clouds, plus targets for the three learning tasks.
//!
//! Facet enumeration is brute force over d-subsets of the sample: every
//! subset spanning a hyperplane with all points on one side contributes a
//! facet. In 2D the sample is first reduced to its hull candidates
//! (monotone chain) because hitting facet counts like 16 takes tens of
//! thousands of gaussian points; the emitted facet set is unchanged.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{solve_lp, IpmSettings, SolveStatus};
use crate::models::{Observation, ParametricModel};
use crate::tape::Tape;
use crate::tensor::Tensor;

const FACET_SIDE_TOL: f64 = 1e-9;
const FACET_DEDUP_TOL: f64 = 1e-8;
const VERTEX_ON_FACET_TOL: f64 = 1e-9;
const MAX_SIZE_ATTEMPTS: usize = 50;

// ---------------------------------------------------------------------------
// Baseline polytopes
// ---------------------------------------------------------------------------

/// A bounded polytope in half-space form, with its vertex list.
#[derive(Debug, Clone)]
pub struct BaselineInstance {
    pub d: usize,
    /// Achieved facet count.
    pub m: usize,
    pub m_requested: usize,
    /// Facets with unit outward normals.
    pub a: Tensor,
    pub b: Tensor,
    pub vertices: Vec<Vec<f64>>,
    pub seed: u64,
    /// Set when the point-count search settled for a nearby facet count.
    pub warning: Option<String>,
}

/// Facets and vertices of the convex hull of `points`.
///
/// Every d-subset spanning a hyperplane a'x = beta with all points on one
/// side (tolerance 1e-9) emits a unit-normal facet, deduplicated at 1e-8;
/// vertices are the points lying on at least d facets.
pub fn hull_facets(points: &[Vec<f64>]) -> Result<(Tensor, Tensor, Vec<Vec<f64>>)> {
    let k = points.len();
    let d = points.first().map_or(0, |p| p.len());
    if d < 1 || k < d + 1 {
        return Err(Error::InvalidArgument(format!(
            "hull needs at least d+1 = {} points, got {k}",
            d + 1
        )));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidArgument("ragged point list".into()));
    }

    // Candidate subsets come from hull candidates only; the side check
    // still runs against every point, so the facet set is identical to the
    // full enumeration.
    let candidates: Vec<usize> = if d == 2 {
        monotone_chain_indices(points)
    } else {
        (0..k).collect()
    };

    let mut facets: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut subset = vec![0usize; d];
    enumerate_subsets(&candidates, d, &mut subset, 0, 0, &mut |chosen| {
        if let Some((normal, offset)) = hyperplane_through(points, chosen) {
            for (a, beta) in [(normal.clone(), offset), (negate(&normal), -offset)] {
                if points
                    .iter()
                    .all(|p| dot(&a, p) <= beta + FACET_SIDE_TOL)
                {
                    push_dedup(&mut facets, a, beta);
                }
            }
        }
    });

    if facets.is_empty() {
        return Err(Error::DegenerateSample("no facets: points not full-dimensional".into()));
    }
    // Full-dimensionality check: a degenerate (flat) cloud yields a facet
    // pair with opposite normals at matching offsets.
    for (a, beta) in &facets {
        let neg = negate(a);
        if facets.iter().any(|(a2, b2)| {
            close(a2, &neg, FACET_DEDUP_TOL) && (b2 + beta).abs() <= FACET_DEDUP_TOL
        }) {
            return Err(Error::DegenerateSample("points are not full-dimensional".into()));
        }
    }

    let vertices: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&i| &points[i])
        .filter(|p| {
            facets
                .iter()
                .filter(|(a, beta)| (dot(a, p) - beta).abs() <= VERTEX_ON_FACET_TOL)
                .count()
                >= d
        })
        .cloned()
        .collect();

    let m = facets.len();
    let mut a_data = Vec::with_capacity(m * d);
    let mut b_data = Vec::with_capacity(m);
    for (a, beta) in facets {
        a_data.extend_from_slice(&a);
        b_data.push(beta);
    }
    Ok((Tensor::new(m, d, a_data)?, Tensor::vector(b_data), vertices))
}

/// Sample gaussian points and adjust the sample size until the hull has
/// exactly `m` facets (up to 50 attempts, then nearest achieved count with
/// a warning).
pub fn baseline_lp(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<BaselineInstance> {
    baseline_lp_seeded(d, m, rng, 0)
}

fn baseline_lp_seeded(
    d: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
    seed_label: u64,
) -> Result<BaselineInstance> {
    if !(2..=12).contains(&d) || m < d + 1 || m > 120 {
        return Err(Error::InvalidArgument(format!(
            "sizes must satisfy 2 <= d <= 12 and d+1 <= m <= 120 (got d={d}, m={m})"
        )));
    }

    let mut k = initial_point_count(d, m);
    let mut lo: Option<usize> = None; // largest k that undershot
    let mut hi: Option<usize> = None; // smallest k that overshot
    let mut best: Option<(usize, BaselineInstance)> = None; // by |f - m|

    for attempt in 0..MAX_SIZE_ATTEMPTS {
        let points = sample_points(d, k, rng)?;
        let (a, b, vertices) = match hull_facets(&points) {
            Ok(h) => h,
            Err(Error::DegenerateSample(_)) => continue, // resample
            Err(e) => return Err(e),
        };
        let f = a.rows();
        let inst = BaselineInstance {
            d,
            m: f,
            m_requested: m,
            a,
            b,
            vertices,
            seed: seed_label,
            warning: None,
        };
        if f == m {
            return Ok(inst);
        }
        let gap = f.abs_diff(m);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, inst));
        }
        if f < m {
            lo = Some(lo.map_or(k, |v: usize| v.max(k)));
        } else {
            hi = Some(hi.map_or(k, |v: usize| v.min(k)));
        }
        // Facet counts per extra point grow explosively beyond d = 2, so
        // high dimensions step by one while the plane doubles.
        let grow = |k: usize| if d == 2 { (k * 2).min(200_000) } else { k + 1 };
        let shrink = |k: usize| if d == 2 { (k / 2).max(d + 1) } else { (k - 1).max(d + 1) };
        k = match (lo, hi) {
            (Some(l), Some(h)) if h > l + 1 => l + (h - l) / 2,
            // Bracket closed: the count is stochastic at fixed k, so keep
            // resampling, alternating between the two cusp sizes.
            (Some(l), Some(h)) => {
                if attempt % 2 == 0 {
                    h
                } else {
                    l.max(d + 1)
                }
            }
            (Some(l), None) => grow(l),
            (None, Some(h)) => shrink(h),
            (None, None) => k,
        };
    }

    let (_, mut inst) = best.expect("at least one non-degenerate attempt");
    inst.warning = Some(format!(
        "facet-count search settled for m={} after {MAX_SIZE_ATTEMPTS} attempts (requested {m})",
        inst.m
    ));
    Ok(inst)
}

/// First guess for the gaussian sample size that yields ~m facets.
fn initial_point_count(d: usize, m: usize) -> usize {
    if d == 2 {
        // Expected 2D gaussian hull size is ~ 2 sqrt(2 pi ln k).
        let target = (m as f64 / 2.0).powi(2) / (2.0 * std::f64::consts::PI);
        (target.exp().ceil() as usize).clamp(d + 2, 200_000)
    } else {
        // Facet counts explode with every extra point beyond the simplex.
        d + 2
    }
}

fn sample_points(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::with_capacity(k);
    for _ in 0..k {
        points.push((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Learning-task instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LearnC,
    LearnCab,
    Parametric,
    TrigDemo,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::LearnC => write!(f, "learn-c"),
            Task::LearnCab => write!(f, "learn-cab"),
            Task::Parametric => write!(f, "parametric"),
            Task::TrigDemo => write!(f, "trig-demo"),
        }
    }
}

/// Parametric extras of a task instance.
#[derive(Debug, Clone)]
pub struct ParametricInstance {
    pub w_tru: Tensor,
    pub w_ini: Tensor,
    pub masks: Vec<usize>,
    pub u_range: (f64, f64),
    pub u_train: Vec<f64>,
    pub u_test: Vec<f64>,
}

/// One generated learning problem.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub baseline: BaselineInstance,
    pub task: Task,
    pub c_ini: Tensor,
    pub c_tru: Option<Tensor>,
    /// LearnC: the chosen vertex. LearnCab: [feasible, infeasible].
    /// Parametric: one target per training u.
    pub targets: Vec<Observation>,
    pub parametric: Option<ParametricInstance>,
}

/// Learn-c task: a uniformly chosen hull vertex is the target; the initial
/// cost is a fresh gaussian draw.
pub fn make_learn_c(baseline: BaselineInstance, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
    if baseline.vertices.is_empty() {
        return Err(Error::DegenerateSample("baseline has no stored vertices".into()));
    }
    let idx = rng.random_range(0..baseline.vertices.len());
    let x_tru = Tensor::vector(baseline.vertices[idx].clone());
    let c_ini = normal_vec(baseline.d, rng);
    Ok(TaskInstance {
        baseline,
        task: Task::LearnC,
        c_ini,
        c_tru: None,
        targets: vec![Observation { u: 0.0, x: x_tru }],
        parametric: None,
    })
}

/// Joint c, A, b task: one strictly feasible and one infeasible target near
/// the optimal vertex of a gaussian cost, which is then corrupted into
/// c_ini.
pub fn make_learn_cab(baseline: BaselineInstance, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
    if baseline.vertices.is_empty() {
        return Err(Error::DegenerateSample("baseline has no stored vertices".into()));
    }
    let d = baseline.d;
    let c = normal_vec(d, rng);
    let x_star = baseline
        .vertices
        .iter()
        .min_by(|v1, v2| {
            let o1 = dot(c.as_slice(), v1);
            let o2 = dot(c.as_slice(), v2);
            o1.partial_cmp(&o2).expect("finite objectives")
        })
        .expect("nonempty vertex list")
        .clone();

    // Infeasible: x* + U[-0.2, 0.2], resampled until it actually violates a
    // facet (noise keeps it feasible now and then, especially in 2D).
    let infeasible = loop {
        let cand: Vec<f64> =
            x_star.iter().map(|&v| v + rng.random_range(-0.2..=0.2)).collect();
        if max_violation(&baseline.a, &baseline.b, &cand) > 0.0 {
            break cand;
        }
    };

    // Feasible: 0.9 x* + 0.1 x' with x' a Dirichlet(1,..,1)-weighted
    // combination of all vertices.
    let weights = dirichlet_ones(baseline.vertices.len(), rng);
    let mut x_prime = vec![0.0; d];
    for (w, v) in weights.iter().zip(&baseline.vertices) {
        for (xp, vi) in x_prime.iter_mut().zip(v) {
            *xp += w * vi;
        }
    }
    let feasible: Vec<f64> =
        x_star.iter().zip(&x_prime).map(|(s, p)| 0.9 * s + 0.1 * p).collect();

    let c_ini = Tensor::vector(
        c.as_slice().iter().map(|&v| v + rng.random_range(-0.2..=0.2)).collect(),
    );

    Ok(TaskInstance {
        baseline,
        task: Task::LearnCab,
        c_ini,
        c_tru: Some(c),
        targets: vec![
            Observation { u: 0.0, x: Tensor::vector(feasible) },
            Observation { u: 0.0, x: Tensor::vector(infeasible) },
        ],
        parametric: None,
    })
}

/// Parametric task: a linear-shift model around the baseline with targets
/// solved at the true weights over 20 equally spaced training features.
pub fn make_parametric(baseline: BaselineInstance, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
    let d = baseline.d;
    let m = baseline.m;
    let c_base = normal_vec(d, rng);
    let solve_eps = IpmSettings::default().with_eps(1e-5);

    for _attempt in 0..20 {
        // True weights: zero intercepts, gaussian slopes.
        let mut w_tru = vec![0.0; 6];
        for i in [1, 3, 5] {
            w_tru[i] = 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
        let w_tru = Tensor::vector(w_tru);
        let masks: Vec<usize> = (0..m).map(|_| rng.random_range(0..d)).collect();
        let model = ParametricModel::linear_shift(
            w_tru.clone(),
            c_base.clone(),
            baseline.a.clone(),
            baseline.b.clone(),
            masks.clone(),
        )?;

        let solves_at = |model: &ParametricModel, u: f64| -> bool {
            let mut tape = Tape::new();
            match model.instantiate(u, &mut tape) {
                Ok(inst) => solve_lp(&inst.lp, &solve_eps, &mut tape)
                    .map(|r| r.status == SolveStatus::Optimal)
                    .unwrap_or(false),
                Err(_) => false,
            }
        };

        // Safe feature range: expand outward over the fixed schedule,
        // keeping the largest symmetric range that stays solvable.
        let mut radius = 0.0;
        for r in [0.1, 0.2, 0.4, 0.8, 1.0] {
            if solves_at(&model, r) && solves_at(&model, -r) {
                radius = r;
            } else {
                break;
            }
        }
        if radius == 0.0 {
            continue; // region collapses immediately; new weights
        }

        let (u_min, u_max) = (-radius, radius);
        let u_train: Vec<f64> =
            (0..20).map(|i| u_min + i as f64 * (u_max - u_min) / 19.0).collect();
        let u_test: Vec<f64> = (0..20).map(|_| rng.random_range(u_min..=u_max)).collect();

        // Targets at the true weights; an unsolvable interior point sends
        // us back for new weights.
        let mut targets = Vec::with_capacity(u_train.len());
        let mut ok = true;
        for &u in &u_train {
            let mut tape = Tape::new();
            let inst = model.instantiate(u, &mut tape)?;
            let res = solve_lp(&inst.lp, &solve_eps, &mut tape)?;
            match res.x {
                Some(x) if res.status == SolveStatus::Optimal => {
                    targets.push(Observation { u, x: tape.value(x).clone() });
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        // Corrupted start; keep it solvable across the training range so
        // learning has a valid first step.
        let mut w_ini = None;
        for _ in 0..10 {
            let cand = Tensor::vector(
                w_tru.as_slice().iter().map(|&v| v + rng.random_range(-0.2..=0.2)).collect(),
            );
            let cand_model = model.with_weights(cand.clone())?;
            if u_train.iter().all(|&u| solves_at(&cand_model, u)) {
                w_ini = Some(cand);
                break;
            }
        }
        let Some(w_ini) = w_ini else { continue };

        return Ok(TaskInstance {
            baseline,
            task: Task::Parametric,
            c_ini: c_base.clone(),
            c_tru: None,
            targets,
            parametric: Some(ParametricInstance {
                w_tru,
                w_ini,
                masks,
                u_range: (u_min, u_max),
                u_train,
                u_test,
            }),
        });
    }
    Err(Error::DegenerateSample(
        "no stable parametric weights found for this baseline".into(),
    ))
}

/// The bundled two-weight trigonometric demo with its four observations.
pub fn make_trig_demo() -> Result<TaskInstance> {
    let w_tru = Tensor::vector(vec![1.0, 1.0]);
    let w_ini = Tensor::vector(vec![0.2, 0.4]);
    let model = ParametricModel::trig_demo(w_tru.clone())?;
    let u_train = vec![-1.5, -0.5, 0.5, 1.5];
    let settings = IpmSettings::default().with_eps(1e-5);

    let mut targets = Vec::new();
    for &u in &u_train {
        let mut tape = Tape::new();
        let inst = model.instantiate(u, &mut tape)?;
        let res = solve_lp(&inst.lp, &settings, &mut tape)?;
        let x = res
            .x
            .ok_or_else(|| Error::InvalidArgument(format!("demo solve failed at u={u}")))?;
        targets.push(Observation { u, x: tape.value(x).clone() });
    }

    // The demo LP at the initial weights, evaluated at u = 0, doubles as
    // the instance's nominal (c, A, b) record.
    let mut tape = Tape::new();
    let ini_model = ParametricModel::trig_demo(w_ini.clone())?;
    let inst = ini_model.instantiate(0.0, &mut tape)?;
    let a = tape.value(inst.lp.a).clone();
    let b = tape.value(inst.lp.b).clone();
    let c_ini = tape.value(inst.lp.c).clone();

    Ok(TaskInstance {
        baseline: BaselineInstance {
            d: 2,
            m: 3,
            m_requested: 3,
            a,
            b,
            vertices: Vec::new(),
            seed: 0,
            warning: None,
        },
        task: Task::TrigDemo,
        c_ini,
        c_tru: None,
        targets,
        parametric: Some(ParametricInstance {
            w_tru,
            w_ini,
            masks: Vec::new(),
            u_range: (-1.5, 1.5),
            u_train,
            u_test: Vec::new(),
        }),
    })
}

/// Deterministic per-instance RNG stream.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// max_i (a_i'x - b_i): positive means infeasible.
pub fn max_violation(a: &Tensor, b: &Tensor, x: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..a.rows() {
        let mut ax = 0.0;
        for j in 0..a.cols() {
            ax += a.get(i, j) * x[j];
        }
        worst = worst.max(ax - b.get(i, 0));
    }
    worst
}

fn normal_vec(d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::vector((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
}

fn dirichlet_ones(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Gamma(1,1) = Exp(1) draws, normalized.
    let mut g: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    g
}

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn negate(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| -v).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn push_dedup(facets: &mut Vec<(Vec<f64>, f64)>, a: Vec<f64>, beta: f64) {
    if !facets
        .iter()
        .any(|(a2, b2)| close(a2, &a, FACET_DEDUP_TOL) && (b2 - beta).abs() <= FACET_DEDUP_TOL)
    {
        facets.push((a, beta));
    }
}

/// Unit normal and offset of the hyperplane through the chosen d points, or
/// None when they are affinely dependent.
fn hyperplane_through(points: &[Vec<f64>], chosen: &[usize]) -> Option<(Vec<f64>, f64)> {
    let d = points[chosen[0]].len();
    let p0 = &points[chosen[0]];
    // Null vector of the (d-1) x d difference matrix via gaussian
    // elimination with partial pivoting.
    let mut rows: Vec<Vec<f64>> = chosen[1..]
        .iter()
        .map(|&i| points[i].iter().zip(p0).map(|(a, b)| a - b).collect())
        .collect();
    let n_rows = rows.len();
    let mut pivot_col = vec![usize::MAX; n_rows];
    let mut used = vec![false; d];
    let mut r = 0;
    for col in 0..d {
        let mut best = r;
        let mut best_val = 0.0;
        for i in r..n_rows {
            let v = rows[i][col].abs();
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        if best_val <= 1e-12 {
            continue;
        }
        rows.swap(r, best);
        pivot_col[r] = col;
        used[col] = true;
        for i in (r + 1)..n_rows {
            let f = rows[i][col] / rows[r][col];
            for j in col..d {
                rows[i][j] -= f * rows[r][j];
            }
        }
        r += 1;
        if r == n_rows {
            break;
        }
    }
    if r < n_rows {
        return None; // affinely dependent subset
    }

    let free = (0..d).find(|&j| !used[j])?;
    let mut normal = vec![0.0; d];
    normal[free] = 1.0;
    for i in (0..n_rows).rev() {
        let col = pivot_col[i];
        let mut s = 0.0;
        for j in (col + 1)..d {
            s += rows[i][j] * normal[j];
        }
        normal[col] = -s / rows[i][col];
    }
    let norm = dot(&normal, &normal).sqrt();
    if !norm.is_finite() || norm <= 1e-12 {
        return None;
    }
    for v in &mut normal {
        *v /= norm;
    }
    let offset = dot(&normal, p0);
    Some((normal, offset))
}

fn enumerate_subsets(
    candidates: &[usize],
    d: usize,
    subset: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == d {
        visit(subset);
        return;
    }
    for i in start..candidates.len() {
        subset[depth] = candidates[i];
        enumerate_subsets(candidates, d, subset, depth + 1, i + 1, visit);
    }
}

/// Indices of the 2D convex hull (Andrew's monotone chain), used only to
/// prune facet candidates.
fn monotone_chain_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        points[i][0]
            .partial_cmp(&points[j][0])
            .unwrap()
            .then(points[i][1].partial_cmp(&points[j][1]).unwrap())
    });
    let cross = |o: usize, a: usize, b: usize| -> f64 {
        (points[a][0] - points[o][0]) * (points[b][1] - points[o][1])
            - (points[a][1] - points[o][1]) * (points[b][0] - points[o][0])
    };
    let mut hull: Vec<usize> = Vec::new();
    for &i in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in idx.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull
}
