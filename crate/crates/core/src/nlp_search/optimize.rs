//! Derivative-free local search over polyhedral regions.

use rand::Rng;

use super::instance::{base_constraints, Layout, LinearConstraint, NlpInstance};
use crate::bandwidth::link_bandwidths;
use crate::baselines::{full_reprofiling, no_reprofiling};
use crate::netmodel::{Problem, Solution};

/// Tolerances relative to the largest deadline.
const BASE_TOL: f64 = 1e-12;
const ORDER_TOL: f64 = 1e-9;
/// Relative slack allowed on the optimal total while centering.
pub(crate) const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub random_starts: usize,
    pub initial_step: f64,
    /// Search stops once the step, in units of each variable's deadline,
    /// falls below this.
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            random_starts: 6,
            initial_step: 0.25,
            min_step: 1e-7,
            max_evals: 200_000,
        }
    }
}

/// Best point found for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSolution {
    pub point: Vec<f64>,
    pub total: f64,
}

pub(crate) fn deadline_scale(problem: &Problem) -> f64 {
    problem.flows().iter().map(|f| f.deadline).fold(0.0, f64::max)
}

/// Per-variable step scale: the owning flow's deadline.
pub(crate) fn variable_scale(problem: &Problem, layout: &Layout) -> Vec<f64> {
    (0..layout.dim())
        .map(|k| problem.flow(layout.owner(k)).deadline)
        .collect()
}

/// Exact total bandwidth at `x`, infinite where some link is unbounded.
pub(crate) fn exact_total(problem: &Problem, layout: &Layout, x: &[f64]) -> f64 {
    match link_bandwidths(problem, &layout.solution(problem, x)) {
        Ok(c) => c.iter().sum(),
        Err(_) => f64::INFINITY,
    }
}

fn max_violation(constraints: &[LinearConstraint], x: &[f64]) -> f64 {
    constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max)
}

/// Euclidean projection onto an intersection of halfspaces (Dykstra).
pub(crate) fn project(constraints: &[LinearConstraint], x0: &[f64], max_sweeps: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let norms: Vec<f64> = constraints
        .iter()
        .map(|c| c.terms.iter().map(|&(_, a)| a * a).sum())
        .collect();
    let mut lambda = vec![0.0; constraints.len()];
    for _ in 0..max_sweeps {
        let mut moved: f64 = 0.0;
        for (n, c) in constraints.iter().enumerate() {
            let old = lambda[n];
            // z = x + old * a; the new multiplier projects z.
            let az = c.lhs(&x) + old * norms[n];
            let new = ((az - c.bound) / norms[n]).max(0.0);
            let delta = old - new;
            if delta != 0.0 {
                for &(k, a) in &c.terms {
                    x[k] += delta * a;
                }
                moved = moved.max(delta.abs());
            }
            lambda[n] = new;
        }
        if moved < 1e-16 {
            break;
        }
    }
    x
}

/// Opportunistic pattern search: polls the fixed directions and a few
/// random ones, doubling along any direction that improves and halving the
/// step when none does. `eval` returns `None` for infeasible points.
pub(crate) fn pattern_search<R: Rng>(
    x0: Vec<f64>,
    f0: f64,
    dirs: &[Vec<f64>],
    scale: &[f64],
    cfg: &SolveConfig,
    rng: &mut R,
    eval: &mut dyn FnMut(&[f64]) -> Option<f64>,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let (mut x, mut fx) = (x0, f0);
    let mut step = cfg.initial_step;
    let mut evals = 0;
    let mut y = vec![0.0; dim];
    while step >= cfg.min_step && evals < cfg.max_evals && dim > 0 {
        let random: Vec<Vec<f64>> = (0..dim.max(2))
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
                v.into_iter().map(|a| a / n).collect()
            })
            .collect();
        let mut improved = false;
        for d in dirs.iter().chain(&random) {
            let mut s = step;
            loop {
                for k in 0..dim {
                    y[k] = x[k] + s * d[k] * scale[k];
                }
                evals += 1;
                match eval(&y) {
                    Some(fy) if fy < fx - 1e-14 * fx.abs() => {
                        x.copy_from_slice(&y);
                        fx = fy;
                        improved = true;
                        s *= 2.0;
                    }
                    _ => break,
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Coordinate directions plus transfers between variables of one flow.
pub(crate) fn directions(layout: &Layout) -> Vec<Vec<f64>> {
    let dim = layout.dim();
    let unit = |k: usize, s: f64| {
        let mut v = vec![0.0; dim];
        v[k] = s;
        v
    };
    let mut dirs = Vec::new();
    for k in 0..dim {
        dirs.push(unit(k, 1.0));
        dirs.push(unit(k, -1.0));
    }
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..dim {
        for b in a + 1..dim {
            if layout.owner(a) == layout.owner(b) {
                let mut v = vec![0.0; dim];
                v[a] = inv;
                v[b] = -inv;
                dirs.push(v.iter().map(|c| -c).collect());
                dirs.push(v);
            }
        }
    }
    dirs
}

fn feasible(constraints: &[LinearConstraint], base_len: usize, x: &[f64], scale: f64) -> bool {
    constraints[..base_len]
        .iter()
        .all(|c| c.violation(x) <= BASE_TOL * scale)
        && constraints[base_len..]
            .iter()
            .all(|c| c.violation(x) <= ORDER_TOL * scale)
}

fn random_point<R: Rng>(problem: &Problem, rng: &mut R) -> Solution {
    let mut sol = Solution::empty(problem);
    for (i, f) in problem.flows().iter().enumerate() {
        let d = rng.gen::<f64>() * f.reprofiling_cap();
        let weights: Vec<f64> = (0..f.hops()).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        sol.delays[i] = d;
        for (h, w) in weights.iter().enumerate() {
            sol.deadlines[i][h] = (f.deadline - d) * w / total;
        }
    }
    sol
}

/// Multi-start pattern search within one ordering's region. Starts are the
/// FR and NR points and `random_starts` random points, each projected onto
/// the region; `None` when no start can be made feasible.
pub fn solve_instance<R: Rng>(inst: &NlpInstance<'_>, cfg: &SolveConfig, rng: &mut R) -> Option<InstanceSolution> {
    if inst.contradictory {
        return None;
    }
    let problem = inst.problem;
    let layout = &inst.layout;
    let s = deadline_scale(problem);
    let scale = variable_scale(problem, layout);
    let dirs = directions(layout);
    let mut starts = vec![
        layout.point(&full_reprofiling(problem)),
        layout.point(&no_reprofiling(problem)),
    ];
    for _ in 0..cfg.random_starts {
        starts.push(layout.point(&random_point(problem, rng)));
    }
    let mut best: Option<InstanceSolution> = None;
    for start in starts {
        let x = project(&inst.linear, &start, 20_000);
        if !feasible(&inst.linear, inst.base_len, &x, s) {
            continue;
        }
        let f = exact_total(problem, layout, &x);
        if !f.is_finite() {
            continue;
        }
        let mut eval = |y: &[f64]| {
            feasible(&inst.linear, inst.base_len, y, s)
                .then(|| exact_total(problem, layout, y))
                .filter(|v| v.is_finite())
        };
        let (x, f) = pattern_search(x, f, &dirs, &scale, cfg, rng, &mut eval);
        if best.as_ref().is_none_or(|b| f < b.total) {
            best = Some(InstanceSolution { point: x, total: f });
        }
    }
    best
}

/// Pattern search from `x` under the bound and deadline constraints only.
pub(crate) fn polish<R: Rng>(
    problem: &Problem,
    layout: &Layout,
    x: Vec<f64>,
    cfg: &SolveConfig,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let base = base_constraints(problem, layout);
    let s = deadline_scale(problem);
    let scale = variable_scale(problem, layout);
    let f = exact_total(problem, layout, &x);
    let mut eval = |y: &[f64]| {
        (max_violation(&base, y) <= BASE_TOL * s)
            .then(|| exact_total(problem, layout, y))
            .filter(|v| v.is_finite())
    };
    pattern_search(x, f, &directions(layout), &scale, cfg, rng, &mut eval)
}

/// `sum ln max(x_k, floor_k)`: larger for points deeper inside the region.
pub(crate) fn centrality(x: &[f64], scale: &[f64]) -> f64 {
    x.iter().zip(scale).map(|(&v, &s)| v.max(1e-9 * s).ln()).sum()
}

/// Among points whose total stays within `FACE_TOL` of `total`, moves
/// towards the one maximizing [`centrality`]. Optimal solutions are often
/// not unique; this picks a reproducible representative away from the
/// boundary.
pub(crate) fn center<R: Rng>(
    problem: &Problem,
    layout: &Layout,
    x: Vec<f64>,
    total: f64,
    cfg: &SolveConfig,
    rng: &mut R,
) -> Vec<f64> {
    let base = base_constraints(problem, layout);
    let s = deadline_scale(problem);
    let scale = variable_scale(problem, layout);
    let cap = total * (1.0 + FACE_TOL);
    let f = -centrality(&x, &scale);
    let mut eval = |y: &[f64]| {
        (max_violation(&base, y) <= BASE_TOL * s && exact_total(problem, layout, y) <= cap)
            .then(|| -centrality(y, &scale))
    };
    pattern_search(x, f, &directions(layout), &scale, cfg, rng, &mut eval).0
}

/// Clamps a solution onto the exact feasible set: `0 <= D <= b/r`,
/// `T >= 0` and `sum T + D <= d`, taking any excess from the largest `T`.
pub(crate) fn repair(problem: &Problem, sol: &mut Solution) {
    for (i, f) in problem.flows().iter().enumerate() {
        sol.delays[i] = sol.delays[i].clamp(0.0, f.max_reprofiling_delay().min(f.deadline));
        for t in sol.deadlines[i].iter_mut() {
            *t = t.max(0.0);
        }
        for _ in 0..f.hops() {
            let excess = sol.end_to_end(i) - f.deadline;
            if excess <= 0.0 {
                break;
            }
            let ts = &mut sol.deadlines[i];
            let h = (0..ts.len()).max_by(|&a, &b| ts[a].total_cmp(&ts[b])).unwrap_or(0);
            ts[h] = (ts[h] - excess).max(0.0);
        }
        let excess = sol.end_to_end(i) - f.deadline;
        if excess > 0.0 {
            sol.delays[i] = (sol.delays[i] - excess).max(0.0);
        }
    }
}
