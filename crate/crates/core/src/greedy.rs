//! Two-phase greedy heuristic.
//!
//! Exploration tries uniform reprofiling ratios `gamma` (every flow gets
//! `D = gamma * min(d, b/r)`) over progressively narrower ranges. Each sample
//! is improved by adjustment, which visits links and, on each, lets flows
//! trade local deadline for reprofiling delay as far as the link's slack
//! allows without raising that link's bandwidth.

use thiserror::Error;

use crate::bandwidth::{link_assignments, link_bandwidths, min_link_bandwidth, service_value, BandwidthError};
use crate::baselines::uniform_ratio;
use crate::netmodel::{Problem, Solution};

#[derive(Debug, Error, PartialEq)]
pub enum GreedyError {
    #[error("invalid greedy configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Bandwidth(#[from] BandwidthError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// Exploration rounds.
    pub iterations: usize,
    /// Interior ratios per round; each round evaluates `samples + 2`.
    pub samples: usize,
    /// Relative improvement below which a loop stops.
    pub eps: f64,
    pub max_sweeps: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            samples: 4,
            eps: 1e-3,
            max_sweeps: 50,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<(), GreedyError> {
        if self.iterations == 0 {
            return Err(GreedyError::Config("L must be at least 1"));
        }
        if self.samples == 0 {
            return Err(GreedyError::Config("K must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(GreedyError::Config("eps must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(GreedyError::Config("max sweeps must be at least 1"));
        }
        Ok(())
    }
}

/// What one adjustment run did, with the quantities its invariants are
/// stated on.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustReport {
    pub total: f64,
    pub sweeps: usize,
    /// Total bandwidth before the first sweep and after each sweep.
    pub history: Vec<f64>,
    /// Largest relative change of a link's bandwidth across its own visit.
    pub neutrality_drift: f64,
    /// Largest change of any flow's `sum T + D`.
    pub conservation_drift: f64,
    /// Whether the last sweep was undone because rounding raised the total.
    pub reverted: bool,
}

impl AdjustReport {
    /// Checks neutrality, monotone totals and conservation at the given
    /// relative tolerance.
    pub fn invariants_hold(&self, tol: f64) -> bool {
        let monotone = self.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol) + tol);
        monotone && self.neutrality_drift <= tol && self.conservation_drift <= tol
    }
}

/// A preceding inflection point seen by the flow being adjusted: its time
/// and the service the link can still give that flow there, that is
/// `C* p - sum_{k != i} beta_k(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecedingPoint {
    pub time: f64,
    pub available: f64,
}

/// New local deadline for a flow with token bucket `(rate, burst)`, current
/// local deadline `t` and inflection point `inflection` held fixed: the
/// smallest value in `[max(0, T' - b/r), t]` that keeps the flow's service
/// at every preceding point within what is available there.
pub fn solve_t_star(rate: f64, burst: f64, t: f64, inflection: f64, points: &[PrecedingPoint]) -> f64 {
    let mut bound = (inflection - burst / rate).max(0.0);
    for p in points {
        if p.time < inflection && p.available < burst {
            // burst (p - T) / (T' - T) = available, solved for T.
            let star = (burst * p.time - p.available * inflection) / (burst - p.available);
            bound = bound.max(star);
        }
    }
    bound.min(t)
}

fn link_order(problem: &Problem) -> Vec<usize> {
    let mut links: Vec<(usize, usize)> = (0..problem.num_links())
        .filter(|&j| !problem.members(j).is_empty())
        .map(|j| (problem.reach(j), j))
        .collect();
    links.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    links.into_iter().map(|(_, j)| j).collect()
}

/// Adjusts one link in place and returns its bandwidth before the visit.
fn adjust_link(problem: &Problem, sol: &mut Solution, j: usize) -> Result<f64, BandwidthError> {
    let assignments = link_assignments(problem, sol, j)?;
    let link = min_link_bandwidth(&assignments)?;
    let capacity = link.capacity;
    let mut slacks = link.slacks;
    let members = problem.members(j);
    let times: Vec<f64> = assignments.iter().map(|a| a.inflection()).collect();

    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&x, &y| times[y].total_cmp(&times[x]).then(members[x].0.cmp(&members[y].0)));

    let mut points = Vec::with_capacity(members.len());
    for &x in &order {
        let (i, h) = members[x];
        let f = problem.flow(i);
        let inflection = times[x];
        let current = sol.deadlines[i][h];
        points.clear();
        points.extend(
            (0..members.len())
                .filter(|&k| times[k] < inflection)
                .map(|k| PrecedingPoint {
                    time: times[k],
                    available: slacks[k] + service_value(f.rate, f.burst, current, inflection, times[k]),
                }),
        );
        let t = solve_t_star(f.rate, f.burst, current, inflection, &points);
        if t < current {
            for k in 0..members.len() {
                if times[k] < inflection {
                    let p = times[k];
                    slacks[k] -= service_value(f.rate, f.burst, t, inflection, p)
                        - service_value(f.rate, f.burst, current, inflection, p);
                }
            }
            sol.deadlines[i][h] = t;
            sol.delays[i] = inflection - t;
        }
    }
    Ok(capacity)
}

/// Runs adjustment sweeps in place until a sweep improves the total by at
/// most `eps` (relative), always doing at least two sweeps unless capped.
pub fn adjust(
    problem: &Problem,
    sol: &mut Solution,
    eps: f64,
    max_sweeps: usize,
) -> Result<AdjustReport, BandwidthError> {
    let links = link_order(problem);
    let budgets: Vec<f64> = (0..problem.num_flows()).map(|i| sol.end_to_end(i)).collect();
    let initial: f64 = link_bandwidths(problem, sol)?.iter().sum();
    let mut history = vec![initial];
    let mut neutrality_drift: f64 = 0.0;
    let mut previous = f64::INFINITY;
    let mut current = initial;
    let mut sweeps = 0;
    let mut reverted = false;
    while sweeps < max_sweeps && (previous.is_infinite() || (previous - current) / previous > eps) {
        let snapshot = sol.clone();
        for &j in &links {
            let before = adjust_link(problem, sol, j)?;
            let after = min_link_bandwidth(&link_assignments(problem, sol, j)?)?.capacity;
            neutrality_drift = neutrality_drift.max((after - before).abs() / before);
        }
        sweeps += 1;
        let total: f64 = link_bandwidths(problem, sol)?.iter().sum();
        if total > current {
            *sol = snapshot;
            reverted = true;
            break;
        }
        history.push(total);
        previous = current;
        current = total;
        if sweeps == 1 {
            previous = f64::INFINITY;
        }
    }
    let conservation_drift = budgets
        .iter()
        .enumerate()
        .map(|(i, &b)| (sol.end_to_end(i) - b).abs() / b.max(1.0))
        .fold(0.0, f64::max);
    Ok(AdjustReport {
        total: current,
        sweeps,
        history,
        neutrality_drift,
        conservation_drift,
        reverted,
    })
}

/// One exploration sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub round: usize,
    pub gamma: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub total: f64,
    pub solution: Solution,
    pub gamma: f64,
    pub samples: Vec<Sample>,
    /// One report per sample, in sample order.
    pub adjustments: Vec<AdjustReport>,
}

/// Exploration with adjustment of every sample.
pub fn explore(problem: &Problem, cfg: &GreedyConfig) -> Result<GreedyOutcome, GreedyError> {
    cfg.validate()?;
    let k_max = cfg.samples + 1;
    let (mut lr, mut hr) = (0.0, 1.0);
    let mut best: Option<(f64, usize, f64, Solution)> = None;
    let mut samples = Vec::new();
    let mut adjustments = Vec::new();
    let mut last_error = None;
    for round in 0..cfg.iterations {
        let before = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let gamma = |k: usize| {
            if k == k_max {
                hr
            } else {
                lr + (hr - lr) * k as f64 / k_max as f64
            }
        };
        let mut round_best = None;
        for k in 0..=k_max {
            let g = gamma(k);
            let mut sol = uniform_ratio(problem, g);
            let report = match adjust(problem, &mut sol, cfg.eps, cfg.max_sweeps) {
                Ok(r) => r,
                Err(e) => {
                    last_error = Some(e);
                    continue;
                }
            };
            samples.push(Sample {
                round,
                gamma: g,
                total: report.total,
            });
            if best.as_ref().is_none_or(|b| report.total < b.0) {
                best = Some((report.total, k, g, sol));
                round_best = Some(k);
            }
            adjustments.push(report);
        }
        let after = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let Some(k_star) = round_best else { break };
        if before.is_finite() && (before - after) / before < cfg.eps {
            break;
        }
        let (lo, hi) = (gamma(k_star.saturating_sub(1)), gamma((k_star + 1).min(k_max)));
        lr = lo;
        hr = hi;
    }
    match best {
        Some((total, _, gamma, solution)) => Ok(GreedyOutcome {
            total,
            solution,
            gamma,
            samples,
            adjustments,
        }),
        None => Err(last_error
            .map(GreedyError::from)
            .unwrap_or(GreedyError::Config("no samples evaluated"))),
    }
}
