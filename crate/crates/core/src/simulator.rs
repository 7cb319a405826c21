//! Discrete-time fluid simulation of reprofilers and SCED links.
//!
//! Every hop has a greedy shaper enforcing the flow's reprofiled curve
//! followed by the link scheduler. A shaper's output conforms to `sigma`, so
//! the SCED deadline of a bit reduces to its arrival time at the link plus
//! the local deadline there; links serve earliest deadline first.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandwidth::{link_bandwidths, BandwidthError};
use crate::buffers::buffer_report_with;
use crate::netmodel::{NetError, Problem, Solution};

/// Simulations longer than this many steps are refused.
pub const MAX_STEPS: f64 = 5e8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Bandwidth(#[from] BandwidthError),
}

/// Traffic entering each flow's ingress shaper. All sources are limited by
/// the flow's token bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SourceModel {
    /// The whole burst at `0+`, then the sustained rate.
    GreedyBurst,
    /// A full burst every `b / r` seconds.
    PeriodicBurst,
    /// Each step independently on (sending all it may) or off.
    RandomOnOff { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Time step; defaults to `1e-4` of the smallest deadline.
    pub step: Option<f64>,
    /// Simulated time; defaults to five times the largest deadline.
    pub horizon: Option<f64>,
    pub source: SourceModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: None,
            horizon: None,
            source: SourceModel::GreedyBurst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDelay {
    pub id: String,
    pub max_delay: f64,
    /// `D + sum T`.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferKind {
    Ingress,
    Reprofiler,
    Scheduler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferUsage {
    pub kind: BufferKind,
    pub flow: Option<String>,
    pub link: String,
    pub max_backlog: f64,
    pub bound: f64,
    /// Discretization allowance: the element's input rate times the step.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    Deadline { flow: String, delay: f64, bound: f64 },
    Backlog { buffer: usize, backlog: f64, bound: f64 },
    Unfinished { flow: String, age: f64, bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub step: f64,
    pub horizon: f64,
    pub steps: usize,
    pub capacities: Vec<f64>,
    /// Largest volume a link served in one step, relative to `C * step`.
    pub max_service_ratio: f64,
    pub flows: Vec<FlowDelay>,
    pub buffers: Vec<BufferUsage>,
    pub violations: Vec<Violation>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String, NetError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Greedy shaper for `min(R t, B + r t)`; `R` is infinite when `D = 0`.
struct Shaper {
    peak_per_step: f64,
    rate_per_step: f64,
    offset: f64,
    tokens: f64,
    backlog: f64,
    max_backlog: f64,
}

impl Shaper {
    fn new(rate: f64, burst: f64, delay: f64, step: f64) -> Self {
        let (peak, offset) = if delay > 0.0 {
            (burst / delay * step, (burst - rate * delay).max(0.0))
        } else {
            (f64::INFINITY, burst)
        };
        Self {
            peak_per_step: peak,
            rate_per_step: rate * step,
            offset,
            tokens: offset,
            backlog: 0.0,
            max_backlog: 0.0,
        }
    }

    fn release(&mut self) -> f64 {
        self.max_backlog = self.max_backlog.max(self.backlog);
        let available = self.tokens + self.rate_per_step;
        let sent = self.backlog.min(self.peak_per_step).min(available);
        self.backlog = (self.backlog - sent).max(0.0);
        self.tokens = (available - sent).clamp(0.0, self.offset);
        sent
    }
}

/// Cumulative arrivals of one flow. Flows stay FIFO end to end, so the bit
/// at cumulative position `x` left the source at the first mark above `x`.
#[derive(Default)]
struct Arrivals {
    marks: VecDeque<(f64, f64)>,
    arrived: f64,
    departed: f64,
}

impl Arrivals {
    fn arrive(&mut self, t: f64, amount: f64) {
        self.arrived += amount;
        self.marks.push_back((t, self.arrived));
    }

    fn oldest(&mut self) -> Option<f64> {
        let edge = self.departed + 1e-12 * self.arrived;
        while self.marks.front().is_some_and(|&(_, cum)| cum <= edge) {
            self.marks.pop_front();
        }
        self.marks.front().map(|&(t, _)| t)
    }

    /// Delay of the oldest bit among `amount` leaving at `now`.
    fn depart(&mut self, now: f64, amount: f64) -> f64 {
        let origin = self.oldest().unwrap_or(now);
        self.departed += amount;
        now - origin
    }
}

struct Source {
    model: SourceModel,
    tokens: f64,
    burst: f64,
    rate_per_step: f64,
    period_steps: f64,
}

impl Source {
    fn emit(&mut self, k: usize, rng: &mut ChaCha8Rng) -> f64 {
        let available = self.tokens + self.rate_per_step;
        let want = match self.model {
            SourceModel::GreedyBurst => f64::INFINITY,
            SourceModel::PeriodicBurst => {
                let crossed = (k as f64 / self.period_steps).floor() != ((k as f64 - 1.0) / self.period_steps).floor();
                if k == 0 || crossed {
                    self.burst
                } else {
                    0.0
                }
            }
            SourceModel::RandomOnOff { .. } => {
                if rng.gen_bool(0.5) {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        };
        let sent = want.min(available);
        self.tokens = (available - sent).min(self.burst);
        sent
    }
}

/// Links in an order where every path visits them increasingly, falling
/// back to index order for links on a cycle.
fn link_order(problem: &Problem) -> Vec<usize> {
    let n = problem.num_links();
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for f in problem.flows() {
        for w in f.path.windows(2) {
            succ[w[0]].push(w[1]);
            indeg[w[1]] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while let Some(j) = ready.pop_first() {
        order.push(j);
        placed[j] = true;
        for &s in &succ[j] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    order.extend((0..n).filter(|&j| !placed[j]));
    order
}

/// Simulates `solution` at its minimum link bandwidths.
pub fn simulate(problem: &Problem, solution: &Solution, cfg: &SimConfig) -> Result<SimReport, SimError> {
    let capacities = link_bandwidths(problem, solution)?;
    simulate_with(problem, solution, &capacities, cfg)
}

/// Simulates `solution` with the given link bandwidths.
pub fn simulate_with(
    problem: &Problem,
    solution: &Solution,
    capacities: &[f64],
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    let flows = problem.flows();
    let min_deadline = flows.iter().map(|f| f.deadline).fold(f64::INFINITY, f64::min);
    let max_deadline = flows.iter().map(|f| f.deadline).fold(0.0, f64::max);
    let step = cfg.step.unwrap_or(1e-4 * min_deadline);
    let horizon = cfg.horizon.unwrap_or(5.0 * max_deadline);
    if flows.is_empty() {
        return Ok(SimReport {
            step: 0.0,
            horizon: 0.0,
            steps: 0,
            capacities: capacities.to_vec(),
            max_service_ratio: 0.0,
            flows: Vec::new(),
            buffers: Vec::new(),
            violations: Vec::new(),
        });
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(SimError::Config(format!("step must be positive, got {step}")));
    }
    if !(horizon > max_deadline) {
        return Err(SimError::Config(format!(
            "horizon {horizon} must exceed the largest deadline {max_deadline}"
        )));
    }
    if horizon / step > MAX_STEPS {
        return Err(SimError::Config(format!("{} steps exceed the cap", horizon / step)));
    }
    let steps = (horizon / step).ceil() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(match cfg.source {
        SourceModel::RandomOnOff { seed } => seed,
        _ => 0,
    });
    let mut sources: Vec<Source> = flows
        .iter()
        .map(|f| Source {
            model: cfg.source,
            tokens: f.burst,
            burst: f.burst,
            rate_per_step: f.rate * step,
            period_steps: f.burst / f.rate / step,
        })
        .collect();
    let mut shapers: Vec<Vec<Shaper>> = flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            (0..f.hops())
                .map(|_| Shaper::new(f.rate, f.burst, solution.delays[i], step))
                .collect()
        })
        .collect();
    let mut arrivals: Vec<Arrivals> = flows.iter().map(|_| Arrivals::default()).collect();
    // Per link and member: `(amount, deadline)` in arrival order.
    let mut queues: Vec<Vec<VecDeque<(f64, f64)>>> = (0..problem.num_links())
        .map(|j| vec![VecDeque::new(); problem.members(j).len()])
        .collect();
    let mut link_max = vec![0.0f64; problem.num_links()];
    let mut link_backlog = vec![0.0f64; problem.num_links()];
    let mut max_delay = vec![0.0f64; flows.len()];
    let mut max_service_ratio = 0.0f64;
    let order = link_order(problem);

    for k in 0..steps {
        let t = k as f64 * step;
        for (i, src) in sources.iter_mut().enumerate() {
            let a = src.emit(k, &mut rng);
            if a > 0.0 {
                arrivals[i].arrive(t, a);
                shapers[i][0].backlog += a;
            }
        }
        for &j in &order {
            let members = problem.members(j);
            for (s, &(i, h)) in members.iter().enumerate() {
                let a = shapers[i][h].release();
                if a > 0.0 {
                    link_backlog[j] += a;
                    queues[j][s].push_back((a, t + solution.deadlines[i][h]));
                }
            }
            link_max[j] = link_max[j].max(link_backlog[j]);

            let mut budget = capacities[j] * step;
            let mut total_served = 0.0;
            while budget > 0.0 {
                let mut next: Option<(usize, f64)> = None;
                for (s, q) in queues[j].iter().enumerate() {
                    if let Some(&(_, d)) = q.front() {
                        if next.is_none_or(|(_, best)| d < best) {
                            next = Some((s, d));
                        }
                    }
                }
                let Some((s, _)) = next else { break };
                let front = queues[j][s].front_mut().expect("non-empty queue");
                let got = if front.0 <= budget * (1.0 + 1e-12) {
                    let a = front.0;
                    queues[j][s].pop_front();
                    a
                } else {
                    front.0 -= budget;
                    budget
                };
                budget -= got;
                total_served += got;
                let (i, h) = members[s];
                if h + 1 < flows[i].hops() {
                    shapers[i][h + 1].backlog += got;
                } else {
                    max_delay[i] = max_delay[i].max(arrivals[i].depart(t + step, got));
                }
            }
            link_backlog[j] = if queues[j].iter().all(VecDeque::is_empty) {
                0.0
            } else {
                (link_backlog[j] - total_served).max(0.0)
            };
            if capacities[j] > 0.0 {
                max_service_ratio = max_service_ratio.max(total_served / (capacities[j] * step));
            }
        }
    }

    let bounds: Vec<f64> = (0..flows.len()).map(|i| solution.end_to_end(i)).collect();
    let mut violations = Vec::new();
    let flow_ids = problem.flow_ids();
    let report_flows: Vec<FlowDelay> = (0..flows.len())
        .map(|i| FlowDelay {
            id: flow_ids[i].clone(),
            max_delay: max_delay[i],
            bound: bounds[i],
        })
        .collect();
    for f in &report_flows {
        if f.max_delay > f.bound + 2.0 * step + 1e-9 * f.bound {
            violations.push(Violation::Deadline {
                flow: f.id.clone(),
                delay: f.max_delay,
                bound: f.bound,
            });
        }
    }
    let end = steps as f64 * step;
    for (i, arr) in arrivals.iter_mut().enumerate() {
        let Some(oldest) = arr.oldest() else { continue };
        if end - oldest > bounds[i] + 2.0 * step + 1e-9 * bounds[i] {
            violations.push(Violation::Unfinished {
                flow: flow_ids[i].clone(),
                age: end - oldest,
                bound: bounds[i],
            });
        }
    }

    let report = buffer_report_with(problem, solution, capacities);
    let mut buffers = Vec::new();
    let link_ids = problem.link_ids();
    for (i, f) in flows.iter().enumerate() {
        buffers.push(BufferUsage {
            kind: BufferKind::Ingress,
            flow: Some(flow_ids[i].clone()),
            link: link_ids[f.path[0]].clone(),
            max_backlog: shapers[i][0].max_backlog,
            bound: report.flows[i].ingress,
            tolerance: f.rate * step,
        });
        for h in 1..f.hops() {
            buffers.push(BufferUsage {
                kind: BufferKind::Reprofiler,
                flow: Some(flow_ids[i].clone()),
                link: link_ids[f.path[h]].clone(),
                max_backlog: shapers[i][h].max_backlog,
                bound: report.flows[i].hops[h - 1].bound,
                tolerance: capacities[f.path[h - 1]] * step,
            });
        }
    }
    for (j, l) in report.links.iter().enumerate() {
        buffers.push(BufferUsage {
            kind: BufferKind::Scheduler,
            flow: None,
            link: l.id.clone(),
            max_backlog: link_max[j],
            bound: l.scheduling,
            tolerance: capacities[j] * step,
        });
    }
    for (n, b) in buffers.iter().enumerate() {
        if b.max_backlog > b.bound + b.tolerance + 1e-9 * b.bound.max(1.0) {
            violations.push(Violation::Backlog {
                buffer: n,
                backlog: b.max_backlog,
                bound: b.bound,
            });
        }
    }

    Ok(SimReport {
        step,
        horizon,
        steps,
        capacities: capacities.to_vec(),
        max_service_ratio,
        flows: report_flows,
        buffers,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{full_reprofiling, no_reprofiling};
    use crate::netmodel::{FlowProfile, Network};

    fn net(flows: Vec<FlowProfile>, links: &[&str]) -> Problem {
        Network::new(links.iter().map(|s| s.to_string()).collect(), flows)
            .to_problem()
            .unwrap()
    }

    #[test]
    fn full_reprofiling_single_link_delay_is_d() {
        let p = net(vec![FlowProfile::new("f", 1.0, 2.0, 1.0, &["a"])], &["a"]);
        let sol = full_reprofiling(&p);
        let cfg = SimConfig {
            step: Some(1e-3),
            ..SimConfig::default()
        };
        let rep = simulate(&p, &sol, &cfg).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations);
        assert!((rep.flows[0].max_delay - 1.0).abs() <= 2.0 * rep.step);
        assert!(rep.max_service_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn no_reprofiling_two_hops() {
        let p = net(vec![FlowProfile::new("f", 1.0, 2.0, 1.0, &["a", "b"])], &["a", "b"]);
        let sol = no_reprofiling(&p);
        for step in [1e-3, 1e-4] {
            let rep = simulate(
                &p,
                &sol,
                &SimConfig {
                    step: Some(step),
                    ..SimConfig::default()
                },
            )
            .unwrap();
            assert!(rep.is_clean(), "{:?}", rep.violations);
            assert!(rep.flows[0].max_delay <= 1.0 + 2.0 * step);
            let hop2 = rep.buffers.iter().find(|b| b.kind == BufferKind::Reprofiler).unwrap();
            assert!(hop2.max_backlog <= hop2.bound + hop2.tolerance);
        }
    }

    #[test]
    fn halving_step_is_consistent() {
        let p = net(
            vec![
                FlowProfile::new("x", 2.0, 3.0, 1.0, &["a", "b"]),
                FlowProfile::new("y", 1.0, 1.0, 0.5, &["b"]),
            ],
            &["a", "b"],
        );
        let sol = no_reprofiling(&p);
        let coarse = simulate(
            &p,
            &sol,
            &SimConfig {
                step: Some(2e-3),
                ..SimConfig::default()
            },
        )
        .unwrap();
        let fine = simulate(
            &p,
            &sol,
            &SimConfig {
                step: Some(1e-3),
                ..SimConfig::default()
            },
        )
        .unwrap();
        for (c, f) in coarse.flows.iter().zip(&fine.flows) {
            assert!(f.max_delay <= c.max_delay + coarse.step + 1e-12);
        }
    }

    #[test]
    fn tampered_solution_is_caught() {
        let p = net(
            vec![
                FlowProfile::new("x", 1.0, 2.0, 1.0, &["a", "b"]),
                FlowProfile::new("y", 1.0, 2.0, 1.0, &["b"]),
            ],
            &["a", "b"],
        );
        let sol = no_reprofiling(&p);
        let caps = link_bandwidths(&p, &sol).unwrap();
        let mut tight = sol.clone();
        for t in tight.deadlines.iter_mut().flatten() {
            *t *= 0.5;
        }
        let rep = simulate_with(
            &p,
            &tight,
            &caps,
            &SimConfig {
                step: Some(1e-3),
                ..SimConfig::default()
            },
        )
        .unwrap();
        assert!(!rep.is_clean());
    }

    #[test]
    fn other_sources_stay_within_bounds() {
        let p = net(
            vec![
                FlowProfile::new("x", 1.0, 2.0, 2.0, &["a", "b"]),
                FlowProfile::new("y", 3.0, 1.0, 1.0, &["b"]),
            ],
            &["a", "b"],
        );
        for sol in [full_reprofiling(&p), no_reprofiling(&p)] {
            for source in [SourceModel::PeriodicBurst, SourceModel::RandomOnOff { seed: 3 }] {
                let cfg = SimConfig {
                    step: Some(1e-3),
                    source,
                    ..SimConfig::default()
                };
                let rep = simulate(&p, &sol, &cfg).unwrap();
                assert!(rep.is_clean(), "{source:?}: {:?}", rep.violations);
            }
        }
    }

    #[test]
    fn config_errors() {
        let p = net(vec![FlowProfile::new("f", 1.0, 2.0, 1.0, &["a"])], &["a"]);
        let sol = no_reprofiling(&p);
        let bad = SimConfig {
            horizon: Some(0.5),
            ..SimConfig::default()
        };
        assert!(matches!(simulate(&p, &sol, &bad), Err(SimError::Config(_))));
        let bad = SimConfig {
            step: Some(0.0),
            ..SimConfig::default()
        };
        assert!(matches!(simulate(&p, &sol, &bad), Err(SimError::Config(_))));
    }

    #[test]
    fn report_serializes() {
        let p = net(vec![FlowProfile::new("f", 1.0, 2.0, 1.0, &["a"])], &["a"]);
        let rep = simulate(
            &p,
            &no_reprofiling(&p),
            &SimConfig {
                step: Some(1e-2),
                ..SimConfig::default()
            },
        )
        .unwrap();
        let json = rep.to_json().unwrap();
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
