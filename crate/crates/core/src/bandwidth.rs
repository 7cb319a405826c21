//! Per-link service curves and the minimum SCED link bandwidth.
//!
//! A flow with reprofiling delay `D` and local deadline `T` at a hop is
//! guaranteed the service curve
//!
//! ```text
//! beta(t) = 0                        t < T
//!         = (b / D) (t - T)          T <= t < T'
//!         = b + r (t - T')           t >= T'          (T' = T + D)
//! ```
//!
//! and a link is schedulable iff `C >= sup_t sum beta(t) / t`. The sup is
//! reached either at one of the inflection points `T'` or as `t -> inf`.

use thiserror::Error;

use crate::curves::{reprofiled_curve, Curve, CurveError, TokenBucket, TOLERANCE};
use crate::netmodel::{Problem, Solution};

#[derive(Debug, Error, PartialEq)]
pub enum BandwidthError {
    #[error("flow {flow}: invalid service assignment ({reason})")]
    InvalidAssignment { flow: usize, reason: &'static str },
    #[error("flow {flow} needs infinite bandwidth: burst due at time 0")]
    Unbounded { flow: usize },
    #[error("no flows on link")]
    EmptyLink,
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// The service curve parameters of one flow on one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkServiceAssignment {
    pub flow: usize,
    pub rate: f64,
    pub burst: f64,
    pub local_deadline: f64,
    pub delay: f64,
}

impl LinkServiceAssignment {
    pub fn new(flow: usize, rate: f64, burst: f64, local_deadline: f64, delay: f64) -> Result<Self, BandwidthError> {
        let bad = |reason| Err(BandwidthError::InvalidAssignment { flow, reason });
        if !(rate > 0.0 && rate.is_finite()) || !(burst >= 0.0 && burst.is_finite()) {
            return bad("token bucket");
        }
        let scale = (burst / rate).max(1.0);
        if !(local_deadline >= -TOLERANCE * scale) || !local_deadline.is_finite() {
            return bad("negative local deadline");
        }
        if !(delay >= -TOLERANCE * scale) || delay > burst / rate + TOLERANCE * scale {
            return bad("reprofiling delay outside [0, b/r]");
        }
        Ok(Self {
            flow,
            rate,
            burst,
            local_deadline: local_deadline.max(0.0),
            delay: delay.max(0.0),
        })
    }

    /// `T' = T + D`.
    pub fn inflection(&self) -> f64 {
        self.local_deadline + self.delay
    }

    /// Right-continuous value of the service curve.
    pub fn value(&self, t: f64) -> f64 {
        service_value(self.rate, self.burst, self.local_deadline, self.inflection(), t)
    }

    pub fn curve(&self) -> Result<Curve, BandwidthError> {
        let alpha = TokenBucket {
            rate: self.rate,
            burst: self.burst,
        };
        Ok(reprofiled_curve(&alpha, self.delay)?.shifted(self.local_deadline))
    }
}

/// Service curve value at `t` of a flow `(r, b)` whose curve starts at `start`
/// and reaches `b` at `inflection`. A zero-length ramp is a jump of `b`.
pub(crate) fn service_value(rate: f64, burst: f64, start: f64, inflection: f64, t: f64) -> f64 {
    if t < start {
        0.0
    } else if t < inflection {
        burst * (t - start) / (inflection - start)
    } else {
        burst + rate * (t - inflection)
    }
}

pub fn beta_curve(a: &LinkServiceAssignment) -> Result<Curve, BandwidthError> {
    a.curve()
}

/// Where the bandwidth requirement of a link is attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binding {
    /// Long-term stability, `C = sum r`.
    Stability,
    /// The inflection point of the flow at position `index` of the input.
    Inflection { index: usize, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkBandwidth {
    pub capacity: f64,
    pub binding: Binding,
    /// Slack at each assignment's inflection point, in input order.
    pub slacks: Vec<f64>,
}

/// Sum of the service curves at `t`.
pub fn aggregate_service(assignments: &[LinkServiceAssignment], t: f64) -> f64 {
    assignments.iter().map(|a| a.value(t)).sum()
}

/// `C* = max(sum r, max_k sum beta(T'_k) / T'_k)`. Ties between inflection
/// points go to the smallest `T'`; an inflection point tying with stability
/// is reported as binding.
pub fn min_link_bandwidth(assignments: &[LinkServiceAssignment]) -> Result<LinkBandwidth, BandwidthError> {
    if assignments.is_empty() {
        return Err(BandwidthError::EmptyLink);
    }
    let stability: f64 = assignments.iter().map(|a| a.rate).sum();
    let mut order: Vec<usize> = (0..assignments.len()).collect();
    order.sort_by(|&x, &y| {
        assignments[x]
            .inflection()
            .total_cmp(&assignments[y].inflection())
            .then(x.cmp(&y))
    });
    let mut loads = vec![0.0; assignments.len()];
    let mut best: Option<(f64, usize)> = None;
    for &k in &order {
        let p = assignments[k].inflection();
        let load = aggregate_service(assignments, p);
        loads[k] = load;
        if p <= 0.0 {
            if load > 0.0 {
                return Err(BandwidthError::Unbounded {
                    flow: assignments[k].flow,
                });
            }
            continue;
        }
        let ratio = load / p;
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, k));
        }
    }
    let (capacity, binding) = match best {
        Some((ratio, k)) if ratio >= stability => (
            ratio,
            Binding::Inflection {
                index: k,
                time: assignments[k].inflection(),
            },
        ),
        _ => (stability, Binding::Stability),
    };
    let slacks = assignments
        .iter()
        .zip(&loads)
        .map(|(a, load)| capacity * a.inflection() - load)
        .collect();
    Ok(LinkBandwidth {
        capacity,
        binding,
        slacks,
    })
}

/// `s_k = C* T'_k - sum_i beta_i(T'_k)`.
pub fn slack_at(assignments: &[LinkServiceAssignment], index: usize, capacity: f64) -> f64 {
    let p = assignments[index].inflection();
    capacity * p - aggregate_service(assignments, p)
}

/// Service assignments of the flows crossing link `j`, in membership order.
pub fn link_assignments(
    problem: &Problem,
    solution: &Solution,
    j: usize,
) -> Result<Vec<LinkServiceAssignment>, BandwidthError> {
    problem
        .members(j)
        .iter()
        .map(|&(i, h)| {
            let f = problem.flow(i);
            LinkServiceAssignment::new(i, f.rate, f.burst, solution.deadlines[i][h], solution.delays[i])
        })
        .collect()
}

/// Minimum bandwidth of every link; links without flows need none.
pub fn link_bandwidths(problem: &Problem, solution: &Solution) -> Result<Vec<f64>, BandwidthError> {
    (0..problem.num_links())
        .map(|j| {
            let a = link_assignments(problem, solution, j)?;
            if a.is_empty() {
                Ok(0.0)
            } else {
                Ok(min_link_bandwidth(&a)?.capacity)
            }
        })
        .collect()
}

/// How per-link bandwidths combine into the network objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Objective {
    #[default]
    Sum,
    Max,
}

impl Objective {
    pub fn reduce(self, bandwidths: &[f64]) -> f64 {
        match self {
            Objective::Sum => bandwidths.iter().sum(),
            Objective::Max => bandwidths.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// `sum_j C*_j` for a solution.
pub fn total_bandwidth(problem: &Problem, solution: &Solution) -> Result<f64, BandwidthError> {
    Ok(Objective::Sum.reduce(&link_bandwidths(problem, solution)?))
}
