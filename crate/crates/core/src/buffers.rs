//! Buffer bounds in the non-work-conserving setting: ingress and per-hop
//! reprofilers plus per-link schedulers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{link_bandwidths, service_value, BandwidthError};
use crate::netmodel::{NetError, Problem, Solution};

/// Reprofiled arrival curve `min(b t / D, b - r D + r t)`, or the token
/// bucket itself when `D = 0`. Right-continuous, zero at the origin.
pub fn sigma_value(rate: f64, burst: f64, delay: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if delay > 0.0 {
        (burst * t / delay).min(burst - rate * delay + rate * t)
    } else {
        burst + rate * t
    }
}

fn sigma_right_limit(rate: f64, burst: f64, delay: f64, t: f64) -> f64 {
    if t <= 0.0 && delay <= 0.0 {
        burst
    } else {
        sigma_value(rate, burst, delay, t.max(0.0))
    }
}

/// `sup_t { sum_i sigma_i(t) - C t }` over flows given as `(r, b, D)`.
///
/// The aggregate is concave, so the sup sits at the origin or at a knee
/// `t = D_i`.
pub fn scheduling_buffer_bound(flows: &[(f64, f64, f64)], capacity: f64) -> f64 {
    let at = |t: f64| -> f64 {
        flows
            .iter()
            .map(|&(r, b, d)| sigma_right_limit(r, b, d, t))
            .sum::<f64>()
            - capacity * t
    };
    flows.iter().map(|&(_, _, d)| at(d)).fold(at(0.0), f64::max).max(0.0)
}

/// `sup_t { sigma(t) - beta(t) }` for the reprofiler in front of a hop whose
/// upstream service curve starts at `upstream_deadline`.
///
/// Candidates are the start of the upstream curve, approached from the
/// left, the reprofiler knee and the upstream inflection point.
pub fn reprofiling_buffer_bound(rate: f64, burst: f64, delay: f64, upstream_deadline: f64) -> f64 {
    let t0 = upstream_deadline;
    let t1 = t0 + delay;
    let beta = |t: f64| service_value(rate, burst, t0, t1, t);
    let before = if t0 > 0.0 {
        sigma_value(rate, burst, delay, t0)
    } else {
        0.0
    };
    [delay, t1]
        .into_iter()
        .filter(|&t| t > 0.0)
        .map(|t| sigma_value(rate, burst, delay, t) - beta(t))
        .fold(before, f64::max)
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopBuffer {
    pub link: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBuffers {
    pub id: String,
    pub ingress: f64,
    /// Reprofilers in front of the second and later hops.
    pub hops: Vec<HopBuffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBuffers {
    pub id: String,
    pub capacity: f64,
    pub scheduling: f64,
    pub reprofiling: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferReport {
    pub flows: Vec<FlowBuffers>,
    pub links: Vec<LinkBuffers>,
    pub ingress_total: f64,
    pub total: f64,
}

/// All buffer bounds at the minimum bandwidths of `solution`.
pub fn buffer_report(problem: &Problem, solution: &Solution) -> Result<BufferReport, BandwidthError> {
    let capacities = link_bandwidths(problem, solution)?;
    Ok(buffer_report_with(problem, solution, &capacities))
}

/// All buffer bounds for the given link bandwidths.
pub fn buffer_report_with(problem: &Problem, solution: &Solution, capacities: &[f64]) -> BufferReport {
    let link_ids = problem.link_ids();
    let mut per_link_reprofiling = vec![0.0; problem.num_links()];
    let flows: Vec<FlowBuffers> = problem
        .flows()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let hops = (1..f.hops())
                .map(|h| {
                    let j = f.path[h];
                    let bound =
                        reprofiling_buffer_bound(f.rate, f.burst, solution.delays[i], solution.deadlines[i][h - 1]);
                    per_link_reprofiling[j] += bound;
                    HopBuffer {
                        link: link_ids[j].clone(),
                        bound,
                    }
                })
                .collect();
            FlowBuffers {
                id: problem.flow_ids()[i].clone(),
                ingress: f.burst,
                hops,
            }
        })
        .collect();
    let links: Vec<LinkBuffers> = (0..problem.num_links())
        .map(|j| {
            let members: Vec<(f64, f64, f64)> = problem
                .members(j)
                .iter()
                .map(|&(i, _)| {
                    let f = problem.flow(i);
                    (f.rate, f.burst, solution.delays[i])
                })
                .collect();
            let scheduling = scheduling_buffer_bound(&members, capacities[j]);
            LinkBuffers {
                id: link_ids[j].clone(),
                capacity: capacities[j],
                scheduling,
                reprofiling: per_link_reprofiling[j],
                total: scheduling + per_link_reprofiling[j],
            }
        })
        .collect();
    let ingress_total = flows.iter().map(|f| f.ingress).sum::<f64>();
    let total = ingress_total + links.iter().map(|l| l.total).sum::<f64>();
    BufferReport {
        flows,
        links,
        ingress_total,
        total,
    }
}

impl BufferReport {
    pub fn to_json(&self) -> Result<String, NetError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per bound: `kind,flow,link,bound`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NetError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "flow", "link", "bound"])?;
        for f in &self.flows {
            w.write_record(["ingress", &f.id, "", &f.ingress.to_string()])?;
            for h in &f.hops {
                w.write_record(["reprofiling", &f.id, &h.link, &h.bound.to_string()])?;
            }
        }
        for l in &self.links {
            w.write_record(["scheduling", "", &l.id, &l.scheduling.to_string()])?;
            w.write_record(["link_total", "", &l.id, &l.total.to_string()])?;
        }
        w.write_record(["ingress_total", "", "", &self.ingress_total.to_string()])?;
        w.write_record(["total", "", "", &self.total.to_string()])?;
        w.flush()?;
        Ok(())
    }
}
