//! Full reprofiling (FR) and no reprofiling (NR).

use crate::netmodel::{Problem, Solution};

/// Every flow gets `D = gamma * min(d, b/r)` and splits what is left of its
/// deadline evenly across its hops.
pub fn uniform_ratio(problem: &Problem, gamma: f64) -> Solution {
    let mut delays = Vec::with_capacity(problem.num_flows());
    let mut deadlines = Vec::with_capacity(problem.num_flows());
    for f in problem.flows() {
        let d = gamma * f.reprofiling_cap();
        debug_assert!(d <= f.deadline);
        let t = ((f.deadline - d) / f.hops() as f64).max(0.0);
        delays.push(d);
        deadlines.push(vec![t; f.hops()]);
    }
    Solution { delays, deadlines }
}

/// `D = min(d, b/r)`, residual deadline split evenly.
pub fn full_reprofiling(problem: &Problem) -> Solution {
    uniform_ratio(problem, 1.0)
}

/// `D = 0`, deadline split evenly.
pub fn no_reprofiling(problem: &Problem) -> Solution {
    uniform_ratio(problem, 0.0)
}
