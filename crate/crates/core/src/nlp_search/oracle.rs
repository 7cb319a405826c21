//! Exhaustive grid search for small instances.

use rayon::prelude::*;

use super::instance::Layout;
use super::optimize::{centrality, repair, variable_scale, FACE_TOL};
use super::NlpError;
use crate::bandwidth::link_bandwidths;
use crate::netmodel::{Problem, Solution};

/// Largest number of free variables the grid accepts.
pub const MAX_GRID_DIMS: usize = 4;
/// Largest number of grid points evaluated.
pub const MAX_GRID_POINTS: f64 = 5e7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub total: f64,
    pub solution: Solution,
    pub bandwidths: Vec<f64>,
    pub grid_points: usize,
}

/// `0, step, 2 step, ...` up to `hi`, with `hi` itself appended.
fn axis(hi: f64, step: f64) -> Vec<f64> {
    let n = (hi / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(hi)).collect();
    if hi - v[v.len() - 1] > 1e-12 * hi.max(1.0) {
        v.push(hi);
    }
    v
}

/// `(D, T)` candidates of one flow with the deadline met exactly.
fn flow_candidates(d: f64, cap: f64, hops: usize, step: f64) -> Vec<(f64, Vec<f64>)> {
    fn compositions(rest: f64, hops: usize, step: f64, prefix: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if hops == 1 {
            prefix.push(rest.max(0.0));
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for t in axis(rest, step) {
            prefix.push(t);
            compositions(rest - t, hops - 1, step, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for delay in axis(cap, step) {
        let mut ts = Vec::new();
        compositions(d - delay, hops, step, &mut Vec::new(), &mut ts);
        out.extend(ts.into_iter().map(|t| (delay, t)));
    }
    out
}

/// Visits every combination whose first flow takes candidate `first`,
/// calling `f` with the filled-in solution.
fn for_each_point(
    base: &Solution,
    free: &[usize],
    cands: &[Vec<(f64, Vec<f64>)>],
    first: usize,
    mut f: impl FnMut(&Solution),
) {
    let mut sol = base.clone();
    let mut idx = vec![0; free.len()];
    idx[0] = first;
    let set = |sol: &mut Solution, k: usize, c: usize| {
        let (d, t) = &cands[k][c];
        sol.delays[free[k]] = *d;
        sol.deadlines[free[k]].clone_from(t);
    };
    for (k, &c) in idx.iter().enumerate() {
        set(&mut sol, k, c);
    }
    loop {
        f(&sol);
        // Odometer over flows 1..
        let mut k = free.len();
        loop {
            if k <= 1 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < cands[k].len() {
                set(&mut sol, k, idx[k]);
                break;
            }
            idx[k] = 0;
            set(&mut sol, k, 0);
        }
    }
}

/// Minimum total bandwidth over a grid with absolute spacing `step`.
///
/// Single-hop flows are fixed at `D = 0`; every other flow meets its
/// deadline exactly. Among grid points within a relative `1e-9` of the
/// minimum, the one deepest inside the feasible set is returned.
pub fn grid_oracle(problem: &Problem, step: f64) -> Result<OracleOutcome, NlpError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(NlpError::Step(step));
    }
    let layout = Layout::new(problem);
    // Tight deadlines leave `hops` free values per reprofiled flow.
    let dims: usize = problem.flows().iter().filter(|f| f.hops() > 1).map(|f| f.hops()).sum();
    if dims > MAX_GRID_DIMS {
        return Err(NlpError::DimensionCap {
            dims,
            cap: MAX_GRID_DIMS,
        });
    }
    let mut base = Solution::empty(problem);
    let mut free = Vec::new();
    let mut cands = Vec::new();
    for (i, f) in problem.flows().iter().enumerate() {
        if f.hops() == 1 {
            base.deadlines[i][0] = f.deadline;
        } else {
            free.push(i);
            cands.push(flow_candidates(f.deadline, f.reprofiling_cap(), f.hops(), step));
        }
    }
    let points: f64 = cands.iter().map(|c| c.len() as f64).product();
    if points > MAX_GRID_POINTS {
        return Err(NlpError::GridTooLarge {
            points,
            cap: MAX_GRID_POINTS,
        });
    }
    let total = |s: &Solution| -> f64 { link_bandwidths(problem, s).map_or(f64::INFINITY, |c| c.iter().sum()) };
    if free.is_empty() {
        let bandwidths = link_bandwidths(problem, &base)?;
        return Ok(OracleOutcome {
            total: bandwidths.iter().sum(),
            solution: base,
            bandwidths,
            grid_points: 1,
        });
    }

    let best = (0..cands[0].len())
        .into_par_iter()
        .map(|c| {
            let mut m = f64::INFINITY;
            for_each_point(&base, &free, &cands, c, |s| m = m.min(total(s)));
            m
        })
        .reduce(|| f64::INFINITY, f64::min);

    let scale = variable_scale(problem, &layout);
    let cap = best * (1.0 + FACE_TOL);
    let (_, picked) = (0..cands[0].len())
        .into_par_iter()
        .map(|c| {
            let mut pick: (f64, Option<Solution>) = (f64::NEG_INFINITY, None);
            for_each_point(&base, &free, &cands, c, |s| {
                if total(s) <= cap {
                    let score = centrality(&layout.point(s), &scale);
                    if score > pick.0 || pick.1.is_none() {
                        pick = (score, Some(s.clone()));
                    }
                }
            });
            pick
        })
        // Candidates are visited in order, so ties keep the earliest.
        .reduce(
            || (f64::NEG_INFINITY, None),
            |a, b| match (&a.1, &b.1) {
                (None, _) => b,
                (_, None) => a,
                _ if b.0 > a.0 => b,
                _ => a,
            },
        );
    let mut solution = picked.unwrap_or(base);
    repair(problem, &mut solution);
    let bandwidths = link_bandwidths(problem, &solution)?;
    Ok(OracleOutcome {
        total: bandwidths.iter().sum(),
        solution,
        bandwidths,
        grid_points: points as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{FlowProfile, Network};

    #[test]
    fn axis_includes_endpoint() {
        assert_eq!(axis(1.0, 0.5), vec![0.0, 0.5, 1.0]);
        assert_eq!(axis(1.0, 0.3).last(), Some(&1.0));
        assert_eq!(axis(1.0, 0.3).len(), 5);
        assert_eq!(axis(0.0, 0.1), vec![0.0]);
    }

    #[test]
    fn candidates_meet_deadline() {
        let c = flow_candidates(1.0, 0.5, 3, 0.25);
        for (d, t) in &c {
            assert!((d + t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(t.iter().all(|&x| x >= 0.0));
        }
        // D in {0, .25, .5}; T1, T2 compositions of 1, .75, .5.
        assert_eq!(c.len(), 15 + 10 + 6);
    }

    #[test]
    fn single_flow_two_hops() {
        // Each link needs b / (D + T_j); D = d leaves both at 2.
        let net = Network::new(
            vec!["a".into(), "b".into()],
            vec![FlowProfile::new("f", 1.0, 2.0, 1.0, &["a", "b"])],
        );
        let p = net.to_problem().unwrap();
        let out = grid_oracle(&p, 0.05).unwrap();
        assert!((out.total - 4.0).abs() < 1e-9);
        assert!(out.solution.check(&p).is_ok());
    }

    #[test]
    fn caps_are_enforced() {
        let net = Network::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                FlowProfile::new("x", 1.0, 1.0, 1.0, &["a", "b", "c"]),
                FlowProfile::new("y", 1.0, 1.0, 1.0, &["b", "c"]),
            ],
        );
        let p = net.to_problem().unwrap();
        assert!(matches!(
            grid_oracle(&p, 0.1),
            Err(NlpError::DimensionCap { dims: 5, .. })
        ));
        assert!(matches!(grid_oracle(&p, 0.0), Err(NlpError::Step(_))));
    }
}
