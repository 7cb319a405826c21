use std::fmt;

use anyhow::{Context, Result};
use clap::ValueEnum;
use reprofile_core::bandwidth::{link_bandwidths, BandwidthError};
use reprofile_core::baselines::{full_reprofiling, no_reprofiling};
use reprofile_core::greedy::{explore, GreedyConfig, GreedyError};
use reprofile_core::netmodel::{NetError, Problem, Solution};
use reprofile_core::nlp_search::{grid_oracle, search, NlpError, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Greedy,
    Fr,
    Nr,
    Nlp,
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Greedy => "greedy",
            Method::Fr => "fr",
            Method::Nr => "nr",
            Method::Nlp => "nlp",
            Method::Oracle => "oracle",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub greedy: GreedyConfig,
    pub seed: u64,
    pub step: f64,
}

/// Marks errors meaning no feasible allocation exists; the binary exits
/// with status 2 on them.
#[derive(Debug)]
pub struct Infeasible(pub String);

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "infeasible: {}", self.0)
    }
}

impl std::error::Error for Infeasible {}

fn classify_bandwidth(e: BandwidthError) -> anyhow::Error {
    match e {
        BandwidthError::Unbounded { .. } => Infeasible(e.to_string()).into(),
        e => e.into(),
    }
}

pub fn classify_net(e: NetError) -> anyhow::Error {
    match e {
        NetError::PacketInfeasible { .. } | NetError::PacketDeadline(_) => Infeasible(e.to_string()).into(),
        e => e.into(),
    }
}

pub fn solve(problem: &Problem, method: Method, params: &MethodParams) -> Result<(Solution, Vec<f64>)> {
    let solution = match method {
        Method::Fr => full_reprofiling(problem),
        Method::Nr => no_reprofiling(problem),
        Method::Greedy => match explore(problem, &params.greedy) {
            Ok(out) => out.solution,
            Err(GreedyError::Bandwidth(e)) => return Err(classify_bandwidth(e)),
            Err(e) => return Err(e.into()),
        },
        Method::Nlp => {
            let cfg = SearchConfig {
                seed: params.seed,
                ..SearchConfig::default()
            };
            match search(problem, &cfg) {
                Ok(out) => out.solution,
                Err(NlpError::Bandwidth(e)) => return Err(classify_bandwidth(e)),
                Err(e) => return Err(e.into()),
            }
        }
        Method::Oracle => match grid_oracle(problem, params.step) {
            Ok(out) => out.solution,
            Err(NlpError::Bandwidth(e)) => return Err(classify_bandwidth(e)),
            Err(e) => return Err(e).context("grid oracle"),
        },
    };
    if let Err(issues) = solution.check(problem) {
        let text: Vec<String> = issues.iter().map(|i| format!("{i:?}")).collect();
        return Err(Infeasible(text.join("; ")).into());
    }
    let bandwidths = link_bandwidths(problem, &solution).map_err(classify_bandwidth)?;
    Ok((solution, bandwidths))
}
