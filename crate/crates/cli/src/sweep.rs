//! Sweep CSV, schema version 1.
//!
//! One row per `(instance, method)` with `row = instance`, then per method a
//! `mean` row and a `ci95` row holding the normal-approximation half-width
//! `1.96 s / sqrt(N)` over the instances that succeeded. Columns:
//!
//! | column | meaning |
//! |---|---|
//! | `schema_version` | always `1` |
//! | `row` | `instance`, `mean` or `ci95` |
//! | `scenario` | generator name |
//! | `instance` | instance index, empty on aggregate rows |
//! | `seed` | instance seed (`--seed` plus the index) |
//! | `m`, `n` | generator size parameters; `n` is empty for topology files |
//! | `flows` | flows solved, after aggregation |
//! | `method` | `greedy`, `fr`, `nr`, `nlp` or `oracle` |
//! | `W` | total bandwidth |
//! | `runtime_s` | solve time in seconds, empty with `--no-runtime` |
//! | `improvement_vs_fr`, `improvement_vs_nr` | `(W_base - W) / W_base` |
//! | `ratios` | `;`-separated `D / min(d, b/r)` per flow, in flow order |
//! | `classes` | `;`-separated flow classes aligned with `ratios` |
//! | `error` | failure message; numeric columns are then empty |

use std::time::Instant;

use anyhow::Result;
use rayon::prelude::*;
use reprofile_core::bandwidth::link_bandwidths;
use reprofile_core::baselines::{full_reprofiling, no_reprofiling};
use reprofile_core::netmodel::{Network, Problem, Solution};
use serde::Serialize;

use crate::methods::{solve, Method, MethodParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Row {
    pub schema_version: u32,
    pub row: String,
    pub scenario: String,
    pub instance: Option<usize>,
    pub seed: Option<u64>,
    pub m: usize,
    pub n: Option<usize>,
    pub flows: Option<usize>,
    pub method: String,
    #[serde(rename = "W")]
    pub total: Option<f64>,
    pub runtime_s: Option<f64>,
    pub improvement_vs_fr: Option<f64>,
    pub improvement_vs_nr: Option<f64>,
    pub ratios: String,
    pub classes: String,
    pub error: String,
}

pub struct SweepSpec<'a> {
    pub scenario: &'a str,
    pub m: usize,
    pub n: Option<usize>,
    pub instances: usize,
    pub seed: u64,
    pub methods: &'a [Method],
    pub params: MethodParams,
    pub timing: bool,
}

fn ratios(problem: &Problem, sol: &Solution) -> String {
    problem
        .flows()
        .iter()
        .zip(&sol.delays)
        .map(|(f, d)| {
            let cap = f.reprofiling_cap();
            let r = if cap > 0.0 { d / cap } else { 0.0 };
            format!("{r}")
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn instance_rows(spec: &SweepSpec<'_>, k: usize, seed: u64, network: Result<Network>) -> Vec<Row> {
    let base = Row {
        schema_version: SCHEMA_VERSION,
        row: "instance".into(),
        scenario: spec.scenario.into(),
        instance: Some(k),
        seed: Some(seed),
        m: spec.m,
        n: spec.n,
        flows: None,
        method: String::new(),
        total: None,
        runtime_s: None,
        improvement_vs_fr: None,
        improvement_vs_nr: None,
        ratios: String::new(),
        classes: String::new(),
        error: String::new(),
    };
    let failed = |method: Method, e: &anyhow::Error| Row {
        method: method.to_string(),
        error: format!("{e:#}"),
        ..base.clone()
    };
    let prepared = network.and_then(|net| {
        let problem = net.to_problem()?;
        Ok((net, problem))
    });
    let (net, problem) = match prepared {
        Ok(x) => x,
        Err(e) => return spec.methods.iter().map(|&m| failed(m, &e)).collect(),
    };
    let classes = net
        .flows
        .iter()
        .map(|f| f.class.clone().unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";");
    let baseline = |s: Solution| link_bandwidths(&problem, &s).map(|c| c.iter().sum::<f64>()).ok();
    let w_fr = baseline(full_reprofiling(&problem));
    let w_nr = baseline(no_reprofiling(&problem));
    let gain = |base: Option<f64>, w: f64| base.filter(|&b| b > 0.0).map(|b| (b - w) / b);
    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            match solve(&problem, method, &spec.params) {
                Ok((sol, c)) => {
                    let w: f64 = c.iter().sum();
                    Row {
                        method: method.to_string(),
                        flows: Some(problem.num_flows()),
                        total: Some(w),
                        runtime_s: spec.timing.then(|| start.elapsed().as_secs_f64()),
                        improvement_vs_fr: gain(w_fr, w),
                        improvement_vs_nr: gain(w_nr, w),
                        ratios: ratios(&problem, &sol),
                        classes: classes.clone(),
                        ..base.clone()
                    }
                }
                Err(e) => failed(method, &e),
            }
        })
        .collect()
}

fn mean_ci(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(1.96 * (var / n).sqrt()))
}

/// Runs every instance in parallel; rows come out in instance order.
pub fn run<F>(spec: &SweepSpec<'_>, generate: F) -> Vec<Row>
where
    F: Fn(u64) -> Result<Network> + Sync,
{
    let mut rows: Vec<Row> = (0..spec.instances)
        .into_par_iter()
        .map(|k| {
            let seed = spec.seed.wrapping_add(k as u64);
            instance_rows(spec, k, seed, generate(seed))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut summary = Vec::new();
    for &method in spec.methods {
        let ok: Vec<&Row> = rows
            .iter()
            .filter(|r| r.method == method.to_string() && r.error.is_empty())
            .collect();
        let column = |f: fn(&Row) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let stats = [
            mean_ci(&column(|r| r.total)),
            mean_ci(&column(|r| r.runtime_s)),
            mean_ci(&column(|r| r.improvement_vs_fr)),
            mean_ci(&column(|r| r.improvement_vs_nr)),
        ];
        for (label, pick) in [("mean", 0usize), ("ci95", 1)] {
            let get = |s: &(Option<f64>, Option<f64>)| if pick == 0 { s.0 } else { s.1 };
            summary.push(Row {
                schema_version: SCHEMA_VERSION,
                row: label.into(),
                scenario: spec.scenario.into(),
                instance: None,
                seed: None,
                m: spec.m,
                n: spec.n,
                flows: None,
                method: method.to_string(),
                total: get(&stats[0]),
                runtime_s: get(&stats[1]),
                improvement_vs_fr: get(&stats[2]),
                improvement_vs_nr: get(&stats[3]),
                ratios: String::new(),
                classes: String::new(),
                error: String::new(),
            });
        }
    }
    rows.extend(summary);
    rows
}

pub fn write_csv<W: std::io::Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
