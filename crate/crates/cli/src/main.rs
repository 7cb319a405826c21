//! `reprofile`: generate networks, allocate bandwidth, validate by
//! simulation, report buffers and run sweeps.
//!
//! Exit status: 0 on success, 1 on errors, 2 when no feasible allocation
//! exists, 3 when validation finds violations.

mod methods;
mod sweep;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use reprofile_core::buffers::buffer_report_with;
use reprofile_core::greedy::GreedyConfig;
use reprofile_core::netmodel::{
    aggregate, flow_count_gain, solve_with_packet_model, Network, PacketModel, SolutionFile,
};
use reprofile_core::scenarios::{
    gen_interdc, gen_parking_lot, gen_tandem, gen_tsn, DeadlineMode, InterDcConfig, ProfileConfig, RateCdfs,
    SyntheticConfig, Topology, TsnConfig,
};
use reprofile_core::simulator::{simulate_with, SimConfig, SourceModel};

use methods::{classify_net, Infeasible, Method, MethodParams};

#[derive(Parser)]
#[command(name = "reprofile", version, about = "Bandwidth allocation with traffic reprofiling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate bandwidth for a network file.
    Solve(SolveArgs),
    /// Generate a network file.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a solution and check delays and backlogs.
    Validate(ValidateArgs),
    /// Buffer bounds of a solution.
    Buffers {
        network: PathBuf,
        solution: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve many generated instances and write a CSV.
    Sweep(SweepArgs),
    /// Flow-count gain x / (1 - x) of a relative bandwidth saving x.
    Gain { saving: f64 },
}

#[derive(Args, Clone, Copy)]
struct MethodArgs {
    /// Greedy exploration rounds.
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    /// Greedy interior samples per round.
    #[arg(long = "K", default_value_t = 4)]
    k: usize,
    /// Greedy relative improvement threshold.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Grid spacing of the oracle.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

impl MethodArgs {
    fn params(&self, seed: u64) -> MethodParams {
        MethodParams {
            greedy: GreedyConfig {
                iterations: self.l,
                samples: self.k,
                eps: self.eps,
                ..GreedyConfig::default()
            },
            seed,
            step: self.step,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    network: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Greedy)]
    method: Method,
    #[command(flatten)]
    tuning: MethodArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Merge flows sharing path and deadline before solving.
    #[arg(long)]
    aggregate: bool,
    /// Packet size for every flow; enables the packet-model deadline
    /// correction.
    #[arg(long)]
    packet_size: Option<f64>,
    /// Solution output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the network actually solved (after aggregation or packet
    /// correction).
    #[arg(long)]
    network_out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    network: PathBuf,
    solution: PathBuf,
    /// Time step; 1e-4 of the smallest deadline when absent.
    #[arg(long)]
    step: Option<f64>,
    /// Simulated time; five times the largest deadline when absent.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum, default_value_t = Source::GreedyBurst)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Greedy, Method::Fr, Method::Nr])]
    methods: Vec<Method>,
    #[command(flatten)]
    tuning: MethodArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    aggregate: bool,
    /// Leave runtimes empty so identical runs give identical files.
    #[arg(long)]
    no_runtime: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    /// Flows (tandem, parking lot, interdc) or applications (tsn).
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Links of the tandem and parking lot.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Synthetic profile configuration.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    config: u8,
    #[arg(long, value_enum, default_value_t = Deadlines::PerHopFixed)]
    deadline_mode: Deadlines,
    /// Deadline scale.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Edge-list topology for tsn and interdc.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Rate CDF for interdc.
    #[arg(long)]
    rate_cdf: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scenario {
    Tandem,
    ParkingLot,
    Tsn,
    Interdc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Deadlines {
    PerHopFixed,
    EndToEndFixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Source {
    GreedyBurst,
    PeriodicBurst,
    OnOff,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Violations found by `validate`; exit status 3.
#[derive(Debug)]
struct Violations(usize);

impl std::fmt::Display for Violations {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violation(s)", self.0)
    }
}

impl std::error::Error for Violations {}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    writeln!(w, "{text}")?;
    Ok(())
}

fn read_network(path: &Path) -> Result<Network> {
    Network::read_json(path).with_context(|| format!("reading {}", path.display()))
}

/// Loads files once and returns a generator keyed by seed.
fn scenario_generator(args: &ScenarioArgs) -> Result<Box<dyn Fn(u64) -> Result<Network> + Sync>> {
    let profile = if args.config == 1 {
        ProfileConfig::One
    } else {
        ProfileConfig::Two
    };
    let deadline_mode = match args.deadline_mode {
        Deadlines::PerHopFixed => DeadlineMode::PerHopFixed,
        Deadlines::EndToEndFixed => DeadlineMode::EndToEndFixed,
    };
    let (m, n, omega) = (args.m, args.n, args.omega);
    let synthetic = move |seed| SyntheticConfig {
        m,
        n,
        profile,
        deadline_mode,
        omega,
        seed,
    };
    let topology = || -> Result<Topology> {
        let p = args
            .topology
            .as_ref()
            .context("--topology is required for this scenario")?;
        Topology::read(p).with_context(|| format!("reading {}", p.display()))
    };
    Ok(match args.scenario {
        Scenario::Tandem => Box::new(move |seed| Ok(gen_tandem(&synthetic(seed))?)),
        Scenario::ParkingLot => Box::new(move |seed| Ok(gen_parking_lot(&synthetic(seed))?)),
        Scenario::Tsn => {
            let topo = topology()?;
            Box::new(move |seed| {
                Ok(gen_tsn(
                    &topo,
                    &TsnConfig {
                        num_apps: m,
                        seed,
                        omega,
                    },
                )?)
            })
        }
        Scenario::Interdc => {
            let topo = topology()?;
            let p = args.rate_cdf.as_ref().context("--rate-cdf is required for interdc")?;
            let cdfs = RateCdfs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Box::new(move |seed| {
                Ok(gen_interdc(
                    &topo,
                    &cdfs,
                    &InterDcConfig {
                        num_flows: m,
                        seed,
                        omega,
                    },
                )?)
            })
        }
    })
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let mut net = read_network(&args.network)?;
    if args.aggregate {
        net = aggregate(&net).network;
    }
    let params = args.tuning.params(args.seed);
    let (net, solution, bandwidths) = match args.packet_size {
        None => {
            let problem = net.to_problem()?;
            let (s, c) = methods::solve(&problem, args.method, &params)?;
            (net, s, c)
        }
        Some(size) => {
            if !(size > 0.0) {
                bail!("packet size must be positive");
            }
            let model = PacketModel {
                flow_max_packet: vec![size; net.flows.len()],
                max_packet: size,
            };
            let mut inner: Option<anyhow::Error> = None;
            let result = solve_with_packet_model(&net, &model, 10, |n| {
                let problem = n.to_problem()?;
                methods::solve(&problem, args.method, &params).map_err(|e| {
                    let msg = e.to_string();
                    inner = Some(e);
                    reprofile_core::netmodel::NetError::SolutionMismatch(msg)
                })
            });
            match result {
                Ok(out) => (out.network, out.solution, out.bandwidths),
                Err(e) => return Err(inner.unwrap_or_else(|| classify_net(e))),
            }
        }
    };
    let problem = net.to_problem()?;
    let file = SolutionFile::new(&args.method.to_string(), &problem, &solution, &bandwidths);
    write_text(args.out.as_deref(), &serde_json::to_string_pretty(&file)?)?;
    if let Some(p) = &args.network_out {
        net.write_json(p)?;
    }
    eprintln!(
        "{}: W = {} over {} links, {} flows",
        args.method,
        file.total_bandwidth,
        problem.num_links(),
        problem.num_flows()
    );
    Ok(())
}

fn load_solution(
    network: &Path,
    solution: &Path,
) -> Result<(
    reprofile_core::netmodel::Problem,
    reprofile_core::netmodel::Solution,
    Vec<f64>,
)> {
    let problem = read_network(network)?.to_problem()?;
    let text = std::fs::read_to_string(solution).with_context(|| format!("reading {}", solution.display()))?;
    let file: SolutionFile = serde_json::from_str(&text)?;
    let sol = file.to_solution(&problem)?;
    let by_id: std::collections::HashMap<&str, f64> = file.links.iter().map(|l| (l.id.as_str(), l.bandwidth)).collect();
    let capacities = problem
        .link_ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .context(format!("solution lacks link {id}"))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((problem, sol, capacities))
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let (problem, sol, capacities) = load_solution(&args.network, &args.solution)?;
    let source = match args.source {
        Source::GreedyBurst => SourceModel::GreedyBurst,
        Source::PeriodicBurst => SourceModel::PeriodicBurst,
        Source::OnOff => SourceModel::RandomOnOff { seed: args.seed },
    };
    let cfg = SimConfig {
        step: args.step,
        horizon: args.horizon,
        source,
    };
    let report = simulate_with(&problem, &sol, &capacities, &cfg)?;
    write_text(args.out.as_deref(), &report.to_json()?)?;
    eprintln!(
        "simulated {} steps of {}: {} violation(s)",
        report.steps,
        report.step,
        report.violations.len()
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(Violations(report.violations.len()).into())
    }
}

fn cmd_buffers(network: &Path, solution: &Path, format: Format, out: Option<&Path>) -> Result<()> {
    let (problem, sol, capacities) = load_solution(network, solution)?;
    let report = buffer_report_with(&problem, &sol, &capacities);
    match format {
        Format::Json => write_text(out, &report.to_json()?),
        Format::Csv => Ok(report.write_csv(output(out)?)?),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let generate = scenario_generator(&args.scenario)?;
    let aggregate_flows = args.aggregate;
    let generate = move |seed| -> Result<Network> {
        let net = generate(seed)?;
        Ok(if aggregate_flows { aggregate(&net).network } else { net })
    };
    let s = &args.scenario;
    let synthetic = matches!(s.scenario, Scenario::Tandem | Scenario::ParkingLot);
    let name = s
        .scenario
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let spec = sweep::SweepSpec {
        scenario: &name,
        m: s.m,
        n: synthetic.then_some(s.n),
        instances: args.instances,
        seed: args.seed,
        methods: &args.methods,
        params: args.tuning.params(args.seed),
        timing: !args.no_runtime,
    };
    let rows = sweep::run(&spec, generate);
    sweep::write_csv(&rows, output(args.out.as_deref())?)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    eprintln!("{} rows, {failed} failed", rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Generate { scenario, seed, out } => {
            let net = scenario_generator(&scenario)?(seed)?;
            write_text(out.as_deref(), &net.to_json()?)
        }
        Command::Validate(args) => cmd_validate(&args),
        Command::Buffers {
            network,
            solution,
            format,
            out,
        } => cmd_buffers(&network, &solution, format, out.as_deref()),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Gain { saving } => {
            println!("{}", flow_count_gain(saving)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Infeasible>().is_some() {
                ExitCode::from(2)
            } else if e.downcast_ref::<Violations>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
