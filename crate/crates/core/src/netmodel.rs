//! Flows, links, solutions and their file formats.
//!
//! [`Network`] is the serializable description (string ids, JSON or a CSV
//! pair). Solvers work on a [`Problem`], the validated and indexed form in
//! which links and flows are addressed by position.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{TokenBucket, TOLERANCE};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network: {}", join_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv row {row}: {reason}")]
    CsvRow { row: usize, reason: String },
    #[error("deadline infeasible under packet model for flow {flow} (effective deadline {deadline})")]
    PacketInfeasible { flow: String, deadline: f64 },
    #[error("deadline infeasible under packet model (effective deadline {0})")]
    PacketDeadline(f64),
    #[error("relative improvement {0} outside [0, 1)")]
    GainOutOfRange(f64),
    #[error("solution does not match network: {0}")]
    SolutionMismatch(String),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    DuplicateLink(String),
    DuplicateFlow(String),
    EmptyPath(String),
    UnknownLink { flow: String, link: String },
    CyclicPath(String),
    NonPositiveRate(String),
    NegativeBurst(String),
    NonPositiveDeadline(String),
    NonFinite(String),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateLink(l) => write!(f, "duplicate link {l}"),
            Self::DuplicateFlow(id) => write!(f, "duplicate flow {id}"),
            Self::EmptyPath(id) => write!(f, "flow {id}: empty path"),
            Self::UnknownLink { flow, link } => write!(f, "flow {flow}: unknown link {link}"),
            Self::CyclicPath(id) => write!(f, "flow {id}: cyclic path"),
            Self::NonPositiveRate(id) => write!(f, "flow {id}: non-positive rate"),
            Self::NegativeBurst(id) => write!(f, "flow {id}: negative burst"),
            Self::NonPositiveDeadline(id) => write!(f, "flow {id}: non-positive deadline"),
            Self::NonFinite(id) => write!(f, "flow {id}: non-finite parameter"),
        }
    }
}

/// A token-bucket regulated flow `(r, b)` with end-to-end deadline `d` and a
/// route given as an ordered list of link ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProfile {
    pub id: String,
    #[serde(rename = "r")]
    pub rate: f64,
    #[serde(rename = "b")]
    pub burst: f64,
    #[serde(rename = "d")]
    pub deadline: f64,
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl FlowProfile {
    pub fn new(id: impl Into<String>, rate: f64, burst: f64, deadline: f64, path: &[&str]) -> Self {
        Self {
            id: id.into(),
            rate,
            burst,
            deadline,
            path: path.iter().map(|s| s.to_string()).collect(),
            class: None,
        }
    }

    pub fn with_class(mut self, class: impl Into<String>) -> Self {
        self.class = Some(class.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub links: Vec<String>,
    pub flows: Vec<FlowProfile>,
}

impl Network {
    pub fn new(links: Vec<String>, flows: Vec<FlowProfile>) -> Self {
        Self { links, flows }
    }

    /// Lists every consistency problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<ValidationIssue>> {
        let mut issues = Vec::new();
        let mut links = HashSet::new();
        for l in &self.links {
            if !links.insert(l.as_str()) {
                issues.push(ValidationIssue::DuplicateLink(l.clone()));
            }
        }
        let mut ids = HashSet::new();
        for f in &self.flows {
            if !ids.insert(f.id.as_str()) {
                issues.push(ValidationIssue::DuplicateFlow(f.id.clone()));
            }
            if !(f.rate.is_finite() && f.burst.is_finite() && f.deadline.is_finite()) {
                issues.push(ValidationIssue::NonFinite(f.id.clone()));
            }
            if !(f.rate > 0.0) {
                issues.push(ValidationIssue::NonPositiveRate(f.id.clone()));
            }
            if f.burst < 0.0 {
                issues.push(ValidationIssue::NegativeBurst(f.id.clone()));
            }
            if !(f.deadline > 0.0) {
                issues.push(ValidationIssue::NonPositiveDeadline(f.id.clone()));
            }
            if f.path.is_empty() {
                issues.push(ValidationIssue::EmptyPath(f.id.clone()));
            }
            let mut seen = HashSet::new();
            let mut cyclic = false;
            for l in &f.path {
                if !links.contains(l.as_str()) {
                    issues.push(ValidationIssue::UnknownLink {
                        flow: f.id.clone(),
                        link: l.clone(),
                    });
                }
                cyclic |= !seen.insert(l.as_str());
            }
            if cyclic {
                issues.push(ValidationIssue::CyclicPath(f.id.clone()));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Validates and indexes the network.
    pub fn to_problem(&self) -> Result<Problem, NetError> {
        self.validate().map_err(NetError::Invalid)?;
        let index: HashMap<&str, usize> = self.links.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
        let flows: Vec<Flow> = self
            .flows
            .iter()
            .map(|f| Flow {
                rate: f.rate,
                burst: f.burst,
                deadline: f.deadline,
                path: f.path.iter().map(|l| index[l.as_str()]).collect(),
            })
            .collect();
        Ok(Problem::from_parts(
            self.links.clone(),
            self.flows.iter().map(|f| f.id.clone()).collect(),
            flows,
        ))
    }

    pub fn to_json(&self) -> Result<String, NetError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Writes the CSV pair: a one-column `id` table of links and a flow
    /// table `id,r,b,d,path,class` with `;`-separated paths.
    pub fn write_csv<W1: Write, W2: Write>(&self, links: W1, flows: W2) -> Result<(), NetError> {
        let mut lw = csv::Writer::from_writer(links);
        lw.write_record(["id"])?;
        for l in &self.links {
            lw.write_record([l])?;
        }
        lw.flush()?;
        let mut fw = csv::Writer::from_writer(flows);
        fw.write_record(["id", "r", "b", "d", "path", "class"])?;
        for f in &self.flows {
            fw.write_record([
                f.id.clone(),
                f.rate.to_string(),
                f.burst.to_string(),
                f.deadline.to_string(),
                f.path.join(";"),
                f.class.clone().unwrap_or_default(),
            ])?;
        }
        fw.flush()?;
        Ok(())
    }

    /// Reads the CSV pair written by [`Network::write_csv`]. An empty class
    /// column reads back as no class.
    pub fn read_csv<R1: Read, R2: Read>(links: R1, flows: R2) -> Result<Self, NetError> {
        let mut net = Network::default();
        let mut lr = csv::Reader::from_reader(links);
        for rec in lr.records() {
            let rec = rec?;
            net.links.push(rec.get(0).unwrap_or_default().to_string());
        }
        let mut fr = csv::Reader::from_reader(flows);
        for (row, rec) in fr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or_default();
            let num = |k: usize, name: &str| {
                field(k).parse::<f64>().map_err(|e| NetError::CsvRow {
                    row,
                    reason: format!("{name}: {e}"),
                })
            };
            let path = field(4);
            net.flows.push(FlowProfile {
                id: field(0).to_string(),
                rate: num(1, "r")?,
                burst: num(2, "b")?,
                deadline: num(3, "d")?,
                path: if path.is_empty() {
                    Vec::new()
                } else {
                    path.split(';').map(str::to_string).collect()
                },
                class: Some(field(5).to_string()).filter(|c| !c.is_empty()),
            });
        }
        Ok(net)
    }

    pub fn write_csv_files(&self, links: impl AsRef<Path>, flows: impl AsRef<Path>) -> Result<(), NetError> {
        self.write_csv(std::fs::File::create(links)?, std::fs::File::create(flows)?)
    }

    pub fn read_csv_files(links: impl AsRef<Path>, flows: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::read_csv(std::fs::File::open(links)?, std::fs::File::open(flows)?)
    }
}

/// Indexed flow: path entries are link positions in the owning [`Problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub rate: f64,
    pub burst: f64,
    pub deadline: f64,
    pub path: Vec<usize>,
}

impl Flow {
    pub fn token_bucket(&self) -> TokenBucket {
        TokenBucket {
            rate: self.rate,
            burst: self.burst,
        }
    }

    /// `b / r`, the delay at which reprofiling reaches the token rate.
    pub fn max_reprofiling_delay(&self) -> f64 {
        self.burst / self.rate
    }

    /// `min(d, b / r)`: the largest reprofiling delay the deadline allows.
    pub fn reprofiling_cap(&self) -> f64 {
        self.deadline.min(self.max_reprofiling_delay())
    }

    pub fn hops(&self) -> usize {
        self.path.len()
    }
}

/// A validated network with positional indices.
#[derive(Debug, Clone)]
pub struct Problem {
    link_ids: Vec<String>,
    flow_ids: Vec<String>,
    flows: Vec<Flow>,
    // (flow, hop position) pairs per link.
    members: Vec<Vec<(usize, usize)>>,
}

impl Problem {
    pub fn from_parts(link_ids: Vec<String>, flow_ids: Vec<String>, flows: Vec<Flow>) -> Self {
        let mut members = vec![Vec::new(); link_ids.len()];
        for (i, f) in flows.iter().enumerate() {
            for (h, &j) in f.path.iter().enumerate() {
                members[j].push((i, h));
            }
        }
        Self {
            link_ids,
            flow_ids,
            flows,
            members,
        }
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn flow(&self, i: usize) -> &Flow {
        &self.flows[i]
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn num_links(&self) -> usize {
        self.link_ids.len()
    }

    pub fn link_ids(&self) -> &[String] {
        &self.link_ids
    }

    pub fn flow_ids(&self) -> &[String] {
        &self.flow_ids
    }

    /// `(flow, hop)` pairs of the flows crossing link `j`, in flow order.
    pub fn members(&self, j: usize) -> &[(usize, usize)] {
        &self.members[j]
    }

    /// Number of distinct links touched by the flows crossing link `j`.
    pub fn reach(&self, j: usize) -> usize {
        let mut links: HashSet<usize> = HashSet::new();
        for &(i, _) in &self.members[j] {
            links.extend(self.flows[i].path.iter().copied());
        }
        links.len()
    }
}

/// Reprofiling delay per flow and local deadline per hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub delays: Vec<f64>,
    pub deadlines: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionIssue {
    Shape,
    NegativeDelay(usize),
    DelayAboveCap(usize),
    NegativeDeadline { flow: usize, hop: usize },
    DeadlineExceeded { flow: usize, total: f64 },
}

impl Solution {
    pub fn empty(problem: &Problem) -> Self {
        Self {
            delays: vec![0.0; problem.num_flows()],
            deadlines: problem.flows().iter().map(|f| vec![0.0; f.hops()]).collect(),
        }
    }

    /// `T + D` of flow `i` at hop `h`.
    pub fn inflection(&self, i: usize, h: usize) -> f64 {
        self.deadlines[i][h] + self.delays[i]
    }

    /// `sum_j T_ij + D_i`.
    pub fn end_to_end(&self, i: usize) -> f64 {
        self.deadlines[i].iter().sum::<f64>() + self.delays[i]
    }

    /// Checks `D >= 0`, `D <= b/r`, `T >= 0` and `sum T + D <= d`, with a
    /// relative tolerance of `1e-9`.
    pub fn check(&self, problem: &Problem) -> Result<(), Vec<SolutionIssue>> {
        if self.delays.len() != problem.num_flows()
            || self.deadlines.len() != problem.num_flows()
            || self
                .deadlines
                .iter()
                .zip(problem.flows())
                .any(|(t, f)| t.len() != f.hops())
        {
            return Err(vec![SolutionIssue::Shape]);
        }
        let mut issues = Vec::new();
        for (i, f) in problem.flows().iter().enumerate() {
            let tol = TOLERANCE * f.deadline.max(f.max_reprofiling_delay()).max(1.0);
            let d = self.delays[i];
            if !(d >= -tol) {
                issues.push(SolutionIssue::NegativeDelay(i));
            }
            if d > f.max_reprofiling_delay() + tol {
                issues.push(SolutionIssue::DelayAboveCap(i));
            }
            for (h, &t) in self.deadlines[i].iter().enumerate() {
                if !(t >= -tol) {
                    issues.push(SolutionIssue::NegativeDeadline { flow: i, hop: h });
                }
            }
            let total = self.end_to_end(i);
            if !(total <= f.deadline + tol) {
                issues.push(SolutionIssue::DeadlineExceeded { flow: i, total });
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

/// Per-flow entry of a solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAssignment {
    pub id: String,
    #[serde(rename = "D")]
    pub reprofiling_delay: f64,
    #[serde(rename = "T")]
    pub local_deadlines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkAllocation {
    pub id: String,
    #[serde(rename = "C")]
    pub bandwidth: f64,
}

/// On-disk solution: `{method, W, flows: [{id, D, T}], links: [{id, C}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub method: String,
    #[serde(rename = "W")]
    pub total_bandwidth: f64,
    pub flows: Vec<FlowAssignment>,
    pub links: Vec<LinkAllocation>,
}

impl SolutionFile {
    pub fn new(method: &str, problem: &Problem, solution: &Solution, bandwidths: &[f64]) -> Self {
        Self {
            method: method.to_string(),
            total_bandwidth: bandwidths.iter().sum(),
            flows: problem
                .flow_ids()
                .iter()
                .enumerate()
                .map(|(i, id)| FlowAssignment {
                    id: id.clone(),
                    reprofiling_delay: solution.delays[i],
                    local_deadlines: solution.deadlines[i].clone(),
                })
                .collect(),
            links: problem
                .link_ids()
                .iter()
                .zip(bandwidths)
                .map(|(id, &c)| LinkAllocation {
                    id: id.clone(),
                    bandwidth: c,
                })
                .collect(),
        }
    }

    /// Rebuilds the positional solution, matching flows by id.
    pub fn to_solution(&self, problem: &Problem) -> Result<Solution, NetError> {
        let by_id: HashMap<&str, &FlowAssignment> = self.flows.iter().map(|f| (f.id.as_str(), f)).collect();
        let mut sol = Solution::empty(problem);
        for (i, id) in problem.flow_ids().iter().enumerate() {
            let a = by_id
                .get(id.as_str())
                .ok_or_else(|| NetError::SolutionMismatch(format!("missing flow {id}")))?;
            if a.local_deadlines.len() != problem.flow(i).hops() {
                return Err(NetError::SolutionMismatch(format!(
                    "flow {id}: {} local deadlines for {} hops",
                    a.local_deadlines.len(),
                    problem.flow(i).hops()
                )));
            }
            sol.delays[i] = a.reprofiling_delay;
            sol.deadlines[i] = a.local_deadlines.clone();
        }
        Ok(sol)
    }
}

/// Result of [`aggregate`]: the merged network and, for each merged flow,
/// the ids of the original flows it stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub network: Network,
    pub members: Vec<Vec<String>>,
}

/// Merges flows sharing both path and deadline into one flow whose token
/// bucket is the sum of theirs. Merged ids join the member ids with `+`.
pub fn aggregate(net: &Network) -> Aggregation {
    let mut slot: HashMap<(Vec<String>, u64), usize> = HashMap::new();
    let mut flows: Vec<FlowProfile> = Vec::new();
    let mut members: Vec<Vec<String>> = Vec::new();
    for f in &net.flows {
        let key = (f.path.clone(), f.deadline.to_bits());
        match slot.get(&key) {
            Some(&k) => {
                let agg = &mut flows[k];
                agg.rate += f.rate;
                agg.burst += f.burst;
                if agg.class != f.class {
                    agg.class = None;
                }
                members[k].push(f.id.clone());
            }
            None => {
                slot.insert(key, flows.len());
                flows.push(f.clone());
                members.push(vec![f.id.clone()]);
            }
        }
    }
    for (f, m) in flows.iter_mut().zip(&members) {
        if m.len() > 1 {
            f.id = m.join("+");
        }
    }
    Aggregation {
        network: Network::new(net.links.clone(), flows),
        members,
    }
}

/// Packet sizes used by the packet-model deadline correction.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketModel {
    /// Largest packet of each flow, by flow position.
    pub flow_max_packet: Vec<f64>,
    /// Largest packet over all flows.
    pub max_packet: f64,
}

/// Deadline left for the fluid model once packetization and non-preemption
/// are accounted for: `d - (hops - 1) l_i / R_i - sum_j l / C_j`.
pub fn packet_adjusted_deadline(
    flow: &Flow,
    flow_max_packet: f64,
    reprofiling_rate: f64,
    max_packet: f64,
    link_bandwidths: &[f64],
) -> Result<f64, NetError> {
    let packetization = (flow.hops() as f64 - 1.0) * flow_max_packet / reprofiling_rate;
    let blocking: f64 = flow.path.iter().map(|&j| max_packet / link_bandwidths[j]).sum();
    let left = flow.deadline - packetization - blocking;
    if left >= 0.0 {
        Ok(left)
    } else {
        Err(NetError::PacketDeadline(left))
    }
}

/// Outcome of [`solve_with_packet_model`].
#[derive(Debug, Clone)]
pub struct PacketSolve {
    pub network: Network,
    pub solution: Solution,
    pub bandwidths: Vec<f64>,
    pub rounds: usize,
}

/// Solves under packet-model deadlines by fixed-point iteration: solve the
/// fluid problem, shrink each deadline using the resulting link bandwidths
/// and reprofiling rates, and re-solve, for at most `max_rounds` rounds or
/// until total bandwidth moves by less than 0.1%.
///
/// The first round starts from an unadjusted solve. Flows without
/// reprofiling use the slowest link on their path as their guaranteed rate.
pub fn solve_with_packet_model<F>(
    net: &Network,
    model: &PacketModel,
    max_rounds: usize,
    mut solve: F,
) -> Result<PacketSolve, NetError>
where
    F: FnMut(&Network) -> Result<(Solution, Vec<f64>), NetError>,
{
    let problem = net.to_problem()?;
    let (mut solution, mut bandwidths) = solve(net)?;
    let mut adjusted = net.clone();
    let mut rounds = 0;
    let mut last_total = bandwidths.iter().sum::<f64>();
    while rounds < max_rounds.max(1) {
        rounds += 1;
        for (i, f) in problem.flows().iter().enumerate() {
            let d = solution.delays[i];
            let rate = if d > 0.0 {
                f.burst / d
            } else {
                f.path.iter().map(|&j| bandwidths[j]).fold(f64::INFINITY, f64::min)
            };
            let left = packet_adjusted_deadline(f, model.flow_max_packet[i], rate, model.max_packet, &bandwidths)
                .ok()
                .filter(|&left| left > 0.0)
                .ok_or_else(|| NetError::PacketInfeasible {
                    flow: problem.flow_ids()[i].clone(),
                    deadline: f.deadline,
                })?;
            adjusted.flows[i].deadline = left;
        }
        let (s, c) = solve(&adjusted)?;
        solution = s;
        bandwidths = c;
        let total = bandwidths.iter().sum::<f64>();
        let moved = (total - last_total).abs() / last_total.max(f64::MIN_POSITIVE);
        last_total = total;
        if moved < 1e-3 {
            break;
        }
    }
    Ok(PacketSolve {
        network: adjusted,
        solution,
        bandwidths,
        rounds,
    })
}

/// Relative gain in flow count, `x / (1 - x)`, implied by a relative
/// bandwidth saving `x` when bandwidth scales linearly with flow count.
pub fn flow_count_gain(x: f64) -> Result<f64, NetError> {
    if !(0.0..1.0).contains(&x) {
        return Err(NetError::GainOutOfRange(x));
    }
    Ok(x / (1.0 - x))
}
