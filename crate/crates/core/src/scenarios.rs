//! Seeded network generators: tandem, parking lot, TSN and inter-datacenter.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{FlowProfile, Network};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("topology line {line}: {reason}")]
    Topology { line: usize, reason: String },
    #[error("rate cdf: {0}")]
    RateCdf(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Per-hop deadline classes of the synthetic profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileConfig {
    /// `{0.01, 0.1, 1}`
    One,
    /// `{0.01, 0.025, 0.05, 0.1}`
    Two,
}

impl ProfileConfig {
    pub fn deadline_classes(self) -> &'static [f64] {
        match self {
            ProfileConfig::One => &[0.01, 0.1, 1.0],
            ProfileConfig::Two => &[0.01, 0.025, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineMode {
    /// `d = hops * d_h`.
    PerHopFixed,
    /// `d = d_h` whatever the path length.
    EndToEndFixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub m: usize,
    pub n: usize,
    pub profile: ProfileConfig,
    pub deadline_mode: DeadlineMode,
    pub omega: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(m: usize, n: usize, profile: ProfileConfig, seed: u64) -> Self {
        Self {
            m,
            n,
            profile,
            deadline_mode: DeadlineMode::PerHopFixed,
            omega: 1.0,
            seed,
        }
    }

    fn check(&self) -> Result<(), ScenarioError> {
        if self.m == 0 || self.n == 0 {
            return Err(ScenarioError::Config("m and n must be positive".into()));
        }
        check_omega(self.omega)
    }

    fn flow(&self, rng: &mut ChaCha8Rng, id: String, path: Vec<String>) -> FlowProfile {
        let rate = rng.gen_range(1.0..=100.0);
        let burst = rng.gen_range(1.0..=100.0);
        let d_h = *self.profile.deadline_classes().choose(rng).unwrap();
        let d = match self.deadline_mode {
            DeadlineMode::PerHopFixed => d_h * path.len() as f64,
            DeadlineMode::EndToEndFixed => d_h,
        };
        FlowProfile {
            id,
            rate,
            burst,
            deadline: d * self.omega,
            path,
            class: None,
        }
    }
}

fn check_omega(omega: f64) -> Result<(), ScenarioError> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::Config(format!(
            "deadline scale must be positive, got {omega}"
        )))
    }
}

fn chain(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("l{j}")).collect()
}

/// `m` flows over the same `n` links.
pub fn gen_tandem(cfg: &SyntheticConfig) -> Result<Network, ScenarioError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let links = chain(cfg.n);
    let flows = (1..=cfg.m)
        .map(|i| cfg.flow(&mut rng, format!("f{i}"), links.clone()))
        .collect();
    Ok(Network::new(links, flows))
}

/// `m` main flows over all `n` links plus `m / 2` cross flows entering at
/// each hop for two hops. Groups entering before the first link and at the
/// last one are cut to a single hop, so every link carries `m` cross flows.
pub fn gen_parking_lot(cfg: &SyntheticConfig) -> Result<Network, ScenarioError> {
    cfg.check()?;
    if !cfg.m.is_multiple_of(2) {
        return Err(ScenarioError::Config(format!(
            "parking lot needs an even m, got {}",
            cfg.m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let links = chain(cfg.n);
    let mut flows: Vec<FlowProfile> = (1..=cfg.m)
        .map(|i| cfg.flow(&mut rng, format!("f{i}"), links.clone()))
        .collect();
    for g in 0..=cfg.n {
        let path: Vec<String> = links[g.saturating_sub(1)..(g + 1).min(cfg.n)].to_vec();
        for k in 1..=cfg.m / 2 {
            flows.push(cfg.flow(&mut rng, format!("c{g}.{k}"), path.clone()));
        }
    }
    Ok(Network::new(links, flows))
}

/// Undirected graph read from an edge list; every edge yields two directed
/// links `a>b` and `b>a`.
///
/// ```text
/// # comment
/// @endpoints h1 h2 h3
/// h1 s1
/// s1 s2
/// ```
///
/// Without an `@endpoints` line every node may source and sink traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<String>,
    endpoints: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    edges: usize,
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut adjacency: Vec<Vec<usize>> = Vec::new();
        let mut endpoint_names: Option<Vec<String>> = None;
        let mut edges = 0;
        let mut intern = |name: &str, nodes: &mut Vec<String>, adjacency: &mut Vec<Vec<usize>>| {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(name.to_string());
                adjacency.push(Vec::new());
                nodes.len() - 1
            })
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if words[0] == "@endpoints" {
                endpoint_names
                    .get_or_insert_with(Vec::new)
                    .extend(words[1..].iter().map(|s| s.to_string()));
                continue;
            }
            let [a, b] = words[..] else {
                return Err(ScenarioError::Topology {
                    line: n + 1,
                    reason: format!("expected two node names, got {}", words.len()),
                });
            };
            if a == b {
                return Err(ScenarioError::Topology {
                    line: n + 1,
                    reason: format!("self loop at {a}"),
                });
            }
            let (ia, ib) = (
                intern(a, &mut nodes, &mut adjacency),
                intern(b, &mut nodes, &mut adjacency),
            );
            if adjacency[ia].contains(&ib) {
                return Err(ScenarioError::Topology {
                    line: n + 1,
                    reason: format!("duplicate edge {a} {b}"),
                });
            }
            adjacency[ia].push(ib);
            adjacency[ib].push(ia);
            edges += 1;
        }
        let endpoints = match endpoint_names {
            None => (0..nodes.len()).collect(),
            Some(names) => names
                .iter()
                .map(|s| {
                    index.get(s).copied().ok_or_else(|| ScenarioError::Topology {
                        line: 0,
                        reason: format!("endpoint {s} has no edges"),
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            nodes,
            endpoints,
            adjacency,
            edges,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges
    }

    pub fn endpoints(&self) -> &[usize] {
        &self.endpoints
    }

    pub fn node(&self, k: usize) -> &str {
        &self.nodes[k]
    }

    pub fn link_id(&self, a: usize, b: usize) -> String {
        format!("{}>{}", self.nodes[a], self.nodes[b])
    }

    /// A minimum-hop node path from `s` to `d`, choosing uniformly among
    /// shortest-path predecessors while walking back from `d`.
    pub fn shortest_path<R: Rng>(&self, s: usize, d: usize, rng: &mut R) -> Option<Vec<usize>> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if dist[d] == usize::MAX {
            return None;
        }
        let mut path = vec![d];
        let mut v = d;
        while v != s {
            let preds: Vec<usize> = self.adjacency[v]
                .iter()
                .copied()
                .filter(|&p| dist[p] != usize::MAX && dist[p] + 1 == dist[v])
                .collect();
            v = *preds.choose(rng)?;
            path.push(v);
        }
        path.reverse();
        Some(path)
    }

    fn links_of(&self, nodes: &[usize]) -> Vec<String> {
        nodes.windows(2).map(|w| self.link_id(w[0], w[1])).collect()
    }
}

/// Keeps only the links some flow uses, in first-use order.
fn network_from_flows(flows: Vec<FlowProfile>) -> Network {
    let mut seen = std::collections::HashSet::new();
    let links = flows
        .iter()
        .flat_map(|f| f.path.iter())
        .filter(|l| seen.insert(l.as_str()))
        .cloned()
        .collect();
    Network::new(links, flows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsnClass {
    pub name: &'static str,
    pub weight: u32,
    pub deadline: f64,
    /// Bytes.
    pub frame: f64,
    pub min_interarrival: f64,
}

pub const TSN_CLASSES: [TsnClass; 3] = [
    TsnClass {
        name: "CDT",
        weight: 1,
        deadline: 1e-4,
        frame: 128.0,
        min_interarrival: 500e-6,
    },
    TsnClass {
        name: "A",
        weight: 4,
        deadline: 2e-3,
        frame: 256.0,
        min_interarrival: 125e-6,
    },
    TsnClass {
        name: "B",
        weight: 4,
        deadline: 50e-3,
        frame: 256.0,
        min_interarrival: 250e-6,
    },
];

/// Frame inter-arrival choices: log-spaced from the class minimum to a
/// hundred times it.
pub const INTERARRIVAL_STEPS: usize = 8;

pub fn interarrival_choices(min: f64) -> Vec<f64> {
    (0..INTERARRIVAL_STEPS)
        .map(|k| min * 100f64.powf(k as f64 / (INTERARRIVAL_STEPS - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsnConfig {
    pub num_apps: usize,
    pub seed: u64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Unicast,
    Multicast,
    Broadcast,
}

/// TSN applications over `topo`: each picks a class, a transmission mode
/// and a source endpoint, and becomes one flow per destination. Rates are
/// in bytes per second, bursts in bytes.
pub fn gen_tsn(topo: &Topology, cfg: &TsnConfig) -> Result<Network, ScenarioError> {
    check_omega(cfg.omega)?;
    let ends = topo.endpoints();
    if ends.len() < 3 {
        return Err(ScenarioError::Config("TSN needs at least three endpoints".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = WeightedIndex::new(TSN_CLASSES.iter().map(|c| c.weight)).expect("positive weights");
    let mut flows = Vec::new();
    for app in 0..cfg.num_apps {
        let class = TSN_CLASSES[classes.sample(&mut rng)];
        let mode = [Mode::Unicast, Mode::Multicast, Mode::Broadcast][rng.gen_range(0..3)];
        let src = *ends.choose(&mut rng).unwrap();
        let mut others: Vec<usize> = ends.iter().copied().filter(|&e| e != src).collect();
        let count = match mode {
            Mode::Unicast => 1,
            Mode::Multicast => rng.gen_range(2..=29.min(others.len())),
            Mode::Broadcast => others.len(),
        };
        let (dests, _) = others.partial_shuffle(&mut rng, count);
        let mut dests = dests.to_vec();
        dests.sort_unstable();
        let interarrival = *interarrival_choices(class.min_interarrival).choose(&mut rng).unwrap();
        let rate = 1.1 * class.frame / interarrival;
        let burst = 25.0 * class.frame;
        for d in dests {
            let Some(nodes) = topo.shortest_path(src, d, &mut rng) else {
                continue;
            };
            if nodes.len() < 3 {
                continue;
            }
            flows.push(FlowProfile {
                id: format!("app{app}:{}>{}", topo.node(src), topo.node(d)),
                rate,
                burst,
                deadline: class.deadline * cfg.omega,
                path: topo.links_of(&nodes),
                class: Some(class.name.to_string()),
            });
        }
    }
    Ok(network_from_flows(flows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcApp {
    pub name: &'static str,
    pub weight: u32,
    pub deadline: f64,
    /// Bursts are drawn from `[0, burst_max]` bytes.
    pub burst_max: f64,
}

pub const DC_APPS: [DcApp; 3] = [
    DcApp {
        name: "web",
        weight: 3,
        deadline: 10e-3,
        burst_max: 10.0 * 150.0,
    },
    DcApp {
        name: "cache",
        weight: 9,
        deadline: 50e-3,
        burst_max: 20.0 * 400.0,
    },
    DcApp {
        name: "hadoop",
        weight: 1,
        deadline: 200e-3,
        burst_max: 2.0 * 300.0,
    },
];

/// Piecewise-linear rate CDFs per application.
///
/// CSV with header `app,rate,cdf`; `#` starts a comment. Points of each
/// application must have nondecreasing rate and cdf, ending at `cdf = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCdfs {
    curves: BTreeMap<String, Vec<(f64, f64)>>,
}

#[derive(Debug, Deserialize)]
struct CdfRow {
    app: String,
    rate: f64,
    cdf: f64,
}

impl RateCdfs {
    pub fn parse<R: std::io::Read>(input: R) -> Result<Self, ScenarioError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in reader.deserialize() {
            let row: CdfRow = row?;
            curves.entry(row.app).or_default().push((row.rate, row.cdf));
        }
        for (app, pts) in &curves {
            let ok = pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1)
                && pts
                    .iter()
                    .all(|&(r, c)| r > 0.0 && r.is_finite() && (0.0..=1.0).contains(&c))
                && pts.last().is_some_and(|p| (p.1 - 1.0).abs() < 1e-9);
            if !ok {
                return Err(ScenarioError::RateCdf(format!(
                    "{app}: points must be increasing and end at 1"
                )));
            }
        }
        Ok(Self { curves })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::parse(std::fs::File::open(path)?)
    }

    /// Inverse CDF at `u`, interpolating linearly; below the first point
    /// the first rate is returned.
    pub fn quantile(&self, app: &str, u: f64) -> Result<f64, ScenarioError> {
        let pts = self
            .curves
            .get(app)
            .ok_or_else(|| ScenarioError::RateCdf(format!("no curve for {app}")))?;
        let k = pts.partition_point(|p| p.1 < u);
        Ok(match k {
            0 => pts[0].0,
            k if k >= pts.len() => pts[pts.len() - 1].0,
            k => {
                let (r0, c0) = pts[k - 1];
                let (r1, c1) = pts[k];
                if c1 > c0 {
                    r0 + (r1 - r0) * (u - c0) / (c1 - c0)
                } else {
                    r1
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterDcConfig {
    pub num_flows: usize,
    pub seed: u64,
    pub omega: f64,
}

/// Inter-datacenter flows between random endpoint pairs at least two hops
/// apart.
pub fn gen_interdc(topo: &Topology, cdfs: &RateCdfs, cfg: &InterDcConfig) -> Result<Network, ScenarioError> {
    check_omega(cfg.omega)?;
    let ends = topo.endpoints();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let apps = WeightedIndex::new(DC_APPS.iter().map(|a| a.weight)).expect("positive weights");
    let mut flows = Vec::with_capacity(cfg.num_flows);
    for k in 0..cfg.num_flows {
        let app = DC_APPS[apps.sample(&mut rng)];
        let rate = cdfs.quantile(app.name, rng.gen::<f64>())?;
        let burst = rng.gen_range(0.0..=app.burst_max);
        let mut path = None;
        for _ in 0..1000 {
            let s = *ends.choose(&mut rng).unwrap_or(&0);
            let d = *ends.choose(&mut rng).unwrap_or(&0);
            if s == d {
                continue;
            }
            if let Some(nodes) = topo.shortest_path(s, d, &mut rng).filter(|p| p.len() >= 3) {
                path = Some(nodes);
                break;
            }
        }
        let nodes = path.ok_or_else(|| ScenarioError::Config("no endpoint pair is two or more hops apart".into()))?;
        flows.push(FlowProfile {
            id: format!(
                "{}{k}:{}>{}",
                app.name,
                topo.node(nodes[0]),
                topo.node(nodes[nodes.len() - 1])
            ),
            rate,
            burst,
            deadline: app.deadline * cfg.omega,
            path: topo.links_of(&nodes),
            class: Some(app.name.to_string()),
        });
    }
    Ok(network_from_flows(flows))
}
