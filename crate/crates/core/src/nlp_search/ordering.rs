//! Feasible orderings of reprofiling delays, local deadlines and inflection
//! points.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::netmodel::Problem;

/// A local deadline `T_ij` or an inflection point `T'_ij` of flow `i` on
/// the link the sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    Start(usize),
    Inflection(usize),
}

impl Event {
    pub fn flow(self) -> usize {
        match self {
            Event::Start(i) | Event::Inflection(i) => i,
        }
    }
}

/// Global nondecreasing order of the `D_i` plus, per link, a nondecreasing
/// order of all `T_ij` and `T'_ij` of the flows crossing it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ordering {
    pub delay_rank: Vec<usize>,
    pub links: Vec<Vec<Event>>,
}

impl Ordering {
    /// Flows of link `j` by nondecreasing local deadline.
    pub fn deadline_rank(&self, j: usize) -> Vec<usize> {
        self.links[j]
            .iter()
            .filter_map(|e| match e {
                Event::Start(i) => Some(*i),
                Event::Inflection(_) => None,
            })
            .collect()
    }

    /// Checks that every link sequence lists each member's two events once,
    /// `T` before `T'`, and respects `T_a <= T_b, D_a <= D_b => T'_a <= T'_b`.
    pub fn is_consistent(&self, problem: &Problem) -> bool {
        if self.links.len() != problem.num_links() {
            return false;
        }
        let mut rank = vec![usize::MAX; problem.num_flows()];
        for (p, &i) in self.delay_rank.iter().enumerate() {
            if i >= rank.len() || rank[i] != usize::MAX {
                return false;
            }
            rank[i] = p;
        }
        if rank.contains(&usize::MAX) {
            return false;
        }
        for (j, seq) in self.links.iter().enumerate() {
            let members = problem.members(j);
            if seq.len() != 2 * members.len() {
                return false;
            }
            let pos = |e: Event| seq.iter().position(|&x| x == e);
            for &(i, _) in members {
                match (pos(Event::Start(i)), pos(Event::Inflection(i))) {
                    (Some(s), Some(t)) if s < t => {}
                    _ => return false,
                }
            }
            let starts = self.deadline_rank(j);
            for (p, &a) in starts.iter().enumerate() {
                for &b in &starts[p + 1..] {
                    if rank[a] < rank[b] && pos(Event::Inflection(a)) > pos(Event::Inflection(b)) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Draws a random delay order and random per-link deadline orders, then
/// extends the order they induce on each link by repeatedly picking a
/// uniformly random event whose predecessors are all placed.
///
/// Flows marked `pinned` have `D = 0`: they lead the delay order and their
/// two events are placed together.
pub fn generate_feasible_ordering<R: Rng>(problem: &Problem, pinned: &[bool], rng: &mut R) -> Ordering {
    let m = problem.num_flows();
    let mut fixed: Vec<usize> = (0..m).filter(|&i| pinned[i]).collect();
    let mut free: Vec<usize> = (0..m).filter(|&i| !pinned[i]).collect();
    fixed.shuffle(rng);
    free.shuffle(rng);
    let delay_rank: Vec<usize> = fixed.into_iter().chain(free).collect();
    let mut rank = vec![0; m];
    for (p, &i) in delay_rank.iter().enumerate() {
        rank[i] = p;
    }

    let links = (0..problem.num_links())
        .map(|j| {
            let mut order: Vec<usize> = problem.members(j).iter().map(|&(i, _)| i).collect();
            order.shuffle(rng);
            extend_randomly(&order, &rank, pinned, rng)
        })
        .collect();
    Ordering { delay_rank, links }
}

fn extend_randomly<R: Rng>(order: &[usize], rank: &[usize], pinned: &[bool], rng: &mut R) -> Vec<Event> {
    // Nodes: each flow contributes a start node and, unless pinned, a
    // separate inflection node.
    let mut nodes: Vec<Vec<Event>> = Vec::new();
    let mut start_node = Vec::with_capacity(order.len());
    let mut infl_node = Vec::with_capacity(order.len());
    for &i in order {
        if pinned[i] {
            start_node.push(nodes.len());
            infl_node.push(nodes.len());
            nodes.push(vec![Event::Start(i), Event::Inflection(i)]);
        } else {
            start_node.push(nodes.len());
            nodes.push(vec![Event::Start(i)]);
            infl_node.push(nodes.len());
            nodes.push(vec![Event::Inflection(i)]);
        }
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut indeg = vec![0usize; nodes.len()];
    let mut edge = |a: usize, b: usize| {
        if a != b {
            succ[a].push(b);
            indeg[b] += 1;
        }
    };
    for p in 0..order.len() {
        edge(start_node[p], infl_node[p]);
        if p + 1 < order.len() {
            edge(start_node[p], start_node[p + 1]);
        }
        for q in p + 1..order.len() {
            if rank[order[p]] < rank[order[q]] {
                edge(infl_node[p], infl_node[q]);
            }
        }
    }
    let mut ready: Vec<usize> = (0..nodes.len()).filter(|&n| indeg[n] == 0).collect();
    let mut seq = Vec::with_capacity(2 * order.len());
    while !ready.is_empty() {
        let n = ready.swap_remove(rng.gen_range(0..ready.len()));
        seq.extend_from_slice(&nodes[n]);
        for &s in &succ[n] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    seq
}

/// `log2 N` with `N = m! * prod_j (2 k_j)! / 2^k_j`, `k_j` the number of
/// flows on link `j`.
pub fn log2_ordering_count(problem: &Problem) -> f64 {
    let log2_factorial = |n: usize| (2..=n).map(|k| (k as f64).log2()).sum::<f64>();
    let links: f64 = (0..problem.num_links())
        .map(|j| {
            let k = problem.members(j).len();
            log2_factorial(2 * k) - k as f64
        })
        .sum();
    log2_factorial(problem.num_flows()) + links
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{FlowProfile, Network};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shared_link(m: usize) -> Problem {
        let flows = (0..m)
            .map(|i| FlowProfile::new(format!("f{}", i + 1), 1.0, 1.0, 1.0, &["j"]))
            .collect();
        Network::new(vec!["j".into()], flows).to_problem().unwrap()
    }

    #[test]
    fn single_flow_single_link() {
        let p = shared_link(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = generate_feasible_ordering(&p, &[false], &mut rng);
        assert_eq!(o.links[0], vec![Event::Start(0), Event::Inflection(0)]);
        assert!(o.is_consistent(&p));
    }

    #[test]
    fn three_flow_example_is_generated() {
        // D_3 <= D_1 <= D_2 and T_1 <= T_2 <= T_3 admit
        // T_1 <= T'_1 <= T_2 <= T_3 <= T'_2 <= T'_3.
        let p = shared_link(3);
        let want = vec![
            Event::Start(0),
            Event::Inflection(0),
            Event::Start(1),
            Event::Start(2),
            Event::Inflection(1),
            Event::Inflection(2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut matching = 0;
        let mut found = false;
        for _ in 0..20_000 {
            let o = generate_feasible_ordering(&p, &[false; 3], &mut rng);
            if o.delay_rank == [2, 0, 1] && o.deadline_rank(0) == [0, 1, 2] {
                matching += 1;
                found |= o.links[0] == want;
            }
        }
        assert!(matching > 100);
        assert!(found);
    }

    #[test]
    fn generated_orderings_are_consistent() {
        let net = Network::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                FlowProfile::new("x", 1.0, 1.0, 1.0, &["a", "b", "c"]),
                FlowProfile::new("y", 1.0, 1.0, 1.0, &["b", "c"]),
                FlowProfile::new("z", 1.0, 1.0, 1.0, &["c"]),
                FlowProfile::new("w", 1.0, 1.0, 1.0, &["a", "c"]),
                FlowProfile::new("v", 1.0, 1.0, 1.0, &["b"]),
            ],
        );
        let p = net.to_problem().unwrap();
        let pinned: Vec<bool> = p.flows().iter().map(|f| f.hops() == 1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let o = generate_feasible_ordering(&p, &pinned, &mut rng);
            assert!(o.is_consistent(&p), "{o:?}");
            for seq in &o.links {
                for w in seq.windows(2) {
                    if let Event::Start(i) = w[0] {
                        if pinned[i] {
                            assert_eq!(w[1], Event::Inflection(i));
                        }
                    }
                }
            }
            assert!(o.delay_rank[..2].iter().all(|&i| pinned[i]));
        }
    }

    #[test]
    fn inconsistent_orderings_are_detected() {
        let p = shared_link(2);
        let bad = Ordering {
            delay_rank: vec![0, 1],
            links: vec![vec![
                Event::Start(0),
                Event::Start(1),
                Event::Inflection(1),
                Event::Inflection(0),
            ]],
        };
        assert!(!bad.is_consistent(&p));
        let swapped = Ordering {
            delay_rank: vec![0, 1],
            links: vec![vec![
                Event::Inflection(0),
                Event::Start(0),
                Event::Start(1),
                Event::Inflection(1),
            ]],
        };
        assert!(!swapped.is_consistent(&p));
    }

    #[test]
    fn ordering_count() {
        // Two flows, one shared link and one private link: 2! * (4!/4) * (2!/2).
        let net = Network::new(
            vec!["l1".into(), "l2".into()],
            vec![
                FlowProfile::new("f1", 1.0, 1.0, 1.0, &["l1", "l2"]),
                FlowProfile::new("f2", 1.0, 1.0, 1.0, &["l2"]),
            ],
        );
        let p = net.to_problem().unwrap();
        assert!((log2_ordering_count(&p) - 12f64.log2()).abs() < 1e-12);
    }
}
