//! Variables, linear constraints and per-ordering bandwidth constraints.

use std::fmt;

use super::ordering::{Event, Ordering};
use crate::netmodel::{Problem, Solution};

/// Position of each `D_i` and `T_ij` in the optimization vector.
///
/// Single-hop flows are fixed at `D = 0`, `T = d`: on their only link that
/// service curve lies below every other admissible one, so fixing them loses
/// nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    delay: Vec<Option<usize>>,
    deadline: Vec<Vec<Option<usize>>>,
    owner: Vec<usize>,
}

impl Layout {
    pub fn new(problem: &Problem) -> Self {
        let mut delay = Vec::with_capacity(problem.num_flows());
        let mut deadline = Vec::with_capacity(problem.num_flows());
        let mut owner = Vec::new();
        for (i, f) in problem.flows().iter().enumerate() {
            if f.hops() == 1 {
                delay.push(None);
                deadline.push(vec![None]);
                continue;
            }
            delay.push(Some(owner.len()));
            owner.push(i);
            let hops = (0..f.hops())
                .map(|_| {
                    owner.push(i);
                    Some(owner.len() - 1)
                })
                .collect();
            deadline.push(hops);
        }
        Self { delay, deadline, owner }
    }

    pub fn dim(&self) -> usize {
        self.owner.len()
    }

    pub fn pinned(&self) -> Vec<bool> {
        self.delay.iter().map(Option::is_none).collect()
    }

    /// Flow owning variable `k`.
    pub fn owner(&self, k: usize) -> usize {
        self.owner[k]
    }

    pub fn delay_var(&self, i: usize) -> Option<usize> {
        self.delay[i]
    }

    pub fn deadline_vars(&self, i: usize) -> &[Option<usize>] {
        &self.deadline[i]
    }

    pub fn delay_expr(&self, i: usize) -> Affine {
        match self.delay[i] {
            Some(k) => Affine::var(k),
            None => Affine::constant(0.0),
        }
    }

    pub fn deadline_expr(&self, problem: &Problem, i: usize, h: usize) -> Affine {
        match self.deadline[i][h] {
            Some(k) => Affine::var(k),
            None => Affine::constant(problem.flow(i).deadline),
        }
    }

    pub fn inflection_expr(&self, problem: &Problem, i: usize, h: usize) -> Affine {
        self.deadline_expr(problem, i, h).plus(&self.delay_expr(i))
    }

    pub fn solution(&self, problem: &Problem, x: &[f64]) -> Solution {
        Solution {
            delays: (0..problem.num_flows()).map(|i| self.delay_expr(i).eval(x)).collect(),
            deadlines: (0..problem.num_flows())
                .map(|i| {
                    (0..problem.flow(i).hops())
                        .map(|h| self.deadline_expr(problem, i, h).eval(x))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn point(&self, solution: &Solution) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (i, d) in self.delay.iter().enumerate() {
            if let Some(k) = d {
                x[*k] = solution.delays[i];
            }
            for (h, t) in self.deadline[i].iter().enumerate() {
                if let Some(k) = t {
                    x[*k] = solution.deadlines[i][h];
                }
            }
        }
        x
    }

    fn name(&self, problem: &Problem, k: usize) -> String {
        let i = self.owner[k];
        let flow = &problem.flow_ids()[i];
        if self.delay[i] == Some(k) {
            return format!("D[{flow}]");
        }
        let h = self.deadline[i].iter().position(|&v| v == Some(k)).unwrap_or(0);
        let link = &problem.link_ids()[problem.flow(i).path[h]];
        format!("T[{flow},{link}]")
    }
}

/// `sum coef * x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(k: usize) -> Self {
        Self {
            terms: vec![(k, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, c)| c * x[k]).sum::<f64>() + self.constant
    }

    pub fn plus(&self, other: &Affine) -> Affine {
        self.combine(other, 1.0)
    }

    pub fn minus(&self, other: &Affine) -> Affine {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Affine, sign: f64) -> Affine {
        let mut terms = self.terms.clone();
        for &(k, c) in &other.terms {
            match terms.iter_mut().find(|(v, _)| *v == k) {
                Some(t) => t.1 += sign * c,
                None => terms.push((k, sign * c)),
            }
        }
        terms.retain(|&(_, c)| c != 0.0);
        terms.sort_by_key(|&(k, _)| k);
        Affine {
            terms,
            constant: self.constant + sign * other.constant,
        }
    }
}

/// `sum coef * x <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
}

/// Outcome of building `lhs <= rhs` when it may not involve any variable.
pub(crate) enum Built {
    Constraint(LinearConstraint),
    AlwaysTrue,
    AlwaysFalse,
}

impl LinearConstraint {
    pub(crate) fn le(lhs: &Affine, rhs: &Affine) -> Built {
        let d = lhs.minus(rhs);
        if d.terms.is_empty() {
            if d.constant <= 0.0 {
                Built::AlwaysTrue
            } else {
                Built::AlwaysFalse
            }
        } else {
            Built::Constraint(LinearConstraint {
                terms: d.terms,
                bound: -d.constant,
            })
        }
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, c)| c * x[k]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        (self.lhs(x) - self.bound).max(0.0)
    }
}

/// How one flow's service curve enters the bandwidth bound at another
/// flow's inflection point under a fixed ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// The point lies before the flow's local deadline.
    Zero,
    /// The point lies on the flow's reprofiled ramp: `(b/D)(p - T)`.
    Ramp,
    /// The point lies past the flow's inflection: `b + r(p - T')`.
    Tail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTerm {
    pub flow: usize,
    pub hop: usize,
    pub kind: TermKind,
}

/// `C_j * T'_kj >= sum_i beta_ij(T'_kj)` for the point flow `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioConstraint {
    pub link: usize,
    pub flow: usize,
    pub hop: usize,
    pub terms: Vec<RatioTerm>,
}

/// One ordering's optimization problem: minimize `sum_j C_j` over the
/// region cut out by `linear`, with each `C_j` bounded below by its
/// stability constraint and its ratio constraints.
#[derive(Debug, Clone)]
pub struct NlpInstance<'p> {
    pub problem: &'p Problem,
    pub ordering: Ordering,
    pub layout: Layout,
    /// Bounds and deadline constraints followed by ordering constraints.
    pub linear: Vec<LinearConstraint>,
    pub base_len: usize,
    pub stability: Vec<f64>,
    pub ratios: Vec<RatioConstraint>,
    /// Some ordering constraint fails for every value of the variables.
    pub contradictory: bool,
}

/// `0 <= D <= b/r`, `T >= 0` and `sum T + D <= d` for every free flow.
pub fn base_constraints(problem: &Problem, layout: &Layout) -> Vec<LinearConstraint> {
    let mut out = Vec::new();
    for (i, f) in problem.flows().iter().enumerate() {
        let Some(dk) = layout.delay_var(i) else { continue };
        out.push(LinearConstraint {
            terms: vec![(dk, -1.0)],
            bound: 0.0,
        });
        out.push(LinearConstraint {
            terms: vec![(dk, 1.0)],
            bound: f.max_reprofiling_delay(),
        });
        let mut sum = vec![(dk, 1.0)];
        for t in layout.deadline_vars(i).iter().flatten() {
            out.push(LinearConstraint {
                terms: vec![(*t, -1.0)],
                bound: 0.0,
            });
            sum.push((*t, 1.0));
        }
        out.push(LinearConstraint {
            terms: sum,
            bound: f.deadline,
        });
    }
    out
}

fn event_expr(problem: &Problem, layout: &Layout, hop_of: &dyn Fn(usize) -> usize, e: Event) -> Affine {
    match e {
        Event::Start(i) => layout.deadline_expr(problem, i, hop_of(i)),
        Event::Inflection(i) => layout.inflection_expr(problem, i, hop_of(i)),
    }
}

/// Turns an ordering into linear ordering constraints and, per link, the
/// stability bound and one ratio constraint per inflection point.
pub fn emit_constraints<'p>(ordering: &Ordering, problem: &'p Problem) -> NlpInstance<'p> {
    let layout = Layout::new(problem);
    let mut linear = base_constraints(problem, &layout);
    let base_len = linear.len();
    let mut contradictory = false;
    let mut push = |built: Built, linear: &mut Vec<LinearConstraint>| match built {
        Built::Constraint(c) => linear.push(c),
        Built::AlwaysTrue => {}
        Built::AlwaysFalse => contradictory = true,
    };
    for w in ordering.delay_rank.windows(2) {
        let built = LinearConstraint::le(&layout.delay_expr(w[0]), &layout.delay_expr(w[1]));
        push(built, &mut linear);
    }
    let mut stability = Vec::with_capacity(problem.num_links());
    let mut ratios = Vec::new();
    for (j, seq) in ordering.links.iter().enumerate() {
        let members = problem.members(j);
        let hop_of = |i: usize| members.iter().find(|&&(f, _)| f == i).map(|&(_, h)| h).unwrap_or(0);
        for w in seq.windows(2) {
            let built = LinearConstraint::le(
                &event_expr(problem, &layout, &hop_of, w[0]),
                &event_expr(problem, &layout, &hop_of, w[1]),
            );
            push(built, &mut linear);
        }
        stability.push(members.iter().map(|&(i, _)| problem.flow(i).rate).sum());
        let pos = |e: Event| seq.iter().position(|&x| x == e).unwrap_or(usize::MAX);
        for &(k, hk) in members {
            let at = pos(Event::Inflection(k));
            let terms = members
                .iter()
                .map(|&(i, h)| {
                    let kind = if i == k || pos(Event::Inflection(i)) < at {
                        TermKind::Tail
                    } else if pos(Event::Start(i)) < at {
                        TermKind::Ramp
                    } else {
                        TermKind::Zero
                    };
                    RatioTerm { flow: i, hop: h, kind }
                })
                .collect();
            ratios.push(RatioConstraint {
                link: j,
                flow: k,
                hop: hk,
                terms,
            });
        }
    }
    NlpInstance {
        problem,
        ordering: ordering.clone(),
        layout,
        linear,
        base_len,
        stability,
        ratios,
        contradictory,
    }
}

impl NlpInstance<'_> {
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.linear.iter().map(|c| c.violation(x)).fold(0.0, f64::max)
    }

    /// Required `C_j` from one ratio constraint at `x`.
    pub fn ratio_bound(&self, c: &RatioConstraint, x: &[f64]) -> f64 {
        let p = self.layout.inflection_expr(self.problem, c.flow, c.hop).eval(x);
        let load: f64 = c
            .terms
            .iter()
            .map(|t| {
                let f = self.problem.flow(t.flow);
                let start = self.layout.deadline_expr(self.problem, t.flow, t.hop).eval(x);
                let infl = self.layout.inflection_expr(self.problem, t.flow, t.hop).eval(x);
                match t.kind {
                    TermKind::Zero => 0.0,
                    TermKind::Ramp if infl > start => f.burst * (p - start) / (infl - start),
                    TermKind::Ramp => f.burst,
                    TermKind::Tail => f.burst + f.rate * (p - infl),
                }
            })
            .sum();
        if p > 0.0 {
            load / p
        } else if load > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// Per-link bandwidth from the closed-form constraints; exact inside
    /// the ordering's region.
    pub fn link_bandwidths(&self, x: &[f64]) -> Vec<f64> {
        let mut c: Vec<f64> = self
            .stability
            .iter()
            .enumerate()
            .map(|(j, &s)| if self.problem.members(j).is_empty() { 0.0 } else { s })
            .collect();
        for r in &self.ratios {
            c[r.link] = c[r.link].max(self.ratio_bound(r, x));
        }
        c
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.link_bandwidths(x).iter().sum()
    }
}

fn fmt_affine(f: &mut fmt::Formatter<'_>, inst: &NlpInstance<'_>, a: &Affine) -> fmt::Result {
    let mut first = true;
    for &(k, c) in &a.terms {
        let name = inst.layout.name(inst.problem, k);
        let sign = if c < 0.0 {
            "-"
        } else if first {
            ""
        } else {
            "+"
        };
        let mag = c.abs();
        if !first {
            write!(f, " ")?;
        }
        if mag == 1.0 {
            write!(f, "{sign}{}{name}", if first || sign.is_empty() { "" } else { " " })?;
        } else {
            write!(
                f,
                "{sign}{}{mag}*{name}",
                if first || sign.is_empty() { "" } else { " " }
            )?;
        }
        first = false;
    }
    if a.constant != 0.0 || first {
        if first {
            write!(f, "{}", a.constant)?;
        } else {
            write!(f, " {} {}", if a.constant < 0.0 { "-" } else { "+" }, a.constant.abs())?;
        }
    }
    Ok(())
}

/// Plain-text dump for external solvers.
impl fmt::Display for NlpInstance<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.problem;
        let links = p.link_ids();
        writeln!(f, "# variables")?;
        for k in 0..self.layout.dim() {
            writeln!(f, "{}", self.layout.name(p, k))?;
        }
        for (j, id) in links.iter().enumerate() {
            if !p.members(j).is_empty() {
                writeln!(f, "C[{id}]")?;
            }
        }
        write!(f, "# objective\nminimize")?;
        let used: Vec<&String> = links
            .iter()
            .enumerate()
            .filter(|&(j, _)| !p.members(j).is_empty())
            .map(|(_, id)| id)
            .collect();
        for (n, id) in used.iter().enumerate() {
            write!(f, "{} C[{id}]", if n == 0 { "" } else { " +" })?;
        }
        writeln!(f, "\n# linear constraints")?;
        for c in &self.linear {
            fmt_affine(
                f,
                self,
                &Affine {
                    terms: c.terms.clone(),
                    constant: 0.0,
                },
            )?;
            writeln!(f, " <= {}", c.bound)?;
        }
        writeln!(f, "# bandwidth constraints")?;
        for (j, s) in self.stability.iter().enumerate() {
            if !p.members(j).is_empty() {
                writeln!(f, "C[{}] >= {s}", links[j])?;
            }
        }
        for r in &self.ratios {
            let point = self.layout.inflection_expr(p, r.flow, r.hop);
            write!(f, "C[{}] * (", links[r.link])?;
            fmt_affine(f, self, &point)?;
            write!(f, ") >=")?;
            let mut first = true;
            for t in &r.terms {
                let flow = p.flow(t.flow);
                let sep = if first { " " } else { " + " };
                match t.kind {
                    TermKind::Zero => continue,
                    TermKind::Ramp => {
                        write!(f, "{sep}{} * ((", flow.burst)?;
                        fmt_affine(f, self, &point)?;
                        write!(f, ") - (")?;
                        fmt_affine(f, self, &self.layout.deadline_expr(p, t.flow, t.hop))?;
                        write!(f, ")) / (")?;
                        fmt_affine(f, self, &self.layout.delay_expr(t.flow))?;
                        write!(f, ")")?;
                    }
                    TermKind::Tail if t.flow == r.flow => write!(f, "{sep}{}", flow.burst)?,
                    TermKind::Tail => {
                        write!(f, "{sep}{} + {} * ((", flow.burst, flow.rate)?;
                        fmt_affine(f, self, &point)?;
                        write!(f, ") - (")?;
                        fmt_affine(f, self, &self.layout.inflection_expr(p, t.flow, t.hop))?;
                        write!(f, "))")?;
                    }
                }
                first = false;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
