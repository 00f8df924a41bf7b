//! Tightening approximate bounds to within `δ` of the exact ones.
//!
//! Satisfiability of `l ≤ P(O) ≤ u` is answered from an outer range of the
//! attainable values of `P(O)`: the image of a continuous function over a
//! connected feasible set is an interval, so a window is satisfiable iff it
//! meets that interval. The range first comes from a cut system over
//! intermediate nodes and switches to the exact encoding on the first
//! satisfiable answer.

use std::collections::HashMap;

use thiserror::Error;

use crate::approx::{ApproxResult, Interval};
use crate::constraints::{ClassSystem, ConstraintSystem};
use crate::corrtypes::{CorrEnv, CorrType};
use crate::grounder::{DerivationGraph, NodeId};
use crate::optimizer::{OptConfig, Optimizer};
use crate::symexpr::ObjectiveBuilder;

/// Slack added around the starting point of the stepping search.
const WIDEN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("no satisfiable window after {steps} steps of {eps}")]
    BudgetExceeded { steps: usize, eps: f64 },
}

pub trait SatOracle {
    /// Whether some feasible distribution gives `l ≤ P(O) ≤ u`.
    fn sat(&mut self, l: f64, u: f64) -> bool;
}

fn meets(r: &Interval, l: f64, u: f64) -> bool {
    r.hi >= l - 1e-12 && r.lo <= u + 1e-12
}

/// Answers from a fixed outer range of `P(O)`.
pub struct RangeOracle(pub Interval);

impl SatOracle for RangeOracle {
    fn sat(&mut self, l: f64, u: f64) -> bool {
        meets(&self.0, l, u)
    }
}

/// Uses the cut range while it answers unsatisfiable and the exact range
/// from the first satisfiable answer on, when the exact range is available.
pub struct CombinedOracle<'a> {
    cut: Interval,
    exact: Option<Box<dyn FnOnce() -> Option<Interval> + 'a>>,
    exact_range: Option<Interval>,
    /// Set once a satisfiable answer could not be confirmed exactly.
    pub soundness_only: bool,
}

impl<'a> CombinedOracle<'a> {
    pub fn new(cut: Interval, exact: Option<Box<dyn FnOnce() -> Option<Interval> + 'a>>) -> Self {
        CombinedOracle { cut, exact, exact_range: None, soundness_only: false }
    }

    pub fn switched(&self) -> bool {
        self.exact_range.is_some()
    }
}

impl SatOracle for CombinedOracle<'_> {
    fn sat(&mut self, l: f64, u: f64) -> bool {
        if let Some(r) = &self.exact_range {
            return meets(r, l, u);
        }
        if !meets(&self.cut, l, u) {
            return false;
        }
        match self.exact.take().and_then(|f| f()) {
            Some(r) => {
                self.exact_range = Some(r);
                meets(&r, l, u)
            }
            None => {
                self.soundness_only = true;
                true
            }
        }
    }
}

/// Steps a window from one end of `approx` inwards until it is satisfiable.
/// Returns the window; everything on the outer side of it is unsatisfiable.
pub fn make_sat(
    oracle: &mut dyn SatOracle,
    approx: Interval,
    eps: f64,
    delta: f64,
    is_lower: bool,
) -> Result<(f64, f64), RefineError> {
    let start = if is_lower { approx.lo } else { approx.hi };
    let (mut l, mut u) = (start - WIDEN, start + WIDEN);
    if oracle.sat(l, u) {
        return Ok((l, u));
    }
    let budget = (1.0 / eps).ceil() as usize + 1;
    let mut first = true;
    for _ in 0..budget {
        let (nl, nu) = if is_lower { (u, u + eps) } else { (l - eps, l) };
        if oracle.sat(nl, nu) {
            if first && eps > 4.0 * delta {
                let mid = 0.5 * (nl + nu);
                return Ok(if is_lower {
                    if oracle.sat(nl, mid) { (nl, mid) } else { (mid, nu) }
                } else if oracle.sat(mid, nu) {
                    (mid, nu)
                } else {
                    (nl, mid)
                });
            }
            return Ok((nl, nu));
        }
        first = false;
        (l, u) = (nl, nu);
    }
    Err(RefineError::BudgetExceeded { steps: budget, eps })
}

/// Brackets for the exact lower and upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBracket {
    pub l_minus: f64,
    pub l_plus: f64,
    pub u_minus: f64,
    pub u_plus: f64,
}

pub fn step_size(approx: Interval, delta: f64) -> f64 {
    delta.max(approx.width() / 16.0)
}

pub fn bound_bounds(oracle: &mut dyn SatOracle, approx: Interval, delta: f64) -> Result<BoundBracket, RefineError> {
    let eps = step_size(approx, delta);
    let (l_minus, l_plus) = make_sat(oracle, approx, eps, delta, true)?;
    let (u_minus, u_plus) = make_sat(oracle, approx, eps, delta, false)?;
    Ok(BoundBracket { l_minus, l_plus, u_minus, u_plus })
}

/// Halves `[l, u]` while it is at least `delta` wide, keeping the true bound
/// inside.
pub fn binary_search(oracle: &mut dyn SatOracle, mut l: f64, mut u: f64, delta: f64, is_lower: bool) -> (f64, f64) {
    while u - l >= delta {
        let m = 0.5 * (l + u);
        if is_lower {
            // lower bound: anything in [l, m]?
            if oracle.sat(l, m) {
                u = m;
            } else {
                l = m;
            }
        } else if oracle.sat(m, u) {
            l = m;
        } else {
            u = m;
        }
    }
    (l, u)
}

/// Refines one output's approximate interval.
pub fn make_delta_precise(oracle: &mut dyn SatOracle, approx: Interval, delta: f64) -> Result<Interval, RefineError> {
    let b = bound_bounds(oracle, approx, delta)?;
    let (lo, _) = binary_search(oracle, b.l_minus, b.l_plus, delta, true);
    let (_, hi) = binary_search(oracle, b.u_minus, b.u_plus, delta, false);
    let lo = lo.clamp(approx.lo, approx.hi);
    let hi = hi.clamp(approx.lo, approx.hi);
    Ok(Interval::new(lo.min(hi), hi.max(lo)))
}

/// Over-approximate encoding of one output through intermediate nodes.
#[derive(Debug, Clone)]
pub struct CutSystem {
    pub root: NodeId,
    /// Nodes whose hyperedges are encoded.
    pub expanded: Vec<NodeId>,
    /// Nodes treated as correlated inputs, grouped into independent blocks.
    pub groups: Vec<Vec<NodeId>>,
    /// One block per group over its leaves' joint assignments.
    pub phi: ConstraintSystem,
    /// All leaves are input facts.
    pub identity: bool,
    /// The encoding is unusable; the approximate interval stands.
    pub fallback: bool,
}

impl CutSystem {
    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.groups.iter().flatten().copied()
    }

    /// Joint variables of the encoding.
    pub fn dimension(&self) -> usize {
        self.phi.classes.iter().map(ClassSystem::dim).sum()
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Greedily expands the root's cone while the leaves' template
/// `2^|leaves|` stays within `cut_cap`, then encodes the leaves.
pub fn build_cut_system(
    g: &DerivationGraph,
    approx: &ApproxResult,
    env: &CorrEnv,
    root: NodeId,
    cut_cap: usize,
) -> CutSystem {
    let max_leaves = (usize::BITS - 1 - cut_cap.max(1).leading_zeros()) as usize;
    let children = |v: NodeId| -> Vec<NodeId> {
        let mut c: Vec<NodeId> = g.out[v]
            .iter()
            .filter(|&&e| g.rules[g.edges[e].rule].prob > 0.0)
            .flat_map(|&e| g.edges[e].pos.iter().chain(&g.edges[e].neg).copied())
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    };

    let mut expanded = vec![root];
    let mut in_s: HashMap<NodeId, ()> = HashMap::from([(root, ())]);
    // leaf -> number of encoded hyperedges using it
    let mut uses: HashMap<NodeId, usize> = HashMap::new();
    let add_uses = |v: NodeId, uses: &mut HashMap<NodeId, usize>, in_s: &HashMap<NodeId, ()>| {
        for &e in &g.out[v] {
            if g.rules[g.edges[e].rule].prob <= 0.0 {
                continue;
            }
            for &b in g.edges[e].pos.iter().chain(&g.edges[e].neg) {
                if !in_s.contains_key(&b) {
                    *uses.entry(b).or_default() += 1;
                }
            }
        }
    };
    if !g.is_leaf(root) {
        add_uses(root, &mut uses, &in_s);
    }
    loop {
        let mut cands: Vec<(usize, NodeId)> =
            uses.iter().filter(|(&v, _)| !g.is_leaf(v)).map(|(&v, &n)| (n, v)).collect();
        cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen = None;
        for &(_, c) in &cands {
            let new: usize = children(c).iter().filter(|b| !in_s.contains_key(b) && !uses.contains_key(b)).count();
            if uses.len() - 1 + new <= max_leaves {
                chosen = Some(c);
                break;
            }
        }
        let Some(c) = chosen else { break };
        uses.remove(&c);
        in_s.insert(c, ());
        expanded.push(c);
        add_uses(c, &mut uses, &in_s);
    }

    let mut leaves: Vec<NodeId> = uses.keys().copied().collect();
    leaves.sort_unstable();
    let identity = leaves.iter().all(|&v| g.is_leaf(v));
    let mut fallback = leaves.len() > max_leaves || g.is_leaf(root);

    // rule events encoded symbolically must be independent of every leaf
    for &v in &expanded {
        for &e in &g.out[v] {
            let r = g.edges[e].rule;
            if g.rules[r].is_event() && leaves.iter().any(|&lf| approx.deps[lf].all()[env.rule_item(r)]) {
                fallback = true;
            }
        }
    }

    // group leaves whose dependencies share a class
    let mut parent: Vec<usize> = (0..leaves.len()).collect();
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (i, &lf) in leaves.iter().enumerate() {
        for item in approx.deps[lf].all().ones() {
            let c = env.item_class(item);
            match owner.get(&c) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
                None => {
                    owner.insert(c, i);
                }
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<NodeId>> = std::collections::BTreeMap::new();
    for (i, &leaf) in leaves.iter().enumerate() {
        let r = find(&mut parent, i);
        by_root.entry(r).or_default().push(leaf);
    }
    let mut groups: Vec<Vec<NodeId>> = by_root.into_values().collect();
    groups.sort();

    let classes = if fallback {
        Vec::new()
    } else {
        groups.iter().map(|grp| group_constraints(grp, approx, env)).collect()
    };
    CutSystem { root, expanded, groups, phi: ConstraintSystem { classes }, identity, fallback }
}

/// Interval and pairwise-correlation constraints on one group's joint
/// distribution. Every row holds for the true distribution of the leaves.
fn group_constraints(grp: &[NodeId], approx: &ApproxResult, env: &CorrEnv) -> ClassSystem {
    let k = grp.len();
    let dim = 1usize << k;
    let bit = |b: usize, i: usize| (b >> (k - 1 - i)) & 1 == 1;
    let ind = |f: &dyn Fn(usize) -> bool| -> Vec<f64> { (0..dim).map(|b| f64::from(u8::from(f(b)))).collect() };
    let neg = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| -x).collect() };
    let mut cs = ClassSystem { width: k as u32, materialized: true, rows: Vec::new(), le_rows: Vec::new() };
    let iv: Vec<Interval> = grp.iter().map(|&v| approx.bounds[v]).collect();
    for (i, b_i) in iv.iter().enumerate() {
        let row = ind(&|b| bit(b, i));
        if b_i.width() <= 0.0 {
            cs.rows.push((row, b_i.lo));
            continue;
        }
        if b_i.lo > 0.0 {
            cs.le_rows.push((neg(&row), -b_i.lo));
        }
        if b_i.hi < 1.0 {
            cs.le_rows.push((row, b_i.hi));
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let both = ind(&|b| bit(b, i) && bit(b, j));
            match env.expr_pair(&approx.deps[grp[i]], &approx.deps[grp[j]]) {
                CorrType::Pos => {
                    let lo = iv[i].lo * iv[j].lo;
                    if lo > 0.0 {
                        cs.le_rows.push((neg(&both), -lo));
                    }
                }
                CorrType::Neg => {
                    let hi = iv[i].hi * iv[j].hi;
                    if hi < iv[i].hi.min(iv[j].hi) {
                        cs.le_rows.push((both, hi));
                    }
                }
                CorrType::Indep => {
                    let point = if iv[j].width() <= 0.0 {
                        Some((i, iv[j].lo))
                    } else if iv[i].width() <= 0.0 {
                        Some((j, iv[i].lo))
                    } else {
                        None
                    };
                    match point {
                        Some((other, c)) => {
                            let single = ind(&|b| bit(b, other));
                            let row: Vec<f64> = both.iter().zip(&single).map(|(a, s)| a - c * s).collect();
                            cs.rows.push((row, 0.0));
                        }
                        None => {
                            let lo = iv[i].lo * iv[j].lo;
                            if lo > 0.0 {
                                cs.le_rows.push((neg(&both), -lo));
                            }
                            cs.le_rows.push((both, iv[i].hi * iv[j].hi));
                        }
                    }
                }
                CorrType::Unknown => {}
            }
        }
    }
    cs
}

/// Outer range of the root's probability from the cut encoding, intersected
/// with the approximate interval.
pub fn cut_range(g: &DerivationGraph, cut: &CutSystem, approx: &ApproxResult, cfg: &OptConfig) -> Interval {
    let base = approx.bounds[cut.root];
    if cut.fallback {
        return base;
    }
    let mut slot: HashMap<NodeId, (usize, usize)> = HashMap::new();
    for (gi, grp) in cut.groups.iter().enumerate() {
        for (m, &v) in grp.iter().enumerate() {
            slot.insert(v, (gi, m));
        }
    }
    let widths = cut.groups.iter().map(|g| g.len() as u32).collect();
    let mut builder = ObjectiveBuilder::new(g, move |v| slot.get(&v).copied(), widths, 20);
    let Ok(expr) = builder.build(cut.root) else {
        return base;
    };
    let probs: Vec<f64> = g.rules.iter().map(|r| r.prob).collect();
    let obj = expr.substitute(&probs);
    match Optimizer::new(&cut.phi, cfg.clone()).optimize(&obj) {
        Ok(r) if r.exact() => {
            let lo = r.min.max(base.lo);
            let hi = r.max.min(base.hi);
            if lo <= hi + 1e-9 {
                Interval::new(lo.min(hi), hi.max(lo))
            } else {
                base
            }
        }
        _ => base,
    }
}
