//! Correlation types between input facts and between derivation expressions.
//!
//! Input pairs in one class are decided from the constraints: the sign of
//! `D = P(I1 ∧ I2) - P(I1)·P(I2)` over the class polytope is bounded by
//! spatial branch and bound on the product term with McCormick envelopes.
//! Expression pairs are decided statically from signed dependency sets.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use fixedbitset::FixedBitSet;

use crate::constraints::{ClassSystem, ConstraintSystem};
use crate::frontend::{FactId, Program};
use crate::grounder::DerivationGraph;
use crate::lp::{Cmp, Lp};

/// Margin by which `D` must clear zero for a strict verdict.
pub const SIGN_TOL: f64 = 1e-7;
/// LP solves per branch-and-bound run.
const BB_BUDGET: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrType {
    Pos,
    Neg,
    Indep,
    Unknown,
}

impl CorrType {
    fn flip(self) -> CorrType {
        match self {
            CorrType::Pos => CorrType::Neg,
            CorrType::Neg => CorrType::Pos,
            t => t,
        }
    }
}

impl fmt::Display for CorrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrType::Pos => "+",
            CorrType::Neg => "-",
            CorrType::Indep => "indep",
            CorrType::Unknown => "unknown",
        })
    }
}

/// Minimizes `w·V + b·(s·V)(t·V)` over the class polytope. Returns a lower
/// bound and the best value found at a feasible point.
fn branch_and_bound(cs: &ClassSystem, w: &[f64], s: &[f64], t: &[f64], b: f64) -> Option<(f64, f64)> {
    let base = cs.lp();
    let n = cs.dim();
    let dot = |a: &[f64], x: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    let range = |c: &[f64]| -> Option<(f64, f64)> {
        let lo = base.solve(c, false).ok()?.0;
        let hi = base.solve(c, true).ok()?.0;
        Some((lo, hi))
    };
    let (s0, t0) = (range(s)?, range(t)?);
    let value = |x: &[f64]| dot(w, x) + b * dot(s, x) * dot(t, x);

    // relaxation over the box [sl,su] x [tl,tu]
    let relax = |sb: (f64, f64), tb: (f64, f64)| -> Option<(f64, Vec<f64>)> {
        let mut lp = base.clone();
        let z = lp.add_var(-1.0, 2.0);
        let sv: Vec<(usize, f64)> = (0..n).map(|i| (i, s[i])).collect();
        let tv: Vec<(usize, f64)> = (0..n).map(|i| (i, t[i])).collect();
        lp.add_row(sv.clone(), Cmp::Ge, sb.0 - 1e-12);
        lp.add_row(sv, Cmp::Le, sb.1 + 1e-12);
        lp.add_row(tv.clone(), Cmp::Ge, tb.0 - 1e-12);
        lp.add_row(tv, Cmp::Le, tb.1 + 1e-12);
        // z ≥ sl·t + tl·s − sl·tl etc. written as rows over V and z
        let env = |ks: f64, kt: f64, c: f64, cmp: Cmp, lp: &mut Lp| {
            let mut row: Vec<(usize, f64)> = (0..n).map(|i| (i, -(ks * s[i] + kt * t[i]))).collect();
            row.push((z, 1.0));
            lp.add_row(row, cmp, -c);
        };
        if b > 0.0 {
            env(tb.0, sb.0, sb.0 * tb.0, Cmp::Ge, &mut lp);
            env(tb.1, sb.1, sb.1 * tb.1, Cmp::Ge, &mut lp);
        } else {
            env(tb.0, sb.1, sb.1 * tb.0, Cmp::Le, &mut lp);
            env(tb.1, sb.0, sb.0 * tb.1, Cmp::Le, &mut lp);
        }
        let mut obj = w.to_vec();
        obj.push(b);
        lp.solve(&obj, false).ok().map(|(v, x)| (v, x[..n].to_vec()))
    };

    let (lb0, x0) = relax(s0, t0)?;
    let mut best = value(&x0);
    // (relaxed bound, box on s, box on t)
    type Node = (f64, (f64, f64), (f64, f64));
    let mut open: Vec<Node> = vec![(lb0, s0, t0)];
    let mut solves = 1;
    while solves < BB_BUDGET {
        open.sort_by(|a, b| b.0.total_cmp(&a.0));
        let Some(&(lb, sb, tb)) = open.last() else { break };
        if lb >= best - 1e-10 {
            break;
        }
        open.pop();
        let halves = if sb.1 - sb.0 >= tb.1 - tb.0 {
            let m = 0.5 * (sb.0 + sb.1);
            [((sb.0, m), tb), ((m, sb.1), tb)]
        } else {
            let m = 0.5 * (tb.0 + tb.1);
            [(sb, (tb.0, m)), (sb, (m, tb.1))]
        };
        for (hs, ht) in halves {
            solves += 1;
            if let Some((v, x)) = relax(hs, ht) {
                best = best.min(value(&x));
                if v < best - 1e-10 {
                    open.push((v.max(lb), hs, ht));
                }
            }
        }
    }
    let lb = open.iter().map(|o| o.0).fold(best, f64::min);
    Some((lb, best))
}

/// Decides the correlation of two members of one class.
pub fn infer_input_pair(p: &Program, phi: &ConstraintSystem, a: FactId, b: FactId) -> CorrType {
    let (ca, ma) = p.class_of(a);
    let (cb, mb) = p.class_of(b);
    if ca != cb {
        return CorrType::Indep;
    }
    if a == b && p.marginal(a).is_some_and(|x| x > 0.0 && x < 1.0) {
        return CorrType::Pos;
    }
    let cs = &phi.classes[ca];
    if !cs.materialized {
        return CorrType::Unknown;
    }
    let width = cs.width as usize;
    let ind = |m: usize| -> Vec<f64> { (0..cs.dim()).map(|x| f64::from(((x >> (width - 1 - m)) & 1) as u8)).collect() };
    let (s, t) = (ind(ma), ind(mb));
    let w: Vec<f64> = s.iter().zip(&t).map(|(x, y)| x * y).collect();
    let neg_w: Vec<f64> = w.iter().map(|x| -x).collect();
    let Some((min_lb, _)) = branch_and_bound(cs, &w, &s, &t, -1.0) else {
        return CorrType::Unknown;
    };
    let Some((neg_max_lb, _)) = branch_and_bound(cs, &neg_w, &s, &t, 1.0) else {
        return CorrType::Unknown;
    };
    let max_ub = -neg_max_lb;
    if min_lb > SIGN_TOL {
        CorrType::Pos
    } else if max_ub < -SIGN_TOL {
        CorrType::Neg
    } else if min_lb >= -SIGN_TOL && max_ub <= SIGN_TOL {
        CorrType::Indep
    } else {
        CorrType::Unknown
    }
}

/// Items an expression depends on, split by polarity. Items `0..facts` are
/// input facts; item `facts + r` is the firing of ground rule `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSets {
    pub pos: FixedBitSet,
    pub neg: FixedBitSet,
}

impl DepSets {
    pub fn empty(items: usize) -> Self {
        DepSets { pos: FixedBitSet::with_capacity(items), neg: FixedBitSet::with_capacity(items) }
    }

    pub fn item(items: usize, i: usize) -> Self {
        let mut d = DepSets::empty(items);
        d.pos.insert(i);
        d
    }

    pub fn negate(&self) -> Self {
        DepSets { pos: self.neg.clone(), neg: self.pos.clone() }
    }

    pub fn union_with(&mut self, other: &DepSets) {
        self.pos.union_with(&other.pos);
        self.neg.union_with(&other.neg);
    }

    pub fn all(&self) -> FixedBitSet {
        let mut a = self.pos.clone();
        a.union_with(&self.neg);
        a
    }
}

/// Dependency sets of every node, with rule events as items.
pub fn node_dep_sets(g: &DerivationGraph, facts: usize) -> Vec<DepSets> {
    let items = facts + g.rules.len();
    let mut deps = vec![DepSets::empty(items); g.nodes.len()];
    for &v in &g.topo {
        if let Some(f) = g.fact_of(v) {
            deps[v] = DepSets::item(items, f);
            continue;
        }
        let mut d = DepSets::empty(items);
        for &e in &g.out[v] {
            let edge = &g.edges[e];
            if g.rules[edge.rule].prob <= 0.0 {
                continue;
            }
            for &b in &edge.pos {
                d.union_with(&deps[b]);
            }
            for &b in &edge.neg {
                d.union_with(&deps[b].negate());
            }
            if g.rules[edge.rule].is_event() {
                d.pos.insert(facts + edge.rule);
            }
        }
        deps[v] = d;
    }
    deps
}

/// Correlation environment: input-pair verdicts (memoized) and the
/// expression-pair rules on top of them.
pub struct CorrEnv<'a> {
    program: &'a Program,
    phi: &'a ConstraintSystem,
    facts: usize,
    /// Any inferred verdict becomes unknown; class-disjointness is kept.
    force_unknown: bool,
    pairs: Arc<Mutex<HashMap<(FactId, FactId), CorrType>>>,
    lookups: AtomicUsize,
    budget: usize,
}

impl<'a> CorrEnv<'a> {
    pub fn new(program: &'a Program, phi: &'a ConstraintSystem, force_unknown: bool, budget: usize) -> Self {
        CorrEnv {
            program,
            phi,
            facts: program.facts.len(),
            force_unknown,
            pairs: Arc::new(Mutex::new(HashMap::new())),
            lookups: AtomicUsize::new(0),
            budget,
        }
    }

    /// Same environment with its own lookup budget; input-pair verdicts
    /// stay shared.
    pub fn fork(&self) -> CorrEnv<'a> {
        CorrEnv {
            program: self.program,
            phi: self.phi,
            facts: self.facts,
            force_unknown: self.force_unknown,
            pairs: Arc::clone(&self.pairs),
            lookups: AtomicUsize::new(0),
            budget: self.budget,
        }
    }

    pub fn items(&self, rules: usize) -> usize {
        self.facts + rules
    }

    pub fn rule_item(&self, rule: usize) -> usize {
        self.facts + rule
    }

    pub fn input_pair(&self, a: FactId, b: FactId) -> CorrType {
        let key = (a.min(b), a.max(b));
        if let Some(&t) = self.pairs.lock().expect("pair memo").get(&key) {
            return t;
        }
        let t = infer_input_pair(self.program, self.phi, key.0, key.1);
        self.pairs.lock().expect("pair memo").insert(key, t);
        t
    }

    /// Class of an item; every rule event is its own class.
    pub fn item_class(&self, item: usize) -> usize {
        if item < self.facts {
            self.program.class_of(item).0
        } else {
            self.program.classes.len() + item - self.facts
        }
    }

    /// Items of `d` keyed by class, or `None` when two items share a class.
    fn non_interfering(&self, d: &DepSets) -> Option<HashMap<usize, usize>> {
        let mut by_class = HashMap::new();
        for i in d.all().ones() {
            if by_class.insert(self.item_class(i), i).is_some() {
                return None;
            }
        }
        Some(by_class)
    }

    /// Correlation of two expressions from their dependency sets.
    pub fn expr_pair(&self, d1: &DepSets, d2: &DepSets) -> CorrType {
        let a1 = d1.all();
        let a2 = d2.all();
        let c1: std::collections::HashSet<usize> = a1.ones().map(|i| self.item_class(i)).collect();
        if a2.ones().all(|i| !c1.contains(&self.item_class(i))) {
            return CorrType::Indep;
        }
        if self.force_unknown || self.lookups.fetch_add(1, Ordering::Relaxed) >= self.budget {
            return CorrType::Unknown;
        }
        let (Some(m1), Some(m2)) = (self.non_interfering(d1), self.non_interfering(d2)) else {
            return CorrType::Unknown;
        };
        let (mut may_pos, mut may_neg) = (false, false);
        for (c, &x) in &m1 {
            let Some(&y) = m2.get(c) else { continue };
            let t = if x >= self.facts {
                CorrType::Pos
            } else {
                self.input_pair(x, y)
            };
            let t = match t {
                CorrType::Unknown => return CorrType::Unknown,
                CorrType::Indep => continue,
                t => t,
            };
            for (in1, s1) in [(d1.pos[x], 1), (d1.neg[x], -1)] {
                for (in2, s2) in [(d2.pos[y], 1), (d2.neg[y], -1)] {
                    if in1 && in2 {
                        match if s1 * s2 > 0 { t } else { t.flip() } {
                            CorrType::Pos => may_pos = true,
                            _ => may_neg = true,
                        }
                    }
                }
            }
        }
        match (may_pos, may_neg) {
            (true, false) => CorrType::Pos,
            (false, true) => CorrType::Neg,
            (false, false) => CorrType::Indep,
            (true, true) => CorrType::Unknown,
        }
    }

    /// Matrix of input-pair verdicts, one block per class of two or more.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (ci, class) in self.program.classes.iter().enumerate() {
            if class.len() < 2 {
                continue;
            }
            s.push_str(&format!("% class V{}\n", ci + 1));
            for (i, &a) in class.members.iter().enumerate() {
                for &b in &class.members[i + 1..] {
                    let t = if self.force_unknown { CorrType::Unknown } else { self.input_pair(a, b) };
                    s.push_str(&format!("{} {} {}\n", self.program.facts[a], self.program.facts[b], t));
                }
            }
        }
        s
    }
}
