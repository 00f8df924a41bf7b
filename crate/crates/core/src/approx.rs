//! Sound probability intervals by bottom-up propagation.
//!
//! Each derived fact is a disjunction over its hyperedges of a conjunction of
//! its body literals, tagged with the rule probability. Binary conjunctions
//! and disjunctions are bounded from the operand bounds and their correlation
//! type; longer ones fold left to right.

use std::fmt;

use crate::constraints::ConstraintSystem;
use crate::corrtypes::{node_dep_sets, CorrEnv, CorrType, DepSets};
use crate::frontend::Program;
use crate::grounder::{DerivationGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo: lo.clamp(0.0, 1.0), hi: hi.clamp(0.0, 1.0).max(lo.clamp(0.0, 1.0)) }
    }

    pub fn point(x: f64) -> Self {
        Interval::new(x, x)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, other: &Interval, tol: f64) -> bool {
        self.lo <= other.lo + tol && other.hi <= self.hi + tol
    }

    fn not(self) -> Self {
        Interval::new(1.0 - self.hi, 1.0 - self.lo)
    }

    fn scale(self, p: f64) -> Self {
        Interval::new(self.lo * p, self.hi * p)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    AndLow,
    AndHigh,
    OrLow,
    OrHigh,
}

/// Bound on a binary conjunction or disjunction of events with
/// probabilities `a` and `b`.
pub fn combine(op: Op, a: f64, b: f64, t: CorrType) -> f64 {
    use CorrType::*;
    let indep_or = 1.0 - (1.0 - a) * (1.0 - b);
    let v = match (op, t) {
        (Op::AndLow, Pos | Indep) => a * b,
        (Op::AndLow, Neg | Unknown) => (a + b - 1.0).max(0.0),
        (Op::AndHigh, Pos | Unknown) => a.min(b),
        (Op::AndHigh, Neg | Indep) => a * b,
        (Op::OrLow, Pos | Unknown) => a.max(b),
        (Op::OrLow, Neg | Indep) => indep_or,
        (Op::OrHigh, Pos | Indep) => indep_or,
        (Op::OrHigh, Neg | Unknown) => (a + b).min(1.0),
    };
    v.clamp(0.0, 1.0)
}

fn and(a: Interval, b: Interval, t: CorrType) -> Interval {
    Interval::new(combine(Op::AndLow, a.lo, b.lo, t), combine(Op::AndHigh, a.hi, b.hi, t))
}

fn or(a: Interval, b: Interval, t: CorrType) -> Interval {
    Interval::new(combine(Op::OrLow, a.lo, b.lo, t), combine(Op::OrHigh, a.hi, b.hi, t))
}

/// One-level derivation expression of a node, with body nodes as atoms.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivExpr {
    Atom(NodeId),
    Not(Box<DerivExpr>),
    And(Vec<DerivExpr>),
    /// Disjuncts tagged with their rule probability.
    Or(Vec<(DerivExpr, f64)>),
}

impl DerivExpr {
    /// Number of atoms in the expression.
    pub fn size(&self) -> usize {
        match self {
            DerivExpr::Atom(_) => 1,
            DerivExpr::Not(e) => e.size(),
            DerivExpr::And(es) => es.iter().map(DerivExpr::size).sum(),
            DerivExpr::Or(es) => es.iter().map(|e| e.0.size()).sum(),
        }
    }

    pub fn render(&self, g: &DerivationGraph) -> String {
        match self {
            DerivExpr::Atom(n) => g.nodes[*n].name(),
            DerivExpr::Not(e) => format!("\\+{}", e.render(g)),
            DerivExpr::And(es) if es.is_empty() => "true".into(),
            DerivExpr::And(es) => es.iter().map(|e| e.render(g)).collect::<Vec<_>>().join(" & "),
            DerivExpr::Or(es) if es.is_empty() => "false".into(),
            DerivExpr::Or(es) => {
                es.iter().map(|(e, p)| format!("({}, {})", e.render(g), p)).collect::<Vec<_>>().join(" | ")
            }
        }
    }
}

pub fn deriv_expr(g: &DerivationGraph, n: NodeId) -> DerivExpr {
    if g.is_leaf(n) {
        return DerivExpr::Atom(n);
    }
    DerivExpr::Or(
        g.out[n]
            .iter()
            .map(|&e| {
                let edge = &g.edges[e];
                let body = edge
                    .pos
                    .iter()
                    .map(|&b| DerivExpr::Atom(b))
                    .chain(edge.neg.iter().map(|&b| DerivExpr::Not(Box::new(DerivExpr::Atom(b)))))
                    .collect();
                (DerivExpr::And(body), g.rules[edge.rule].prob)
            })
            .collect(),
    )
}

/// Interval of every input fact: the range of its probability over its
/// class polytope, or the declared marginal for classes left out.
pub fn input_intervals(p: &Program, phi: &ConstraintSystem) -> Vec<Interval> {
    (0..p.facts.len())
        .map(|f| {
            let (c, m) = p.class_of(f);
            let cs = &phi.classes[c];
            if !cs.materialized {
                return p.marginal(f).map(Interval::point).unwrap_or(Interval::new(0.0, 1.0));
            }
            let w = cs.width as usize;
            let coefs: Vec<f64> = (0..cs.dim()).map(|b| f64::from(((b >> (w - 1 - m)) & 1) as u8)).collect();
            match crate::optimizer::linear_range(cs, &coefs) {
                Ok((lo, hi)) => Interval::new(lo, hi),
                Err(_) => Interval::new(0.0, 1.0),
            }
        })
        .collect()
}

/// Bounds and dependency sets for every node of the graph.
#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub bounds: Vec<Interval>,
    pub deps: Vec<DepSets>,
}

pub fn approx_bounds(g: &DerivationGraph, inputs: &[Interval], env: &CorrEnv) -> ApproxResult {
    let facts = inputs.len();
    let deps = node_dep_sets(g, facts);
    let items = env.items(g.rules.len());
    let mut bounds = vec![Interval::point(0.0); g.nodes.len()];
    for &v in &g.topo {
        if let Some(f) = g.fact_of(v) {
            bounds[v] = inputs[f];
            continue;
        }
        let mut acc: Option<(Interval, DepSets)> = None;
        for &ei in &g.out[v] {
            let edge = &g.edges[ei];
            let p = g.rules[edge.rule].prob;
            if p <= 0.0 {
                continue;
            }
            let mut conj: Option<(Interval, DepSets)> = None;
            let lits = edge
                .pos
                .iter()
                .map(|&b| (bounds[b], deps[b].clone()))
                .chain(edge.neg.iter().map(|&b| (bounds[b].not(), deps[b].negate())));
            for (iv, d) in lits {
                conj = Some(match conj {
                    None => (iv, d),
                    Some((ci, mut cd)) => {
                        let t = env.expr_pair(&cd, &d);
                        cd.union_with(&d);
                        (and(ci, iv, t), cd)
                    }
                });
            }
            let (mut iv, mut d) = conj.unwrap_or((Interval::point(1.0), DepSets::empty(items)));
            if g.rules[edge.rule].is_event() {
                iv = iv.scale(p);
                d.pos.insert(env.rule_item(edge.rule));
            }
            acc = Some(match acc {
                None => (iv, d),
                Some((ai, mut ad)) => {
                    let t = env.expr_pair(&ad, &d);
                    ad.union_with(&d);
                    (or(ai, iv, t), ad)
                }
            });
        }
        bounds[v] = acc.map(|a| a.0).unwrap_or(Interval::point(0.0));
    }
    ApproxResult { bounds, deps }
}
