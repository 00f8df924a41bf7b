//! Ground truth for testing: possible-worlds enumeration and the exact
//! optimizer under a stable name.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::approx::Interval;
use crate::constraints::ConstraintSystem;
use crate::frontend::Program;
use crate::grounder::{DerivationGraph, NodeId, NodeKind};
use crate::optimizer::{OptConfig, OptError, Optimizer};
use crate::symexpr::{gen_objective, SymError};

/// Largest number of fact and event bits enumerated.
pub const MAX_WORLD_BITS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{bits} fact and event bits exceed the enumeration cap of {cap}")]
    Scale { bits: u32, cap: u32 },
    #[error(transparent)]
    Template(#[from] SymError),
    #[error(transparent)]
    Optimizer(#[from] OptError),
}

/// One feasible joint distribution: per-class distributions over local
/// assignments (first member most significant) and rule probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldDistribution {
    pub classes: Vec<Vec<f64>>,
    pub rule_probs: Vec<f64>,
}

impl WorldDistribution {
    /// `alpha * self + (1 - alpha) * other`, class by class.
    pub fn mix(&self, other: &WorldDistribution, alpha: f64) -> WorldDistribution {
        let classes = self
            .classes
            .iter()
            .zip(&other.classes)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect())
            .collect();
        WorldDistribution { classes, rule_probs: self.rule_probs.clone() }
    }
}

/// Probability that every node of `nodes` is derived.
pub fn joint_prob(
    program: &Program,
    g: &DerivationGraph,
    nodes: &[NodeId],
    mu: &WorldDistribution,
) -> Result<f64, OracleError> {
    let mut mark = vec![false; g.nodes.len()];
    for &n in nodes {
        for v in g.cone(n) {
            mark[v] = true;
        }
    }
    let order: Vec<NodeId> = g.topo.iter().copied().filter(|&v| mark[v]).collect();

    let mut classes: Vec<usize> = order
        .iter()
        .filter_map(|&v| g.fact_of(v))
        .map(|f| program.class_of(f).0)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut events: Vec<usize> = order
        .iter()
        .flat_map(|&v| g.out[v].iter().map(|&e| g.edges[e].rule))
        .filter(|&r| mu.rule_probs[r] > 0.0 && mu.rule_probs[r] < 1.0)
        .collect();
    events.sort_unstable();
    events.dedup();

    let widths: Vec<u32> = classes.iter().map(|&c| program.classes[c].len() as u32).collect();
    let bits = widths.iter().sum::<u32>() + events.len() as u32;
    if bits > MAX_WORLD_BITS {
        return Err(OracleError::Scale { bits, cap: MAX_WORLD_BITS });
    }

    let total = (0u64..1 << bits)
        .into_par_iter()
        .map(|w| {
            let mut rest = w;
            let mut pw = 1.0;
            let mut facts = vec![false; program.facts.len()];
            for (&c, &k) in classes.iter().zip(&widths).rev() {
                let local = (rest & ((1 << k) - 1)) as usize;
                rest >>= k;
                pw *= mu.classes[c][local];
                for (m, &f) in program.classes[c].members.iter().enumerate() {
                    facts[f] = (local >> (k as usize - 1 - m)) & 1 == 1;
                }
            }
            if pw == 0.0 {
                return 0.0;
            }
            let mut fires: Vec<bool> = mu.rule_probs.iter().map(|&p| p >= 1.0).collect();
            for &r in events.iter().rev() {
                let on = rest & 1 == 1;
                rest >>= 1;
                fires[r] = on;
                pw *= if on { mu.rule_probs[r] } else { 1.0 - mu.rule_probs[r] };
            }
            let mut val = vec![false; g.nodes.len()];
            for &v in &order {
                val[v] = match g.nodes[v].kind {
                    NodeKind::Input(f) => facts[f],
                    _ => g.out[v].iter().any(|&e| {
                        let e = &g.edges[e];
                        fires[e.rule] && e.pos.iter().all(|&b| val[b]) && e.neg.iter().all(|&b| !val[b])
                    }),
                };
            }
            if nodes.iter().all(|&n| val[n]) {
                pw
            } else {
                0.0
            }
        })
        .sum();
    Ok(total)
}

/// `P_μ(o)` by summing over all worlds relevant to `o`.
pub fn world_prob(program: &Program, g: &DerivationGraph, o: NodeId, mu: &WorldDistribution) -> Result<f64, OracleError> {
    joint_prob(program, g, &[o], mu)
}

/// Random feasible distribution: every class takes a flat-Dirichlet mixture
/// of its polytope's vertices.
pub fn sample_distribution(
    opt: &Optimizer<'_>,
    g: &DerivationGraph,
    rng: &mut impl Rng,
) -> Result<WorldDistribution, OracleError> {
    let mut classes = Vec::new();
    for c in 0..opt.system().classes.len() {
        let verts = opt.class_vertices(c).as_ref().map_err(Clone::clone)?;
        let w: Vec<f64> = verts.iter().map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
        let s: f64 = w.iter().sum();
        let mut x = vec![0.0; verts[0].len()];
        for (v, wi) in verts.iter().zip(&w) {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += wi / s * b);
        }
        classes.push(x);
    }
    Ok(WorldDistribution { classes, rule_probs: g.rules.iter().map(|r| r.prob).collect() })
}

/// Exact range of `P(o)` over all feasible distributions.
pub fn exact_interval_oracle(
    program: &Program,
    phi: &ConstraintSystem,
    g: &DerivationGraph,
    o: NodeId,
    cfg: &OptConfig,
) -> Result<Interval, OracleError> {
    let probs: Vec<f64> = g.rules.iter().map(|r| r.prob).collect();
    let obj = gen_objective(program, g, o, 20)?.substitute(&probs);
    let r = Optimizer::new(phi, cfg.clone()).optimize(&obj)?;
    Ok(Interval::new(r.min, r.max))
}
