//! Grounding into a derivation hypergraph.
//!
//! Every ground rule application becomes a hyperedge `(head, B+, B-, rule)`.
//! Alternative derivations of one fact are kept as separate hyperedges, and
//! recursion is unfolded so the result is acyclic.

mod cycles;
mod eval;

use std::collections::HashMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use thiserror::Error;

use crate::frontend::{Atom, FactId, Program};

pub use cycles::break_cycles;

pub type NodeId = usize;
/// Index into [`DerivationGraph::rules`]; one per ground rule instance.
pub type GroundRuleId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundError {
    #[error("relation `{relation}` depends negatively on itself through recursion")]
    NonStratified { relation: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Input(FactId),
    Output,
    /// Intermediate layer of an unfolded recursive fact.
    Aux { of: NodeId, level: usize },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub atom: Atom,
    pub kind: NodeKind,
}

impl Node {
    pub fn name(&self) -> String {
        match self.kind {
            NodeKind::Aux { level, .. } => format!("{}@{}", self.atom, level),
            _ => self.atom.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperEdge {
    pub head: NodeId,
    pub pos: Vec<NodeId>,
    pub neg: Vec<NodeId>,
    pub rule: GroundRuleId,
}

#[derive(Debug, Clone)]
pub struct GroundRule {
    /// Index of the source rule in the program.
    pub rule: usize,
    /// Variable bindings of this instance.
    pub subst: Vec<(String, String)>,
    pub prob: f64,
}

impl GroundRule {
    /// Rules that always or never fire carry no random event.
    pub fn is_event(&self) -> bool {
        self.prob > 0.0 && self.prob < 1.0
    }
}

#[derive(Debug, Clone)]
pub struct DerivationGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<HyperEdge>,
    pub rules: Vec<GroundRule>,
    /// Hyperedges grouped by head, in insertion order.
    pub out: Vec<Vec<usize>>,
    /// Every node after all of its body nodes.
    pub topo: Vec<NodeId>,
    index: HashMap<Atom, NodeId>,
}

impl DerivationGraph {
    /// Builds the graph, dropping facts that no derivation can reach.
    pub(crate) fn assemble(nodes: Vec<Node>, edges: Vec<HyperEdge>, rules: Vec<GroundRule>) -> Self {
        let n = nodes.len();
        let mut alive: Vec<bool> = nodes.iter().map(|x| matches!(x.kind, NodeKind::Input(_))).collect();
        loop {
            let mut changed = false;
            for e in &edges {
                if !alive[e.head] && e.pos.iter().all(|&b| alive[b]) {
                    alive[e.head] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut remap = vec![usize::MAX; n];
        let mut kept = Vec::new();
        for (i, node) in nodes.into_iter().enumerate() {
            if alive[i] {
                remap[i] = kept.len();
                kept.push(node);
            }
        }
        for node in &mut kept {
            if let NodeKind::Aux { of, .. } = &mut node.kind {
                *of = remap[*of];
            }
        }
        let mut new_edges: Vec<HyperEdge> = Vec::new();
        for e in edges {
            if !alive[e.head] || e.pos.iter().any(|&b| !alive[b]) {
                continue;
            }
            new_edges.push(HyperEdge {
                head: remap[e.head],
                pos: e.pos.iter().map(|&b| remap[b]).collect(),
                neg: e.neg.iter().filter(|&&b| alive[b]).map(|&b| remap[b]).collect(),
                rule: e.rule,
            });
        }

        let mut out = vec![Vec::new(); kept.len()];
        for (i, e) in new_edges.iter().enumerate() {
            out[e.head].push(i);
        }
        let index = kept
            .iter()
            .enumerate()
            .filter(|(_, x)| !matches!(x.kind, NodeKind::Aux { .. }))
            .map(|(i, x)| (x.atom.clone(), i))
            .collect();
        let mut g = DerivationGraph { nodes: kept, edges: new_edges, rules, out, topo: Vec::new(), index };
        g.topo = g.compute_topo();
        g
    }

    fn compute_topo(&self) -> Vec<NodeId> {
        let n = self.nodes.len();
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack: Vec<(NodeId, bool)> = vec![(root, false)];
            while let Some((v, expanded)) = stack.pop() {
                if expanded {
                    if state[v] == 1 {
                        state[v] = 2;
                        order.push(v);
                    }
                    continue;
                }
                if state[v] != 0 {
                    continue;
                }
                state[v] = 1;
                stack.push((v, true));
                for &e in &self.out[v] {
                    for &b in self.edges[e].pos.iter().chain(&self.edges[e].neg) {
                        if state[b] == 0 {
                            stack.push((b, false));
                        }
                    }
                }
            }
        }
        order
    }

    pub fn node_of(&self, atom: &Atom) -> Option<NodeId> {
        self.index.get(atom).copied()
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        matches!(self.nodes[n].kind, NodeKind::Input(_))
    }

    pub fn fact_of(&self, n: NodeId) -> Option<FactId> {
        match self.nodes[n].kind {
            NodeKind::Input(f) => Some(f),
            _ => None,
        }
    }

    /// Derived facts, excluding unfolding layers.
    pub fn outputs(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Output).collect()
    }

    /// Nodes reachable from `root` (inclusive) in topological order.
    pub fn cone(&self, root: NodeId) -> Vec<NodeId> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack = vec![root];
        mark[root] = true;
        while let Some(v) = stack.pop() {
            for &e in &self.out[v] {
                for &b in self.edges[e].pos.iter().chain(&self.edges[e].neg) {
                    if !mark[b] {
                        mark[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        self.topo.iter().copied().filter(|&v| mark[v]).collect()
    }

    /// Human-readable rule event names: `r3` for a rule with one ground
    /// instance, `r3_2` for the second instance of a rule with several.
    pub fn rule_labels(&self) -> Vec<String> {
        let mut count: HashMap<usize, usize> = HashMap::new();
        for r in &self.rules {
            *count.entry(r.rule).or_default() += 1;
        }
        let mut seen: HashMap<usize, usize> = HashMap::new();
        self.rules
            .iter()
            .map(|r| {
                let k = seen.entry(r.rule).or_default();
                *k += 1;
                if count[&r.rule] == 1 {
                    format!("r{}", r.rule + 1)
                } else {
                    format!("r{}_{}", r.rule + 1, k)
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct NodeOut {
            id: usize,
            atom: String,
            kind: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            level: Option<usize>,
        }
        #[derive(Serialize)]
        struct EdgeOut {
            head: usize,
            pos: Vec<usize>,
            neg: Vec<usize>,
            rule: String,
            source_rule: usize,
            prob: f64,
        }
        #[derive(Serialize)]
        struct GraphOut {
            nodes: Vec<NodeOut>,
            hyperedges: Vec<EdgeOut>,
        }
        let labels = self.rule_labels();
        let out = GraphOut {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeOut {
                    id,
                    atom: n.atom.to_string(),
                    kind: match n.kind {
                        NodeKind::Input(_) => "input",
                        NodeKind::Output => "output",
                        NodeKind::Aux { .. } => "aux",
                    },
                    level: match n.kind {
                        NodeKind::Aux { level, .. } => Some(level),
                        _ => None,
                    },
                })
                .collect(),
            hyperedges: self
                .edges
                .iter()
                .map(|e| EdgeOut {
                    head: e.head,
                    pos: e.pos.clone(),
                    neg: e.neg.clone(),
                    rule: labels[e.rule].clone(),
                    source_rule: self.rules[e.rule].rule,
                    prob: self.rules[e.rule].prob,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&out).expect("graph serializes")
    }
}

fn check_stratified(program: &Program) -> Result<(), GroundError> {
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut g: DiGraph<String, bool> = DiGraph::new();
    let mut node = |g: &mut DiGraph<String, bool>, rel: String| {
        *ids.entry(rel.clone()).or_insert_with(|| g.add_node(rel).index() as u32)
    };
    let mut neg_edges = Vec::new();
    for r in &program.rules {
        let h = node(&mut g, r.head.relation());
        for l in &r.body {
            let b = node(&mut g, l.atom.relation());
            g.add_edge(h.into(), b.into(), l.negated);
            if l.negated {
                neg_edges.push((h, b, r.head.relation()));
            }
        }
    }
    let mut comp = vec![usize::MAX; g.node_count()];
    for (ci, scc) in tarjan_scc(&g).into_iter().enumerate() {
        for x in scc {
            comp[x.index()] = ci;
        }
    }
    for (h, b, rel) in neg_edges {
        if comp[h as usize] == comp[b as usize] {
            return Err(GroundError::NonStratified { relation: rel });
        }
    }
    Ok(())
}

/// Builds the possibly cyclic derivation hypergraph of `program`.
pub fn ground_cyclic(program: &Program) -> Result<DerivationGraph, GroundError> {
    check_stratified(program)?;
    let (instances, derived) = eval::evaluate(program);

    let mut nodes: Vec<Node> = program
        .facts
        .iter()
        .enumerate()
        .map(|(i, a)| Node { atom: a.clone(), kind: NodeKind::Input(i) })
        .collect();
    let mut index: HashMap<Atom, NodeId> = nodes.iter().enumerate().map(|(i, x)| (x.atom.clone(), i)).collect();
    for a in derived {
        index.insert(a.clone(), nodes.len());
        nodes.push(Node { atom: a, kind: NodeKind::Output });
    }

    let mut rules = Vec::with_capacity(instances.len());
    let mut edges = Vec::with_capacity(instances.len());
    for inst in instances {
        let vars = program.rules[inst.rule].variables();
        rules.push(GroundRule {
            rule: inst.rule,
            subst: vars.into_iter().zip(inst.values).collect(),
            prob: program.rules[inst.rule].prob,
        });
        edges.push(HyperEdge {
            head: index[&inst.head],
            pos: inst.pos.iter().map(|a| index[a]).collect(),
            // a negated atom that can never hold is dropped
            neg: inst.neg.iter().filter_map(|a| index.get(a).copied()).collect(),
            rule: rules.len() - 1,
        });
    }
    Ok(DerivationGraph::assemble(nodes, edges, rules))
}

/// Grounds `program` and returns its output facts with the acyclic graph.
pub fn solve_standard(program: &Program) -> Result<(Vec<NodeId>, DerivationGraph), GroundError> {
    solve_with_depth(program, None)
}

/// As [`solve_standard`] with an explicit cap on recursion unfolding depth.
pub fn solve_with_depth(program: &Program, depth: Option<usize>) -> Result<(Vec<NodeId>, DerivationGraph), GroundError> {
    let g = break_cycles(ground_cyclic(program)?, depth);
    Ok((g.outputs(), g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    None,
    Pos,
    Neg,
    Both,
}

impl Polarity {
    fn from_bits(b: u8) -> Self {
        match b {
            0 => Polarity::None,
            1 => Polarity::Pos,
            2 => Polarity::Neg,
            _ => Polarity::Both,
        }
    }
}

/// One signed edge per (hyperedge, body literal).
#[derive(Debug, Clone)]
pub struct FlatGraph {
    pub node_count: usize,
    pub edges: Vec<(NodeId, NodeId, i8)>,
    pub adj: Vec<Vec<(NodeId, i8)>>,
    topo: Vec<NodeId>,
}

pub fn flatten(g: &DerivationGraph) -> FlatGraph {
    let mut edges = Vec::new();
    let mut adj = vec![Vec::new(); g.nodes.len()];
    for e in &g.edges {
        for &b in &e.pos {
            edges.push((e.head, b, 1));
            adj[e.head].push((b, 1));
        }
        for &b in &e.neg {
            edges.push((e.head, b, -1));
            adj[e.head].push((b, -1));
        }
    }
    FlatGraph { node_count: g.nodes.len(), edges, adj, topo: g.topo.clone() }
}

/// Signs of the paths from `out` to `inp`.
pub fn depends(fg: &FlatGraph, out: NodeId, inp: NodeId) -> Polarity {
    // bit 0: some positive path, bit 1: some negative path
    let mut bits = vec![0u8; fg.node_count];
    bits[inp] = 1;
    for &v in &fg.topo {
        if v == inp {
            continue;
        }
        let mut b = 0u8;
        for &(c, s) in &fg.adj[v] {
            let cb = bits[c];
            b |= if s > 0 { cb } else { ((cb & 1) << 1) | ((cb & 2) >> 1) };
        }
        bits[v] = b;
        if v == out {
            break;
        }
    }
    Polarity::from_bits(bits[out])
}

#[cfg(test)]
mod tests;
