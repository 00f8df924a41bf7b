use std::collections::HashMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{DerivationGraph, HyperEdge, Node, NodeId, NodeKind};

/// Unfolds recursive strongly connected components into iteration layers.
///
/// A node `v` in a cyclic component `S` becomes `v@1 .. v@(k-1)` plus the
/// original `v` as layer `k`, with `k = min(|S|, depth)`. Layer `j` is derived
/// from layer `j-1` copies of the component and the final copies of everything
/// outside it, so layer `|S|` holds exactly the fixpoint value of `v`. Layer
/// copies of one ground rule keep its rule id.
pub fn break_cycles(g: DerivationGraph, depth: Option<usize>) -> DerivationGraph {
    let n = g.nodes.len();
    let mut dg: DiGraph<(), ()> = DiGraph::with_capacity(n, g.edges.len());
    for _ in 0..n {
        dg.add_node(());
    }
    let mut self_loop = vec![false; n];
    for e in &g.edges {
        for &b in e.pos.iter().chain(&e.neg) {
            if b == e.head {
                self_loop[b] = true;
            }
            dg.add_edge((e.head as u32).into(), (b as u32).into(), ());
        }
    }

    let mut comp_of: Vec<Option<usize>> = vec![None; n];
    let mut comps: Vec<Vec<NodeId>> = Vec::new();
    for scc in tarjan_scc(&dg) {
        let members: Vec<NodeId> = scc.iter().map(|x| x.index()).collect();
        if members.len() > 1 || self_loop[members[0]] {
            for &m in &members {
                comp_of[m] = Some(comps.len());
            }
            comps.push(members);
        }
    }
    if comps.is_empty() {
        return g;
    }

    let DerivationGraph { mut nodes, edges, rules, .. } = g;
    let mut layers: Vec<usize> = Vec::with_capacity(comps.len());
    // copy[(v, j)] for layers 1..k-1; layer k is v itself
    let mut copy: HashMap<(NodeId, usize), NodeId> = HashMap::new();
    for members in &comps {
        let k = match depth {
            Some(d) if d < members.len() => {
                log::warn!("recursion unfolding capped at depth {d} for a component of {} facts", members.len());
                d.max(1)
            }
            _ => members.len(),
        };
        layers.push(k);
        for &v in members {
            for j in 1..k {
                let id = nodes.len();
                nodes.push(Node { atom: nodes[v].atom.clone(), kind: NodeKind::Aux { of: v, level: j } });
                copy.insert((v, j), id);
            }
        }
    }

    let layer_node = |v: NodeId, j: usize, k: usize| if j == k { v } else { copy[&(v, j)] };
    let mut out_edges = Vec::new();
    for e in edges {
        let Some(c) = comp_of[e.head] else {
            out_edges.push(e);
            continue;
        };
        let k = layers[c];
        for j in 1..=k {
            let inside = |b: &NodeId| comp_of[*b] == Some(c);
            if j == 1 && e.pos.iter().any(inside) {
                continue;
            }
            let pos = e.pos.iter().map(|&b| if inside(&b) { layer_node(b, j - 1, k) } else { b }).collect();
            let neg = e.neg.iter().map(|&b| if inside(&b) { layer_node(b, j - 1, k) } else { b }).collect();
            out_edges.push(HyperEdge { head: layer_node(e.head, j, k), pos, neg, rule: e.rule });
        }
    }
    DerivationGraph::assemble(nodes, out_edges, rules)
}
