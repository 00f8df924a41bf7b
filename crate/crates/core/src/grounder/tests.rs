use std::collections::{BTreeSet, HashMap, HashSet};

use proptest::prelude::*;

use super::*;
use crate::frontend::{parse, Atom, Program, Term};

use crate::testutil::PATHS;

fn a(s: &str) -> Atom {
    let (pred, rest) = s.split_once('(').unwrap_or((s, ")"));
    let args: Vec<&str> = rest.trim_end_matches(')').split(',').filter(|x| !x.is_empty()).collect();
    Atom::new(pred, &args)
}

fn universe(p: &Program) -> Vec<String> {
    let mut out = BTreeSet::new();
    for f in &p.facts {
        for t in &f.args {
            out.insert(t.to_string());
        }
    }
    for r in &p.rules {
        for at in std::iter::once(&r.head).chain(r.body.iter().map(|l| &l.atom)) {
            for t in &at.args {
                if let Term::Const(c) = t {
                    out.insert(c.clone());
                }
            }
        }
    }
    out.into_iter().collect()
}

fn subst(at: &Atom, vars: &[String], vals: &[String]) -> Atom {
    Atom {
        pred: at.pred.clone(),
        args: at
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => Term::Const(vals[vars.iter().position(|x| x == v).unwrap()].clone()),
                c => c.clone(),
            })
            .collect(),
    }
}

/// Every ground instance of every rule over the constants of the program.
fn all_instances(p: &Program) -> Vec<(usize, Atom, Vec<Atom>, Vec<Atom>)> {
    let u = universe(p);
    let mut out = Vec::new();
    for (ri, r) in p.rules.iter().enumerate() {
        let vars = r.variables();
        let mut idx = vec![0usize; vars.len()];
        loop {
            let vals: Vec<String> = idx.iter().map(|&i| u[i].clone()).collect();
            out.push((
                ri,
                subst(&r.head, &vars, &vals),
                r.body_pos().map(|b| subst(b, &vars, &vals)).collect(),
                r.body_neg().map(|b| subst(b, &vars, &vals)).collect(),
            ));
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < u.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }
    out
}

/// Stratified least model by brute-force grounding.
pub(crate) fn naive_model(p: &Program, true_facts: &HashSet<Atom>) -> HashSet<Atom> {
    let mut stratum: HashMap<String, usize> = HashMap::new();
    loop {
        let mut changed = false;
        for r in &p.rules {
            let mut s = 0;
            for l in &r.body {
                let b = stratum.get(&l.atom.relation()).copied().unwrap_or(0);
                s = s.max(if l.negated { b + 1 } else { b });
            }
            let h = stratum.entry(r.head.relation()).or_insert(0);
            if *h < s {
                *h = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let insts = all_instances(p);
    let max_s = stratum.values().copied().max().unwrap_or(0);
    let mut model: HashSet<Atom> = true_facts.clone();
    for s in 0..=max_s {
        loop {
            let mut changed = false;
            for (ri, h, pos, neg) in &insts {
                if stratum[&p.rules[*ri].head.relation()] != s || model.contains(h) {
                    continue;
                }
                if pos.iter().all(|b| model.contains(b)) && neg.iter().all(|b| !model.contains(b)) {
                    model.insert(h.clone());
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    model
}

/// Truth of every node when exactly `true_facts` hold and every rule fires.
pub(crate) fn eval_graph(g: &DerivationGraph, true_facts: &HashSet<Atom>) -> Vec<bool> {
    let mut val = vec![false; g.nodes.len()];
    for &v in &g.topo {
        val[v] = match g.nodes[v].kind {
            NodeKind::Input(_) => true_facts.contains(&g.nodes[v].atom),
            _ => g.out[v].iter().any(|&e| {
                let e = &g.edges[e];
                e.pos.iter().all(|&b| val[b]) && e.neg.iter().all(|&b| !val[b])
            }),
        };
    }
    val
}

fn derived_set(g: &DerivationGraph, val: &[bool]) -> HashSet<Atom> {
    (0..g.nodes.len())
        .filter(|&i| val[i] && !matches!(g.nodes[i].kind, NodeKind::Aux { .. }))
        .map(|i| g.nodes[i].atom.clone())
        .collect()
}

fn edge_strings(g: &DerivationGraph, head: &str) -> Vec<String> {
    let h = g.node_of(&a(head)).unwrap();
    g.out[h]
        .iter()
        .map(|&e| {
            let mut body: Vec<String> = g.edges[e].pos.iter().map(|&b| g.nodes[b].name()).collect();
            body.sort();
            body.join(" & ")
        })
        .collect()
}

#[test]
fn paths_graph_shape() {
    let p = parse(PATHS).unwrap();
    let (outs, g) = solve_standard(&p).unwrap();
    let mut e17 = edge_strings(&g, "path(1,7)");
    e17.sort();
    assert_eq!(e17, vec!["edge(5,7) & path(1,5)", "edge(6,7) & path(1,6)"]);
    assert_eq!(edge_strings(&g, "path(1,2)"), vec!["edge(1,2)"]);
    assert_eq!(edge_strings(&g, "path(1,5)"), vec!["edge(2,5) & path(1,2)"]);
    assert_eq!(edge_strings(&g, "path(1,6)"), vec!["edge(2,6) & path(1,2)"]);
    assert!(outs.iter().all(|&o| !g.is_leaf(o)));
    // topological order: body before head
    let pos: HashMap<NodeId, usize> = g.topo.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    for e in &g.edges {
        for &b in e.pos.iter().chain(&e.neg) {
            assert!(pos[&b] < pos[&e.head]);
        }
    }
}

#[test]
fn no_rules_gives_isolated_leaves() {
    let p = parse("0.2::a. 0.3::b(1).").unwrap();
    let (outs, g) = solve_standard(&p).unwrap();
    assert!(outs.is_empty());
    assert_eq!(g.nodes.len(), 2);
    assert!(g.edges.is_empty());
}

#[test]
fn chain_edge_count_matches_naive_firings() {
    let src = "0.5::e(1,2). 0.5::e(2,3). 0.5::e(3,4).
               p(X,Y) :- e(X,Y). p(X,Y) :- p(X,Z), e(Z,Y).";
    let p = parse(src).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let all: HashSet<Atom> = p.facts.iter().cloned().collect();
    let model = naive_model(&p, &all);
    let firings = all_instances(&p)
        .into_iter()
        .filter(|(_, _, pos, neg)| pos.iter().all(|b| model.contains(b)) && neg.iter().all(|b| !model.contains(b)))
        .count();
    assert_eq!(firings, 6);
    assert_eq!(g.edges.len(), firings);
}

#[test]
fn node_set_is_least_model() {
    let src = "0.5::e(a,b). 0.5::e(b,c). 0.5::e(c,a). 0.5::e(c,d). 0.5::s(a).
               r(X) :- s(X). r(Y) :- r(X), e(X,Y). two(X,Y) :- e(X,Z), e(Z,Y).";
    let p = parse(src).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let all: HashSet<Atom> = p.facts.iter().cloned().collect();
    let model = naive_model(&p, &all);
    let nodes: HashSet<Atom> = g
        .nodes
        .iter()
        .filter(|n| !matches!(n.kind, NodeKind::Aux { .. }))
        .map(|n| n.atom.clone())
        .collect();
    assert_eq!(nodes, model);
}

#[test]
fn negation_keeps_conditionally_derivable_heads() {
    let p = parse("0.5::i. b :- i. a :- \\+b.").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let an = g.node_of(&a("a")).unwrap();
    assert_eq!(g.out[an].len(), 1);
    assert_eq!(g.edges[g.out[an][0]].neg, vec![g.node_of(&a("b")).unwrap()]);
}

#[test]
fn negated_impossible_atom_is_dropped() {
    let p = parse("0.5::i. a :- i, \\+never(1). never(X) :- i, never(X).").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let an = g.node_of(&a("a")).unwrap();
    assert!(g.edges[g.out[an][0]].neg.is_empty());
    assert!(g.node_of(&a("never(1)")).is_none());
}

#[test]
fn non_stratified_rejected() {
    let p = parse("0.5::i. p :- i, \\+q. q :- i, \\+p.").unwrap();
    assert!(matches!(solve_standard(&p), Err(GroundError::NonStratified { .. })));
}

#[test]
fn mutual_recursion_is_unfolded() {
    let src = "0.6::e(1,2). 0.5::e(2,5). 0.5::e(5,2).
               path(X,Y) :- e(X,Y). path(X,Y) :- path(X,Z), e(Z,Y).";
    let p = parse(src).unwrap();
    let cyclic = ground_cyclic(&p).unwrap();
    let g = break_cycles(cyclic.clone(), None);
    assert!(g.nodes.iter().any(|n| matches!(n.kind, NodeKind::Aux { .. })));
    assert_eq!(g.topo.len(), g.nodes.len());
    // every world derives the same facts as the fixpoint
    let facts = p.facts.clone();
    for mask in 0..(1u32 << facts.len()) {
        let on: HashSet<Atom> = facts.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, f)| f.clone()).collect();
        assert_eq!(derived_set(&g, &eval_graph(&g, &on)), naive_model(&p, &on), "mask {mask}");
    }
}

#[test]
fn acyclic_graph_unchanged_by_unfolding() {
    let p = parse(PATHS).unwrap();
    let cyclic = ground_cyclic(&p).unwrap();
    let g = break_cycles(cyclic.clone(), None);
    assert_eq!(g.nodes.len(), cyclic.nodes.len());
    assert_eq!(g.edges, cyclic.edges);
}

#[test]
fn flatten_example_and_counts() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let fg = flatten(&g);
    let h = g.node_of(&a("path(1,5)")).unwrap();
    let mut from_h: Vec<(String, i8)> =
        fg.edges.iter().filter(|e| e.0 == h).map(|e| (g.nodes[e.1].name(), e.2)).collect();
    from_h.sort();
    assert_eq!(from_h, vec![("edge(2,5)".to_string(), 1), ("path(1,2)".to_string(), 1)]);
    let expected: usize = g.edges.iter().map(|e| e.pos.len() + e.neg.len()).sum();
    assert_eq!(fg.edges.len(), expected);

    let p = parse("0.5::i. 0.5::j. o :- j, \\+i.").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let fg = flatten(&g);
    let i = g.node_of(&a("i")).unwrap();
    assert!(fg.edges.iter().any(|&(_, b, s)| b == i && s == -1));
}

#[test]
fn dependence_polarity() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let fg = flatten(&g);
    let out = g.node_of(&a("path(1,7)")).unwrap();
    assert_eq!(depends(&fg, out, g.node_of(&a("edge(2,5)")).unwrap()), Polarity::Pos);
    assert_eq!(depends(&fg, out, g.node_of(&a("edge(1,4)")).unwrap()), Polarity::None);

    let p = parse("0.5::i. 0.5::j. o :- j, \\+i. q :- o, \\+i. w :- \\+o, j.").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let fg = flatten(&g);
    let i = g.node_of(&a("i")).unwrap();
    assert_eq!(depends(&fg, g.node_of(&a("o")).unwrap(), i), Polarity::Neg);
    assert_eq!(depends(&fg, g.node_of(&a("q")).unwrap(), i), Polarity::Neg);
    assert_eq!(depends(&fg, g.node_of(&a("w")).unwrap(), i), Polarity::Pos);
}

/// Enumerates every flattened path from `from` to `to` and collects signs.
fn all_paths(fg: &FlatGraph, from: NodeId, to: NodeId, sign: i8, acc: &mut (bool, bool)) {
    if from == to {
        if sign > 0 {
            acc.0 = true;
        } else {
            acc.1 = true;
        }
        return;
    }
    for &(c, s) in &fg.adj[from] {
        all_paths(fg, c, to, sign * s, acc);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn polarity_matches_path_enumeration(
        rules in proptest::collection::vec((0usize..4, 0usize..7, 0usize..7, any::<bool>()), 1..9)
    ) {
        // outputs o0..o3 in layers; bodies reference inputs i0..i2 or lower outputs
        let mut src = String::from("0.5::i0. 0.5::i1. 0.5::i2.\n");
        for (h, b1, b2, neg) in rules {
            let name = |k: usize| if k < 3 { format!("i{k}") } else { format!("o{}", k - 3) };
            let valid = |k: usize| k < 3 || k - 3 < h;
            if !valid(b1) || !valid(b2) { continue; }
            let second = if neg { format!("\\+{}", name(b2)) } else { name(b2) };
            src.push_str(&format!("o{h} :- {}, {second}.\n", name(b1)));
        }
        let p = parse(&src).unwrap();
        let (_, g) = solve_standard(&p).unwrap();
        let fg = flatten(&g);
        for o in g.outputs() {
            for inp in 0..3 {
                let leaf = g.node_of(&a(&format!("i{inp}"))).unwrap();
                let mut acc = (false, false);
                all_paths(&fg, o, leaf, 1, &mut acc);
                let expect = match acc {
                    (false, false) => Polarity::None,
                    (true, false) => Polarity::Pos,
                    (false, true) => Polarity::Neg,
                    (true, true) => Polarity::Both,
                };
                prop_assert_eq!(depends(&fg, o, leaf), expect);
            }
        }
    }

    #[test]
    fn small_recursive_programs_unfold_to_fixpoint(
        edges in proptest::collection::vec((0usize..3, 0usize..3), 1..6)
    ) {
        let mut src = String::new();
        let mut seen = HashSet::new();
        for (x, y) in edges {
            if seen.insert((x, y)) {
                src.push_str(&format!("0.5::e({x},{y}).\n"));
            }
        }
        src.push_str("0.5::s(0).\nr(X) :- s(X).\nr(Y) :- r(X), e(X,Y).\n");
        let p = parse(&src).unwrap();
        let (_, g) = solve_standard(&p).unwrap();
        for mask in 0..(1u32 << p.facts.len()) {
            let on: HashSet<Atom> = p.facts.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, f)| f.clone()).collect();
            let expected: HashSet<Atom> = naive_model(&p, &on).into_iter().filter(|x| x.pred == "r").collect();
            let got: HashSet<Atom> = derived_set(&g, &eval_graph(&g, &on)).into_iter().filter(|x| x.pred == "r").collect();
            prop_assert_eq!(got, expected);
        }
    }
}

#[test]
fn json_dump_lists_nodes_and_hyperedges() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), g.nodes.len());
    assert_eq!(v["hyperedges"].as_array().unwrap().len(), g.edges.len());
    assert_eq!(v["hyperedges"][0]["prob"], 1.0);
}
