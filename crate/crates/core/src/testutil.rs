//! Brute-force oracles shared by unit tests.

pub const PATHS: &str = "
    0.7::edge(5,7). 0.6::edge(1,2). 0.8::edge(6,7).
    0.6::edge(2,5). 0.6::edge(1,4). 0.6::edge(2,6).
    corr(edge(2,5), edge(1,4), edge(2,6)).
    0.8::edge(2,5) | edge(1,4).
    0.83::edge(2,6) | edge(1,4).
    1::path(X,Y) :- edge(X,Y).
    1::path(X,Y) :- path(X,Z), edge(Z,Y).
    query(path(1,7)).
";

use crate::frontend::Program;
use crate::grounder::{DerivationGraph, NodeId, NodeKind};

/// Truth of every node when input `i` holds iff `facts[i]` and ground rule
/// `r` fires iff `fires[r]`.
pub fn eval_world(g: &DerivationGraph, facts: &[bool], fires: &[bool]) -> Vec<bool> {
    let mut val = vec![false; g.nodes.len()];
    for &v in &g.topo {
        val[v] = match g.nodes[v].kind {
            NodeKind::Input(f) => facts[f],
            _ => g.out[v].iter().any(|&e| {
                let e = &g.edges[e];
                fires[e.rule] && e.pos.iter().all(|&b| val[b]) && e.neg.iter().all(|&b| !val[b])
            }),
        };
    }
    val
}

/// Probability of `pred` over all worlds, where class `c` takes local
/// assignment `b` (first member most significant) with probability `x[c][b]`
/// and rules fire independently with `rule_probs`.
pub fn world_sum(
    program: &Program,
    g: &DerivationGraph,
    x: &[Vec<f64>],
    rule_probs: &[f64],
    pred: impl Fn(&[bool]) -> bool,
) -> f64 {
    let events: Vec<usize> = (0..g.rules.len()).filter(|&r| rule_probs[r] > 0.0 && rule_probs[r] < 1.0).collect();
    let sizes: Vec<usize> = program.classes.iter().map(|c| c.len()).collect();
    let mut choice = vec![0usize; sizes.len()];
    let mut total = 0.0;
    loop {
        let mut facts = vec![false; program.facts.len()];
        let mut pw = 1.0;
        for (c, class) in program.classes.iter().enumerate() {
            pw *= x[c][choice[c]];
            for (m, &f) in class.members.iter().enumerate() {
                facts[f] = choice[c] >> (class.len() - 1 - m) & 1 == 1;
            }
        }
        if pw != 0.0 {
            for mask in 0u64..(1 << events.len()) {
                let mut fires: Vec<bool> = rule_probs.iter().map(|&p| p >= 1.0).collect();
                let mut pe = pw;
                for (k, &r) in events.iter().enumerate() {
                    let on = mask >> k & 1 == 1;
                    fires[r] = on;
                    pe *= if on { rule_probs[r] } else { 1.0 - rule_probs[r] };
                }
                if pred(&eval_world(g, &facts, &fires)) {
                    total += pe;
                }
            }
        }
        let mut c = 0;
        while c < sizes.len() {
            choice[c] += 1;
            if choice[c] < 1 << sizes[c] {
                break;
            }
            choice[c] = 0;
            c += 1;
        }
        if c == sizes.len() {
            break;
        }
    }
    total
}

pub fn node_prob(program: &Program, g: &DerivationGraph, x: &[Vec<f64>], rule_probs: &[f64], n: NodeId) -> f64 {
    world_sum(program, g, x, rule_probs, |v| v[n])
}

/// Normalizes `raw` (any nonnegative weights) into a distribution.
pub fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    if s <= 0.0 {
        let mut v = vec![0.0; raw.len()];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|r| r / s).collect()
}

/// Random layered programs: inputs `i0..`, outputs `o0..` whose bodies use
/// inputs and lower outputs, some negated, with a mix of rule probabilities.
/// Inputs are grouped into at most two correlated classes.
pub fn program_strategy(max_inputs: usize, max_rules: usize) -> impl proptest::strategy::Strategy<Value = String> {
    use proptest::prelude::*;
    let inputs = proptest::collection::vec((0usize..3, 1u32..10), 2..=max_inputs);
    let rules = proptest::collection::vec((0usize..3, 0usize..8, 0usize..8, any::<bool>(), 0usize..3), 1..=max_rules);
    let conds = proptest::collection::vec(proptest::option::of(0.1f64..0.9), 2);
    (inputs, rules, conds).prop_map(|(inputs, rules, conds)| {
        let n = inputs.len();
        let mut src = String::new();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for (i, (grp, p)) in inputs.iter().enumerate() {
            src.push_str(&format!("0.{p}::i{i}.\n"));
            groups[*grp].push(i);
        }
        for (g, cond) in groups.iter().take(2).zip(&conds) {
            if g.len() >= 2 {
                let names: Vec<String> = g.iter().map(|i| format!("i{i}")).collect();
                src.push_str(&format!("corr({}).\n", names.join(", ")));
                // P(a | b) strictly inside its feasible range
                if let Some(t) = cond {
                    let pa = f64::from(inputs[g[0]].1) / 10.0;
                    let pb = f64::from(inputs[g[1]].1) / 10.0;
                    let (lo, hi) = ((pa + pb - 1.0).max(0.0), pa.min(pb));
                    let c = (lo + t * (hi - lo)) / pb;
                    src.push_str(&format!("{c:.12}::i{} | i{}.\n", g[0], g[1]));
                }
            }
        }
        for (h, b1, b2, neg, pk) in rules {
            let avail = n + h;
            let name = |k: usize| if k < n { format!("i{k}") } else { format!("o{}", k - n) };
            let (b1, b2) = (b1 % avail, b2 % avail);
            let p = ["1", "0.5", "0.8"][pk];
            let second = if neg { format!("\\+{}", name(b2)) } else { name(b2) };
            src.push_str(&format!("{p}::o{h} :- {}, {second}.\n", name(b1)));
        }
        src
    })
}

/// Random point of a class polytope: a flat-Dirichlet mixture of its vertices.
pub fn mixture(rng: &mut impl rand::Rng, verts: &[Vec<f64>]) -> Vec<f64> {
    let w: Vec<f64> = (0..verts.len()).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
    let w = simplex(&w);
    let mut x = vec![0.0; verts[0].len()];
    for (v, wi) in verts.iter().zip(&w) {
        x.iter_mut().zip(v).for_each(|(a, b)| *a += wi * b);
    }
    x
}

/// Rational-arithmetic vertex enumeration of `{x ≥ 0, Σx = 1, rows}` for
/// small dimensions: every basis of the stacked equalities, solved exactly.
pub fn rational_vertices(dim: usize, rows: &[(Vec<f64>, f64)]) -> Vec<Vec<f64>> {
    use num_rational::BigRational;
    use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
    let to_q = |x: f64| BigRational::from_f64(x).unwrap();
    let mut a: Vec<Vec<BigRational>> = vec![vec![to_q(1.0); dim + 1]];
    for (r, rhs) in rows {
        let mut v: Vec<BigRational> = r.iter().map(|&x| to_q(x)).collect();
        v.push(to_q(*rhs));
        a.push(v);
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mask in 0u32..(1 << dim) {
        // solve with columns in mask, others zero
        let cols: Vec<usize> = (0..dim).filter(|j| mask >> j & 1 == 1).collect();
        let mut m: Vec<Vec<BigRational>> =
            a.iter().map(|r| cols.iter().map(|&j| r[j].clone()).chain([r[dim].clone()]).collect()).collect();
        let k = cols.len();
        let mut rank = 0;
        let mut pivots = Vec::new();
        for c in 0..k {
            let Some(p) = (rank..m.len()).find(|&i| !m[i][c].is_zero()) else { continue };
            m.swap(rank, p);
            let pv = m[rank][c].clone();
            for x in m[rank].iter_mut() {
                *x = &*x / &pv;
            }
            let pr = m[rank].clone();
            for (i, row) in m.iter_mut().enumerate() {
                if i != rank && !row[c].is_zero() {
                    let f = row[c].clone();
                    for (x, y) in row.iter_mut().zip(&pr) {
                        *x = &*x - &f * y;
                    }
                }
            }
            pivots.push(c);
            rank += 1;
        }
        // unique solution needs full column rank and consistency
        if rank < k || m[rank..].iter().any(|r| !r[k].is_zero()) {
            continue;
        }
        let sol: Vec<BigRational> = (0..k).map(|c| m[pivots.iter().position(|&p| p == c).unwrap()][k].clone()).collect();
        if sol.iter().any(|x| x.is_negative()) {
            continue;
        }
        let mut x = vec![0.0; dim];
        for (c, v) in cols.iter().zip(&sol) {
            x[*c] = v.to_f64().unwrap();
        }
        out.push(x);
    }
    let key = |p: &Vec<f64>| -> Vec<i64> { p.iter().map(|v| (v * 1e9).round() as i64).collect() };
    out.sort_by_key(key);
    out.dedup_by(|p, q| key(p) == key(q));
    out
}
