use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::constraints::gen_constraints;
use crate::frontend::{parse, Atom, Program};
use crate::grounder::{solve_standard, DerivationGraph};
use crate::symexpr::gen_objective;
use crate::testutil::{mixture, node_prob, program_strategy, rational_vertices, PATHS};

fn objective(p: &Program, g: &DerivationGraph, atom: &Atom) -> Objective {
    let probs: Vec<f64> = g.rules.iter().map(|r| r.prob).collect();
    gen_objective(p, g, g.node_of(atom).unwrap(), 20).unwrap().substitute(&probs)
}

fn path(a: &str, b: &str) -> Atom {
    Atom::new("path", &[a, b])
}

#[test]
fn singleton_class_has_one_vertex() {
    let p = parse("0.7::e.").unwrap();
    let phi = gen_constraints(&p, 12);
    let v = enumerate_class_vertices(&phi.classes[0], 0, 64).unwrap();
    assert_eq!(v.len(), 1);
    assert!((v[0][0] - 0.3).abs() < 1e-12 && (v[0][1] - 0.7).abs() < 1e-12);
}

#[test]
fn dimension_cap_is_enforced() {
    let p = parse("0.5::a. 0.5::b. 0.5::c. corr(a, b, c).").unwrap();
    let phi = gen_constraints(&p, 12);
    assert!(matches!(
        enumerate_class_vertices(&phi.classes[0], 0, 4),
        Err(OptError::DimensionCapExceeded { dim: 8, cap: 4, .. })
    ));
}

/// Bounds of path(1,7) from an LP over class V4 alone: the other classes
/// are singletons with fixed distributions, so the probability is linear in
/// V4 with coefficients from world enumeration.
fn paths_lp_oracle(p: &Program, g: &DerivationGraph, n: usize) -> (f64, f64) {
    let phi = gen_constraints(p, 12);
    let mut x: Vec<Vec<f64>> = phi
        .classes
        .iter()
        .map(|c| {
            let v = enumerate_class_vertices(c, 0, 64).unwrap();
            if c.width == 1 { v[0].clone() } else { vec![0.0; 8] }
        })
        .collect();
    let probs: Vec<f64> = g.rules.iter().map(|r| r.prob).collect();
    let coefs: Vec<f64> = (0..8)
        .map(|b| {
            x[3] = (0..8).map(|k| f64::from(u8::from(k == b))).collect();
            node_prob(p, g, &x, &probs, n)
        })
        .collect();
    linear_range(&phi.classes[3], &coefs).unwrap()
}

#[test]
fn paths_exact_bounds() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let opt = Optimizer::new(&phi, OptConfig::default());
    let r = opt.optimize(&objective(&p, &g, &path("1", "7"))).unwrap();
    let (lo, hi) = paths_lp_oracle(&p, &g, g.node_of(&path("1", "7")).unwrap());
    assert!((r.min - lo).abs() < 1e-9 && (r.max - hi).abs() < 1e-9, "{r:?} vs {lo} {hi}");
    assert!((r.min - 0.344448).abs() < 1e-9);
    assert!((r.max - 0.412992).abs() < 1e-9);
    assert_eq!(r.method, Method::VertexExact);
    let obj = objective(&p, &g, &path("1", "7"));
    assert!((obj.eval(&r.argmin) - r.min).abs() < 1e-12);
    assert!((obj.eval(&r.argmax) - r.max).abs() < 1e-12);
    for other in ["5", "6"] {
        let r = opt.optimize(&objective(&p, &g, &path("1", other))).unwrap();
        assert!((r.min - 0.36).abs() < 1e-9 && (r.max - 0.36).abs() < 1e-9);
    }
}

#[test]
fn paths_check_sat() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let r = Optimizer::new(&phi, OptConfig::default()).optimize(&objective(&p, &g, &path("1", "7"))).unwrap();
    assert!(!check_sat(&r, 0.0, 0.1));
    assert!(check_sat(&r, 0.0, 1.0));
    assert!(check_sat(&r, 0.4, 0.5));
    assert!(!check_sat(&r, 0.42, 0.5));
}

#[test]
fn member_order_does_not_change_values() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let base = Optimizer::new(&phi, OptConfig::default()).optimize(&objective(&p, &g, &path("1", "7"))).unwrap();
    let permuted = "
        0.6::edge(2,6). 0.6::edge(1,4). 0.6::edge(2,5).
        0.8::edge(6,7). 0.6::edge(1,2). 0.7::edge(5,7).
        corr(edge(2,6), edge(2,5), edge(1,4)).
        0.83::edge(2,6) | edge(1,4).
        0.8::edge(2,5) | edge(1,4).
        1::path(X,Y) :- path(X,Z), edge(Z,Y).
        1::path(X,Y) :- edge(X,Y).
    ";
    let q = parse(permuted).unwrap();
    assert_ne!(q.classes[0].members, vec![q.fact_id(&Atom::new("edge", &["2", "5"])).unwrap()]);
    let (_, gq) = solve_standard(&q).unwrap();
    let phq = gen_constraints(&q, 12);
    let r = Optimizer::new(&phq, OptConfig::default()).optimize(&objective(&q, &gq, &path("1", "7"))).unwrap();
    assert!((r.min - base.min).abs() < 1e-9 && (r.max - base.max).abs() < 1e-9);
}

#[test]
fn lp_and_block_paths_agree_with_enumeration() {
    let p = parse(PATHS).unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let obj = objective(&p, &g, &path("1", "7"));
    let exact = Optimizer::new(&phi, OptConfig::default()).optimize(&obj).unwrap();
    let lp = Optimizer::new(&phi, OptConfig { combo_cap: 1, ..OptConfig::default() }).optimize(&obj).unwrap();
    assert_eq!(lp.method, Method::VertexLp);
    assert!((lp.min - exact.min).abs() < 1e-9 && (lp.max - exact.max).abs() < 1e-9);
    let bc = Optimizer::new(&phi, OptConfig { vertex_cap: 1, ..OptConfig::default() }).optimize(&obj).unwrap();
    assert_eq!(bc.method, Method::BlockCoordinate);
    assert!(!bc.exact());
    assert!(bc.min >= exact.min - 1e-9 && bc.max <= exact.max + 1e-9);
    assert!((bc.min - exact.min).abs() < 1e-6 && (bc.max - exact.max).abs() < 1e-6);
}

#[test]
fn infeasible_class_reported() {
    let p = parse("0.5::i1. 0.3::i2. 0.6::i1 | i2. 0.7::i1 | \\+i2. o :- i1.").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let obj = objective(&p, &g, &Atom::new("o", &[]));
    assert_eq!(Optimizer::new(&phi, OptConfig::default()).optimize(&obj), Err(OptError::Infeasible { class: 0 }));
}

#[test]
fn independent_program_is_a_point() {
    let p = parse("0.3::a. 0.6::b. 0.5::c. 0.8::o :- a, \\+b. o :- c.").unwrap();
    let (_, g) = solve_standard(&p).unwrap();
    let phi = gen_constraints(&p, 12);
    let r = Optimizer::new(&phi, OptConfig::default()).optimize(&objective(&p, &g, &Atom::new("o", &[]))).unwrap();
    // 1 - (1 - 0.8*0.3*0.4)(1 - 0.5)
    let expect = 1.0 - (1.0 - 0.8 * 0.3 * 0.4) * 0.5;
    assert!((r.min - expect).abs() < 1e-12 && (r.max - expect).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vertices_match_rational_enumeration(p1 in 1u32..10, p2 in 1u32..10, c in 1u32..10, two in any::<bool>()) {
        let src = if two {
            format!("0.{p1}::a. 0.{p2}::b. corr(a, b).")
        } else {
            format!("0.{p1}::a. 0.{p2}::b. 0.{c}::a | b. corr(a, b).")
        };
        let p = parse(&src).unwrap();
        let phi = gen_constraints(&p, 12);
        let cs = &phi.classes[0];
        match enumerate_class_vertices(cs, 0, 64) {
            Ok(v) => {
                let oracle = rational_vertices(cs.dim(), &cs.rows);
                prop_assert_eq!(v.len(), oracle.len());
                for (x, y) in v.iter().zip(&oracle) {
                    for (a, b) in x.iter().zip(y) {
                        prop_assert!((a - b).abs() < 1e-9);
                    }
                }
            }
            Err(OptError::Infeasible { .. }) => prop_assert!(rational_vertices(cs.dim(), &cs.rows).is_empty()),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn bounds_bracket_random_feasible_points(src in program_strategy(4, 5), seed in any::<u64>()) {
        let p = parse(&src).unwrap();
        let (outs, g) = solve_standard(&p).unwrap();
        let phi = gen_constraints(&p, 12);
        let opt = Optimizer::new(&phi, OptConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts: Vec<Vec<Vec<f64>>> =
            (0..phi.classes.len()).map(|c| opt.class_vertices(c).clone().unwrap()).collect();
        for &o in &outs {
            let obj = objective(&p, &g, &g.nodes[o].atom);
            let r = opt.optimize(&obj).unwrap();
            prop_assert!(r.min <= r.max + 1e-12);
            for _ in 0..100 {
                let x: Vec<Vec<f64>> = verts.iter().map(|v| mixture(&mut rng, v)).collect();
                let v = obj.eval(&x);
                prop_assert!(v >= r.min - 1e-9 && v <= r.max + 1e-9);
            }
            let probs: Vec<f64> = g.rules.iter().map(|r| r.prob).collect();
            let w: Vec<Vec<f64>> = r.argmin.iter().enumerate()
                .map(|(c, x)| if x.is_empty() { verts[c][0].clone() } else { x.clone() }).collect();
            prop_assert!((node_prob(&p, &g, &w, &probs, o) - r.min).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inequality_rows_keep_extreme_points(lo in 0.0f64..0.5, w in 0.0f64..0.5, dirs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 5)) {
        let p = parse("0.5::a. 0.5::b. corr(a, b).").unwrap();
        let mut phi = gen_constraints(&p, 12);
        let cs = &mut phi.classes[0];
        cs.rows.clear();
        // lo <= P(a) <= lo + w, P(a ∧ b) <= 0.3
        cs.le_rows.push((vec![0.0, 0.0, -1.0, -1.0], -lo));
        cs.le_rows.push((vec![0.0, 0.0, 1.0, 1.0], lo + w));
        cs.le_rows.push((vec![0.0, 0.0, 0.0, 1.0], 0.3));
        let verts = enumerate_class_vertices(cs, 0, 64).unwrap();
        let lp = cs.lp();
        for v in &verts {
            prop_assert!(lp.violation(v) < 1e-9);
        }
        for d in dirs {
            let best = verts.iter().map(|v| v.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()).fold(f64::MIN, f64::max);
            let (opt, _) = lp.solve(&d, true).unwrap();
            prop_assert!((best - opt).abs() < 1e-9);
        }
    }
}
