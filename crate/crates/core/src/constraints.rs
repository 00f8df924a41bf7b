//! Linear constraints over the joint distribution of each correlation class.
//!
//! Class `c` with `n` members has variables `V[b]` for `b` in `0..2^n`, the
//! first member being the most significant bit of `b`. Declarations become
//! equalities: a marginal `p::I` sums `V[b]` over the assignments with `I`
//! true, and a conditional `p::I|G` is kept multiplied out as
//! `P(I ∧ G) - p·P(G) = 0`.

use std::fmt::Write as _;

use crate::frontend::Program;
use crate::lp::{Cmp, Lp, LpError};

/// Equalities of one class, beyond `V ≥ 0` and `Σ V = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSystem {
    pub width: u32,
    /// False when the class is too large to write out; its constraints are
    /// then unknown to every exact procedure.
    pub materialized: bool,
    /// Dense equality rows over the `2^width` variables with their
    /// right-hand sides.
    pub rows: Vec<(Vec<f64>, f64)>,
    /// Dense rows constrained to be at most their right-hand sides.
    pub le_rows: Vec<(Vec<f64>, f64)>,
}

impl ClassSystem {
    pub fn dim(&self) -> usize {
        1 << self.width
    }

    /// The class polytope as an LP over its joint variables.
    pub fn lp(&self) -> Lp {
        let n = self.dim();
        let mut lp = Lp::new(vec![(0.0, 1.0); n]);
        lp.add_row((0..n).map(|i| (i, 1.0)).collect(), Cmp::Eq, 1.0);
        for (row, rhs) in &self.rows {
            let coefs = row.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &c)| (i, c)).collect();
            lp.add_row(coefs, Cmp::Eq, *rhs);
        }
        for (row, rhs) in &self.le_rows {
            let coefs = row.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &c)| (i, c)).collect();
            lp.add_row(coefs, Cmp::Le, *rhs);
        }
        lp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    /// Indexed by class position in the program.
    pub classes: Vec<ClassSystem>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// One joint distribution per class; empty for classes not materialized.
    Feasible(Vec<Vec<f64>>),
    Infeasible { class: usize },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

fn holds(b: usize, width: u32, member: usize) -> bool {
    b >> (width as usize - 1 - member) & 1 == 1
}

pub fn gen_constraints(p: &Program, max_class_size: usize) -> ConstraintSystem {
    let mut classes: Vec<ClassSystem> = p
        .classes
        .iter()
        .map(|c| ClassSystem {
            width: c.len() as u32,
            materialized: c.len() <= max_class_size,
            rows: Vec::new(),
            le_rows: Vec::new(),
        })
        .collect();
    for decl in &p.input_probs {
        let (c, target) = p.class_of(decl.target);
        let cs = &mut classes[c];
        if !cs.materialized {
            continue;
        }
        let givens: Vec<(usize, bool)> = decl
            .given
            .iter()
            .map(|&(f, positive)| {
                let (gc, m) = p.class_of(f);
                debug_assert_eq!(gc, c, "conditional spans classes");
                (m, positive)
            })
            .collect();
        let w = cs.width;
        let row: Vec<f64> = (0..cs.dim())
            .map(|b| {
                let g = givens.iter().all(|&(m, positive)| holds(b, w, m) == positive);
                let all = g && holds(b, w, target);
                f64::from(u8::from(all)) - if givens.is_empty() { 0.0 } else { decl.prob * f64::from(u8::from(g)) }
            })
            .collect();
        let rhs = if givens.is_empty() { decl.prob } else { 0.0 };
        cs.rows.push((row, rhs));
    }
    ConstraintSystem { classes }
}

/// Solves each class's feasibility problem independently.
pub fn check_feasible(phi: &ConstraintSystem) -> Feasibility {
    let mut witness = Vec::with_capacity(phi.classes.len());
    for (c, cs) in phi.classes.iter().enumerate() {
        if !cs.materialized {
            log::warn!("class {} has {} members; its constraints are not checked", c + 1, cs.width);
            witness.push(Vec::new());
            continue;
        }
        match cs.lp().feasible_point() {
            Ok(x) => witness.push(x.into_iter().map(|v| v.max(0.0)).collect()),
            Err(LpError::Infeasible | LpError::Unbounded) => return Feasibility::Infeasible { class: c },
        }
    }
    Feasibility::Feasible(witness)
}

/// Plain-text listing: one block per class, one equality per line.
pub fn render(phi: &ConstraintSystem, p: &Program) -> String {
    let mut s = String::new();
    for (c, cs) in phi.classes.iter().enumerate() {
        let members: Vec<String> = p.classes[c].members.iter().map(|&f| p.facts[f].to_string()).collect();
        let _ = writeln!(s, "% class V{}: {}", c + 1, members.join(" "));
        if !cs.materialized {
            let _ = writeln!(s, "% not materialized ({} members)", cs.width);
            continue;
        }
        let w = cs.width as usize;
        let var = |b: usize| format!("V{}[{:0w$b}]", c + 1, b);
        let all: Vec<String> = (0..cs.dim()).map(var).collect();
        let _ = writeln!(s, "{} = 1", all.join(" + "));
        for (row, rhs) in &cs.rows {
            let mut line = String::new();
            for (b, &coef) in row.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let sign = if coef < 0.0 { "-" } else { "+" };
                if line.is_empty() {
                    line.push_str(if coef < 0.0 { "-" } else { "" });
                } else {
                    let _ = write!(line, " {sign} ");
                }
                let mag = coef.abs();
                if (mag - 1.0).abs() < 1e-15 {
                    line.push_str(&var(b));
                } else {
                    let _ = write!(line, "{}*{}", fmt_num(mag), var(b));
                }
            }
            if line.is_empty() {
                line.push('0');
            }
            let _ = writeln!(s, "{line} = {}", fmt_num(*rhs));
        }
        let _ = writeln!(s, "0 <= V{}[b] <= 1", c + 1);
    }
    s
}

fn fmt_num(x: f64) -> String {
    let r = format!("{x:.9}");
    r.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::frontend::parse;
    use crate::testutil::{program_strategy, PATHS};

    fn witness(src: &str) -> Vec<Vec<f64>> {
        let p = parse(src).unwrap();
        match check_feasible(&gen_constraints(&p, 12)) {
            Feasibility::Feasible(w) => w,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paths_rows_and_witness() {
        let p = parse(PATHS).unwrap();
        let phi = gen_constraints(&p, 12);
        assert_eq!(phi.classes.len(), 4);
        assert_eq!(phi.classes[0].rows, vec![(vec![0.0, 1.0], 0.7)]);
        assert_eq!(phi.classes[3].rows.len(), 5);
        let w = witness(PATHS);
        assert!((w[0][1] - 0.7).abs() < 1e-9);
        // V4[110] + V4[111] = 0.8 * 0.6
        assert!((w[3][0b110] + w[3][0b111] - 0.48).abs() < 1e-9);
        assert!((w[3][0b011] + w[3][0b111] - 0.83 * 0.6).abs() < 1e-9);
        let text = render(&phi, &p);
        assert!(text.contains("V1[1] = 0.7"));
        assert!(text.contains("-0.8*V4[010] - 0.8*V4[011] + 0.2*V4[110] + 0.2*V4[111] = 0"));
    }

    #[test]
    fn conflicting_conditionals_are_infeasible() {
        let p = parse("0.5::i1. 0.3::i2. 0.6::i1 | i2. 0.7::i1 | \\+i2.").unwrap();
        assert_eq!(check_feasible(&gen_constraints(&p, 12)), Feasibility::Infeasible { class: 0 });
        // consistent version: 0.6*0.3 + 0.7*0.7 = 0.67
        let w = witness("0.67::i1. 0.3::i2. 0.6::i1 | i2. 0.7::i1 | \\+i2.");
        assert!((w[0][0b11] - 0.18).abs() < 1e-9);
        assert!((w[0][0b10] - 0.49).abs() < 1e-9);
    }

    #[test]
    fn empty_program_and_undeclared_class() {
        let p = parse("").unwrap();
        assert_eq!(check_feasible(&gen_constraints(&p, 12)), Feasibility::Feasible(vec![]));
        let p = parse("0.5::a. 0.5::b. 0.5::c. corr(a, b, c).").unwrap();
        let mut phi = gen_constraints(&p, 12);
        phi.classes[0].rows.clear();
        let lp = phi.classes[0].lp();
        assert_eq!(lp.num_vars(), 8);
        assert_eq!(lp.rows.len(), 1);
    }

    #[test]
    fn oversized_class_is_left_out() {
        let p = parse("0.5::a. 0.5::b. corr(a, b).").unwrap();
        let phi = gen_constraints(&p, 1);
        assert!(!phi.classes[0].materialized);
        assert_eq!(check_feasible(&phi), Feasibility::Feasible(vec![vec![]]));
    }

    proptest! {
        #[test]
        fn witness_reproduces_marginals(src in program_strategy(5, 1)) {
            let p = parse(&src).unwrap();
            let w = witness(&src);
            for d in p.input_probs.iter().filter(|d| d.given.is_empty()) {
                let (c, m) = p.class_of(d.target);
                let width = p.classes[c].len() as u32;
                let got: f64 = (0..1usize << width).filter(|&b| holds(b, width, m)).map(|b| w[c][b]).sum();
                prop_assert!((got - d.prob).abs() < 1e-9);
                prop_assert!((w[c].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
