//! Small dense linear programs, solved with `minilp`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lp {
    pub bounds: Vec<(f64, f64)>,
    pub rows: Vec<Row>,
}

impl Lp {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Lp { bounds, rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.bounds.push((lo, hi));
        self.bounds.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push(Row { coefs, cmp, rhs });
    }

    /// Optimal value and point for objective `obj`.
    pub fn solve(&self, obj: &[f64], maximize: bool) -> Result<(f64, Vec<f64>), LpError> {
        let dir = if maximize { OptimizationDirection::Maximize } else { OptimizationDirection::Minimize };
        let mut pb = Problem::new(dir);
        let vars: Vec<_> =
            self.bounds.iter().enumerate().map(|(i, &b)| pb.add_var(obj.get(i).copied().unwrap_or(0.0), b)).collect();
        for r in &self.rows {
            let op = match r.cmp {
                Cmp::Eq => ComparisonOp::Eq,
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
            };
            let expr: Vec<_> = r.coefs.iter().map(|&(i, c)| (vars[i], c)).collect();
            pb.add_constraint(expr, op, r.rhs);
        }
        match pb.solve() {
            Ok(sol) => Ok((sol.objective(), vars.iter().map(|&v| *sol.var_value(v)).collect())),
            Err(minilp::Error::Infeasible) => Err(LpError::Infeasible),
            Err(minilp::Error::Unbounded) => Err(LpError::Unbounded),
        }
    }

    pub fn feasible_point(&self) -> Result<Vec<f64>, LpError> {
        self.solve(&[], false).map(|s| s.1)
    }

    /// Largest violation of any bound or row at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            worst = worst.max(lo - x[i]).max(x[i] - hi);
        }
        for r in &self.rows {
            let lhs: f64 = r.coefs.iter().map(|&(i, c)| c * x[i]).sum();
            let d = lhs - r.rhs;
            worst = worst.max(match r.cmp {
                Cmp::Eq => d.abs(),
                Cmp::Le => d,
                Cmp::Ge => -d,
            });
        }
        worst
    }
}
