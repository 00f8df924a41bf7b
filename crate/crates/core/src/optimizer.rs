//! Exact bounds of a multilinear objective over a product of class polytopes.
//!
//! The objective is linear in each class's joint variables when the others
//! are fixed, so both extrema are attained with every class at a vertex of
//! its polytope. Small instances enumerate vertex combinations; otherwise one
//! class is optimized by LP for each combination of the rest, and beyond that
//! block-coordinate search gives a non-exact answer.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::constraints::{ClassSystem, ConstraintSystem};
use crate::lp::{Lp, LpError};
use crate::symexpr::Objective;

const TOL: f64 = 1e-9;
/// Basis choices tried per class before giving up on vertex enumeration.
const SUBSET_BUDGET: u64 = 200_000;
/// Per-combination LPs allowed when one class is handled by LP.
const LP_BUDGET: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("class V{} has {dim} joint variables, vertex enumeration is capped at {cap}", .class + 1)]
    DimensionCapExceeded { class: usize, dim: usize, cap: usize },
    #[error("constraints of class V{} are unsatisfiable", .class + 1)]
    Infeasible { class: usize },
    #[error("class V{} is too large to materialize", .class + 1)]
    NotMaterialized { class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    VertexExact,
    VertexLp,
    BlockCoordinate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub min: f64,
    pub max: f64,
    /// Joint distribution per class position attaining `min`; classes not in
    /// the objective are left empty.
    pub argmin: Vec<Vec<f64>>,
    pub argmax: Vec<Vec<f64>>,
    pub method: Method,
}

impl OptResult {
    pub fn exact(&self) -> bool {
        self.method != Method::BlockCoordinate
    }
}

#[derive(Debug, Clone)]
pub struct OptConfig {
    /// Largest class dimension `2^|C|` whose vertices are enumerated.
    pub vertex_cap: usize,
    /// Largest number of vertex combinations evaluated.
    pub combo_cap: u64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig { vertex_cap: 64, combo_cap: 1_000_000, restarts: 32, seed: 42 }
    }
}

/// Row-reduces `rows` (each with its right-hand side last), returning an
/// independent subset, or `None` when the rows are inconsistent.
fn independent_rows(rows: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let Some(width) = m.first().map(|r| r.len() - 1) else {
        return Some(Vec::new());
    };
    let mut rank = 0;
    for col in 0..width {
        let Some(piv) = (rank..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())) else {
            break;
        };
        if m[piv][col].abs() < TOL {
            continue;
        }
        m.swap(rank, piv);
        let p = m[rank][col];
        let pivot_row = m[rank].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != rank {
                let f = row[col] / p;
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(x, y)| *x -= f * y);
                }
            }
        }
        rank += 1;
    }
    if m[rank..].iter().any(|r| r[width].abs() > 1e-7) {
        return None;
    }
    m.truncate(rank);
    Some(m)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n.saturating_sub(k));
    let mut r: u64 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// All vertices of `{V ≥ 0, Σ V = 1, rows}` in lexicographic order.
pub fn enumerate_class_vertices(cs: &ClassSystem, class: usize, vertex_cap: usize) -> Result<Vec<Vec<f64>>, OptError> {
    if !cs.materialized {
        return Err(OptError::NotMaterialized { class });
    }
    let n = cs.dim();
    if n > vertex_cap {
        return Err(OptError::DimensionCapExceeded { class, dim: n, cap: vertex_cap });
    }
    // inequality rows get one slack column each; vertices of the projection
    // are projections of vertices of the lifted polytope
    let k = cs.le_rows.len();
    let total = n + k;
    let mut one = vec![0.0; total + 1];
    one[..n].iter_mut().for_each(|x| *x = 1.0);
    one[total] = 1.0;
    let mut rows: Vec<Vec<f64>> = vec![one];
    for (r, rhs) in &cs.rows {
        let mut v = r.clone();
        v.resize(total, 0.0);
        v.push(*rhs);
        rows.push(v);
    }
    for (i, (r, rhs)) in cs.le_rows.iter().enumerate() {
        let mut v = r.clone();
        v.resize(total, 0.0);
        v[n + i] = 1.0;
        v.push(*rhs);
        rows.push(v);
    }
    let rows = independent_rows(&rows).ok_or(OptError::Infeasible { class })?;
    let r = rows.len();
    if binomial(total as u64, r as u64) > SUBSET_BUDGET {
        return Err(OptError::DimensionCapExceeded { class, dim: n, cap: vertex_cap });
    }
    let a = DMatrix::from_fn(r, total, |i, j| rows[i][j]);
    let rhs = DVector::from_fn(r, |i, _| rows[i][total]);
    let n_vars = n;
    let n = total;

    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut cols: Vec<usize> = (0..r).collect();
    loop {
        let sub = a.select_columns(cols.iter());
        let lu = sub.clone().full_piv_lu();
        let well_posed = (0..r).all(|i| lu.u()[(i, i)].abs() > 1e-10);
        if well_posed {
            if let Some(xb) = lu.solve(&rhs) {
                if xb.iter().all(|&v| v >= -TOL) && (&sub * &xb - &rhs).amax() < 1e-8 {
                    let mut x = vec![0.0; n_vars];
                    for (k, &c) in cols.iter().enumerate() {
                        if c < n_vars {
                            x[c] = xb[k].max(0.0);
                        }
                    }
                    found.push(x);
                }
            }
        }
        // next r-subset of 0..n
        let mut i = r;
        loop {
            if i == 0 {
                return Ok(dedupe(found));
            }
            i -= 1;
            if cols[i] < n - r + i {
                cols[i] += 1;
                for j in i + 1..r {
                    cols[j] = cols[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn dedupe(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let key = |p: &Vec<f64>| -> Vec<i64> { p.iter().map(|v| (v / TOL).round() as i64).collect() };
    pts.sort_by_cached_key(key);
    pts.dedup_by(|a, b| key(a) == key(b));
    pts
}

/// Optimizes objectives over one constraint system, caching class vertices.
pub struct Optimizer<'a> {
    phi: &'a ConstraintSystem,
    cfg: OptConfig,
    vertices: Vec<OnceLock<Result<Vec<Vec<f64>>, OptError>>>,
}

/// A multilinear polynomial over the classes still free, keyed by their
/// concatenated local assignments.
#[derive(Clone)]
struct Poly {
    widths: Vec<u32>,
    terms: Vec<(u64, f64)>,
}

impl Poly {
    fn offset(&self, j: usize) -> u32 {
        self.widths[j + 1..].iter().sum()
    }

    /// Fixes the first class at distribution `v`.
    fn contract_first(&self, v: &[f64]) -> Poly {
        let off = self.offset(0);
        let mask = (1u64 << off) - 1;
        let mut acc: HashMap<u64, f64> = HashMap::with_capacity(self.terms.len());
        for &(k, c) in &self.terms {
            let w = v[(k >> off) as usize];
            if w != 0.0 {
                *acc.entry(k & mask).or_default() += c * w;
            }
        }
        let mut terms: Vec<(u64, f64)> = acc.into_iter().collect();
        terms.sort_by_key(|t| t.0);
        Poly { widths: self.widths[1..].to_vec(), terms }
    }

    fn constant(&self) -> f64 {
        self.terms.iter().map(|t| t.1).sum()
    }

    /// Coefficients of the single remaining class.
    fn linear(&self) -> Vec<f64> {
        let mut out = vec![0.0; 1 << self.widths[0]];
        for &(k, c) in &self.terms {
            out[k as usize] += c;
        }
        out
    }
}

#[derive(Clone)]
struct Best {
    value: f64,
    choice: Vec<usize>,
    /// Distribution of the LP class, when one is used.
    lp_point: Option<Vec<f64>>,
}

fn better(a: &Best, b: &Best, maximize: bool) -> bool {
    if maximize {
        a.value > b.value + 1e-12
    } else {
        a.value < b.value - 1e-12
    }
}

/// Earliest choice wins among values equal within 1e-12.
fn pick(a: Option<Best>, b: Option<Best>, maximize: bool) -> Option<Best> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if better(&b, &a, maximize) || (!better(&a, &b, maximize) && b.choice < a.choice) {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

impl<'a> Optimizer<'a> {
    pub fn new(phi: &'a ConstraintSystem, cfg: OptConfig) -> Self {
        let vertices = (0..phi.classes.len()).map(|_| OnceLock::new()).collect();
        Optimizer { phi, cfg, vertices }
    }

    pub fn config(&self) -> &OptConfig {
        &self.cfg
    }

    pub fn system(&self) -> &ConstraintSystem {
        self.phi
    }

    pub fn class_vertices(&self, class: usize) -> &Result<Vec<Vec<f64>>, OptError> {
        self.vertices[class]
            .get_or_init(|| enumerate_class_vertices(&self.phi.classes[class], class, self.cfg.vertex_cap))
    }

    /// Exact minimum and maximum of `obj` subject to the constraints, or a
    /// block-coordinate estimate flagged as non-exact when too large.
    pub fn optimize(&self, obj: &Objective) -> Result<OptResult, OptError> {
        let classes = obj.layout.classes.clone();
        let nclass = self.phi.classes.len();
        for &c in &classes {
            let cs = &self.phi.classes[c];
            if !cs.materialized {
                return Err(OptError::NotMaterialized { class: c });
            }
            match self.class_vertices(c) {
                Err(OptError::Infeasible { class }) => return Err(OptError::Infeasible { class: *class }),
                Err(OptError::DimensionCapExceeded { .. }) => {
                    if cs.lp().feasible_point().is_err() {
                        return Err(OptError::Infeasible { class: c });
                    }
                }
                Ok(v) if v.is_empty() => return Err(OptError::Infeasible { class: c }),
                _ => {}
            }
        }
        if classes.is_empty() {
            let v = obj.terms.iter().map(|t| t.1).sum();
            let empty = vec![Vec::new(); nclass];
            return Ok(OptResult { min: v, max: v, argmin: empty.clone(), argmax: empty, method: Method::VertexExact });
        }

        let counts: Vec<Option<usize>> =
            classes.iter().map(|&c| self.class_vertices(c).as_ref().ok().map(|v| v.len())).collect();
        let poly = Poly { widths: obj.layout.widths.clone(), terms: obj.terms.clone() };

        // full enumeration
        if counts.iter().all(Option::is_some) {
            let total = counts.iter().fold(1u64, |a, c| a.saturating_mul(c.unwrap() as u64));
            if total <= self.cfg.combo_cap {
                let mn = self.enumerate(&poly, &classes, None, false);
                let mx = self.enumerate(&poly, &classes, None, true);
                return Ok(self.result(&classes, mn, mx, None, Method::VertexExact));
            }
        }
        // one class by LP, the rest enumerated
        let lp_class = (0..classes.len()).max_by_key(|&j| counts[j].unwrap_or(usize::MAX));
        if let Some(jl) = lp_class {
            let others: Option<u64> = (0..classes.len())
                .filter(|&j| j != jl)
                .map(|j| counts[j].map(|c| c as u64))
                .try_fold(1u64, |a, c| c.map(|c| a.saturating_mul(c)));
            if others.is_some_and(|o| o <= LP_BUDGET as u64) {
                // move the LP class last so contraction leaves it
                let mut order: Vec<usize> = (0..classes.len()).filter(|&j| j != jl).collect();
                order.push(jl);
                let poly = reorder(&poly, &order);
                let ordered: Vec<usize> = order.iter().map(|&j| classes[j]).collect();
                let lp = self.phi.classes[classes[jl]].lp();
                let mn = self.enumerate(&poly, &ordered, Some(&lp), false);
                let mx = self.enumerate(&poly, &ordered, Some(&lp), true);
                return Ok(self.result(&ordered, mn, mx, Some(classes[jl]), Method::VertexLp));
            }
        }
        Ok(self.block_coordinate(obj))
    }

    fn result(
        &self,
        classes: &[usize],
        mn: Best,
        mx: Best,
        lp_class: Option<usize>,
        method: Method,
    ) -> OptResult {
        let point = |b: &Best| {
            let mut x = vec![Vec::new(); self.phi.classes.len()];
            for (j, &c) in classes.iter().enumerate() {
                if Some(c) == lp_class {
                    x[c] = b.lp_point.clone().unwrap_or_default();
                } else {
                    x[c] = self.class_vertices(c).as_ref().expect("enumerated class")[b.choice[j]].clone();
                }
            }
            x
        };
        OptResult { min: mn.value, max: mx.value, argmin: point(&mn), argmax: point(&mx), method }
    }

    /// Optimizes over vertex combinations of `classes` (in polynomial
    /// order), the last class by `lp` when given.
    fn enumerate(&self, poly: &Poly, classes: &[usize], lp: Option<&Lp>, maximize: bool) -> Best {
        let enumerated = classes.len() - usize::from(lp.is_some());
        let verts: Vec<&Vec<Vec<f64>>> =
            classes[..enumerated].iter().map(|&c| self.class_vertices(c).as_ref().expect("enumerated class")).collect();

        fn rec(
            poly: &Poly,
            depth: usize,
            verts: &[&Vec<Vec<f64>>],
            lp: Option<&Lp>,
            maximize: bool,
            choice: &mut Vec<usize>,
        ) -> Option<Best> {
            if depth == verts.len() {
                return match lp {
                    None => Some(Best { value: poly.constant(), choice: choice.clone(), lp_point: None }),
                    Some(lp) => {
                        let (v, x) = lp.solve(&poly.linear(), maximize).ok()?;
                        Some(Best { value: v, choice: choice.clone(), lp_point: Some(x) })
                    }
                };
            }
            let mut best = None;
            for (i, v) in verts[depth].iter().enumerate() {
                choice.push(i);
                let sub = poly.contract_first(v);
                best = pick(best, rec(&sub, depth + 1, verts, lp, maximize, choice), maximize);
                choice.pop();
            }
            best
        }

        if verts.is_empty() {
            return rec(poly, 0, &verts, lp, maximize, &mut Vec::new()).expect("feasible class");
        }
        let firsts: Vec<Option<Best>> = verts[0]
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let mut choice = vec![i];
                rec(&poly.contract_first(v), 1, &verts, lp, maximize, &mut choice)
            })
            .collect();
        firsts.into_iter().fold(None, |a, b| pick(a, b, maximize)).expect("feasible classes")
    }

    /// Alternating per-class LPs from random feasible starts.
    fn block_coordinate(&self, obj: &Objective) -> OptResult {
        let classes = &obj.layout.classes;
        let lps: HashMap<usize, Lp> = classes.iter().map(|&c| (c, self.phi.classes[c].lp())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let nclass = self.phi.classes.len();
        let run = |maximize: bool, rng: &mut ChaCha8Rng| -> (f64, Vec<Vec<f64>>) {
            let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
            for _ in 0..self.cfg.restarts.max(1) {
                let mut x = vec![Vec::new(); nclass];
                for &c in classes {
                    let lp = &lps[&c];
                    let dir: Vec<f64> = (0..lp.num_vars()).map(|_| rng.random::<f64>() - 0.5).collect();
                    x[c] = lp.solve(&dir, false).map(|s| s.1).unwrap_or_else(|_| vec![0.0; lp.num_vars()]);
                }
                let mut val = obj.eval(&x);
                for _ in 0..100 {
                    let prev = val;
                    for &c in classes {
                        let lin = obj.linear_in(c, &x, self.phi.classes[c].width);
                        if let Ok((_, p)) = lps[&c].solve(&lin, maximize) {
                            x[c] = p;
                        }
                    }
                    val = obj.eval(&x);
                    if (val - prev).abs() < 1e-12 {
                        break;
                    }
                }
                let improves = match &best {
                    None => true,
                    Some((b, _)) => (maximize && val > *b) || (!maximize && val < *b),
                };
                if improves {
                    best = Some((val, x));
                }
            }
            best.expect("at least one restart")
        };
        let (mn, argmin) = run(false, &mut rng);
        let (mx, argmax) = run(true, &mut rng);
        OptResult { min: mn, max: mx, argmin, argmax, method: Method::BlockCoordinate }
    }
}

/// Permutes the class blocks of `poly` to `order`.
fn reorder(poly: &Poly, order: &[usize]) -> Poly {
    let n = poly.widths.len();
    let offs: Vec<u32> = (0..n).map(|j| poly.offset(j)).collect();
    let widths: Vec<u32> = order.iter().map(|&j| poly.widths[j]).collect();
    let new_offs: Vec<u32> = (0..n).map(|t| widths[t + 1..].iter().sum()).collect();
    let terms = poly
        .terms
        .iter()
        .map(|&(k, c)| {
            let mut nk = 0;
            for (t, &j) in order.iter().enumerate() {
                let local = (k >> offs[j]) & ((1u64 << poly.widths[j]) - 1);
                nk |= local << new_offs[t];
            }
            (nk, c)
        })
        .collect();
    Poly { widths, terms }
}

/// Whether `obj` can take some value in `[l, u]`; the image of a continuous
/// function over a product of convex sets is an interval.
pub fn check_sat(range: &OptResult, l: f64, u: f64) -> bool {
    range.max >= l - 1e-12 && range.min <= u + 1e-12
}

/// Range of one class-local linear function `coefs · V` over the class.
pub fn linear_range(cs: &ClassSystem, coefs: &[f64]) -> Result<(f64, f64), LpError> {
    let lp = cs.lp();
    let lo = lp.solve(coefs, false)?.0;
    let hi = lp.solve(coefs, true)?.0;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests;
