//! Symbolic probability expressions.
//!
//! A [`ProbExpr`] is a sum over product terms `ψ = V1[b1]·V2[b2]·…` (one joint
//! variable per correlation class) of coefficient terms `λ`, where each `λ` is
//! a signed sum of monomials over rule probability variables. Classes a term
//! does not mention are summed out, which is sound because every class's joint
//! variables sum to one.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::frontend::Program;
use crate::grounder::{DerivationGraph, NodeId};

/// Index of a ground rule in [`DerivationGraph::rules`].
pub type VarId = u32;

/// Terms beyond this count trigger expansion into multilinear normal form.
const EXPAND_AT: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymError {
    #[error("expression template needs {bits} bits of class assignments, cap is {cap}")]
    TemplateTooLarge { bits: u32, cap: u32 },
}

/// `Π_{v∈pos} v · Π_{v∈neg} (1 - v)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub pos: Vec<VarId>,
    pub neg: Vec<VarId>,
}

fn sorted_union(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn intersects(a: &[VarId], b: &[VarId]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

impl Monomial {
    pub fn var(v: VarId) -> Self {
        Monomial { pos: vec![v], neg: vec![] }
    }

    pub fn not(v: VarId) -> Self {
        Monomial { pos: vec![], neg: vec![v] }
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    /// Product of two monomials, or `None` when one requires a rule to fire
    /// and the other requires it not to.
    pub fn join(&self, other: &Monomial) -> Option<Monomial> {
        if intersects(&self.pos, &other.neg) || intersects(&self.neg, &other.pos) {
            return None;
        }
        Some(Monomial { pos: sorted_union(&self.pos, &other.pos), neg: sorted_union(&self.neg, &other.neg) })
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        let a: f64 = self.pos.iter().map(|&v| p[v as usize]).product();
        let b: f64 = self.neg.iter().map(|&v| 1.0 - p[v as usize]).product();
        a * b
    }

    fn render(&self, labels: &[String]) -> String {
        let mut s = String::new();
        for &v in &self.pos {
            s.push_str(&labels[v as usize]);
        }
        for &v in &self.neg {
            let _ = write!(s, "(1-{})", labels[v as usize]);
        }
        s
    }
}

/// Signed sum of monomials; the empty monomial is the constant 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coef {
    terms: Vec<(i64, Monomial)>,
}

impl Coef {
    pub fn zero() -> Self {
        Coef::default()
    }

    pub fn one() -> Self {
        Coef { terms: vec![(1, Monomial::default())] }
    }

    pub fn var(v: VarId) -> Self {
        Coef { terms: vec![(1, Monomial::var(v))] }
    }

    pub fn terms(&self) -> &[(i64, Monomial)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].0 == 1 && self.terms[0].1.is_empty()
    }

    /// Sums like terms, keeping first-occurrence order.
    fn collect(items: impl IntoIterator<Item = (i64, Monomial)>) -> Coef {
        let mut idx: HashMap<Monomial, usize> = HashMap::new();
        let mut terms: Vec<(i64, Monomial)> = Vec::new();
        for (c, m) in items {
            if c == 0 {
                continue;
            }
            match idx.get(&m) {
                Some(&i) => terms[i].0 += c,
                None => {
                    idx.insert(m.clone(), terms.len());
                    terms.push((c, m));
                }
            }
        }
        terms.retain(|t| t.0 != 0);
        let mut out = Coef { terms };
        if out.terms.len() > EXPAND_AT {
            out.expand();
        }
        out
    }

    /// Rewrites every `(1 - v)` as `1 - v` so that equal polynomials share a
    /// representation.
    fn expand(&mut self) {
        if self.terms.iter().any(|t| t.1.neg.len() > 12) {
            return;
        }
        let mut idx: BTreeMap<Vec<VarId>, i64> = BTreeMap::new();
        for (c, m) in &self.terms {
            let k = m.neg.len();
            for mask in 0u32..(1 << k) {
                let extra: Vec<VarId> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| m.neg[i]).collect();
                let sign = if extra.len().is_multiple_of(2) { 1 } else { -1 };
                *idx.entry(sorted_union(&m.pos, &extra)).or_default() += sign * c;
            }
        }
        self.terms =
            idx.into_iter().filter(|e| e.1 != 0).map(|(pos, c)| (c, Monomial { pos, neg: Vec::new() })).collect();
    }

    /// Probability that both events hold.
    pub fn joint(&self, other: &Coef) -> Coef {
        if self.is_one() {
            return other.clone();
        }
        if other.is_one() {
            return self.clone();
        }
        let mut items = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (c1, m1) in &self.terms {
            for (c2, m2) in &other.terms {
                if let Some(m) = m1.join(m2) {
                    items.push((c1 * c2, m));
                }
            }
        }
        Coef::collect(items)
    }

    /// Probability that the event fails.
    pub fn complement(&self) -> Coef {
        if let [(1, m)] = self.terms.as_slice() {
            match (m.pos.as_slice(), m.neg.as_slice()) {
                ([v], []) => return Coef { terms: vec![(1, Monomial::not(*v))] },
                ([], [v]) => return Coef::var(*v),
                _ => {}
            }
        }
        let items = std::iter::once((1, Monomial::default())).chain(self.terms.iter().map(|(c, m)| (-c, m.clone())));
        Coef::collect(items)
    }

    /// Probability of the union of two events.
    pub fn union(&self, other: &Coef) -> Coef {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let j = self.joint(other);
        let items = self
            .terms
            .iter()
            .cloned()
            .chain(other.terms.iter().cloned())
            .chain(j.terms.into_iter().map(|(c, m)| (-c, m)));
        Coef::collect(items)
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.terms.iter().map(|(c, m)| *c as f64 * m.eval(p)).sum()
    }

    pub fn render(&self, labels: &[String]) -> String {
        let one = |c: i64, m: &Monomial| -> String {
            if m.is_empty() {
                c.abs().to_string()
            } else if c.abs() == 1 {
                m.render(labels)
            } else {
                format!("{}*{}", c.abs(), m.render(labels))
            }
        };
        match self.terms.as_slice() {
            [] => "0".into(),
            [(c, m)] => format!("{}{}", if *c < 0 { "-" } else { "" }, one(*c, m)),
            [(c0, m0), rest @ ..] => {
                let mut s = format!("({}{}", if *c0 < 0 { "-" } else { "" }, one(*c0, m0));
                for (c, m) in rest {
                    let _ = write!(s, " {} {}", if *c < 0 { '-' } else { '+' }, one(*c, m));
                }
                s.push(')');
                s
            }
        }
    }
}

/// Which classes a product-term key covers and how its bits are laid out.
///
/// Keys concatenate the local assignment of each class, first class in the
/// most significant bits; within a class the first member is the most
/// significant bit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub classes: Vec<usize>,
    pub widths: Vec<u32>,
}

impl Layout {
    pub fn bits(&self) -> u32 {
        self.widths.iter().sum()
    }

    fn offset(&self, j: usize) -> u32 {
        self.widths[j + 1..].iter().sum()
    }

    /// Local assignment of the `j`-th class of the layout inside `key`.
    pub fn local(&self, key: u64, j: usize) -> u64 {
        (key >> self.offset(j)) & ((1u64 << self.widths[j]) - 1)
    }

    fn union(&self, other: &Layout) -> Layout {
        let mut pairs: BTreeMap<usize, u32> = BTreeMap::new();
        for (c, w) in self.classes.iter().zip(&self.widths).chain(other.classes.iter().zip(&other.widths)) {
            let prev = pairs.insert(*c, *w);
            debug_assert!(prev.is_none_or(|p| p == *w), "class width mismatch");
        }
        Layout { classes: pairs.keys().copied().collect(), widths: pairs.values().copied().collect() }
    }

    /// Moves the bits of `key` (in this layout) into their places in `to`,
    /// which must contain every class of this layout.
    fn embed(&self, key: u64, to: &Layout) -> u64 {
        let mut out = 0;
        for j in 0..self.classes.len() {
            let t = to.classes.binary_search(&self.classes[j]).expect("class in target layout");
            out |= self.local(key, j) << to.offset(t);
        }
        out
    }

    /// Extracts from `key` (in this layout) the bits of the classes in `to`.
    fn project(&self, key: u64, to: &Layout) -> u64 {
        let mut out = 0;
        for t in 0..to.classes.len() {
            let j = self.classes.binary_search(&to.classes[t]).expect("class in source layout");
            out |= self.local(key, j) << to.offset(t);
        }
        out
    }

    fn intersect(&self, other: &Layout) -> Layout {
        let mut out = Layout::default();
        for (c, w) in self.classes.iter().zip(&self.widths) {
            if other.classes.binary_search(c).is_ok() {
                out.classes.push(*c);
                out.widths.push(*w);
            }
        }
        out
    }
}

/// Sum of product terms with symbolic coefficients. Absent keys have
/// coefficient zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbExpr {
    pub layout: Layout,
    pub terms: BTreeMap<u64, Coef>,
}

impl ProbExpr {
    pub fn zero() -> Self {
        ProbExpr::default()
    }

    pub fn constant(c: Coef) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(0, c);
        }
        ProbExpr { layout: Layout::default(), terms }
    }

    pub fn one() -> Self {
        ProbExpr::constant(Coef::one())
    }

    /// Expression of input member `member` of class `class` of size `width`:
    /// coefficient 1 on every assignment that sets its bit.
    pub fn input(class: usize, width: u32, member: usize) -> Self {
        let bit = 1u64 << (width as usize - 1 - member);
        let terms = (0..1u64 << width).filter(|b| b & bit != 0).map(|b| (b, Coef::one())).collect();
        ProbExpr { layout: Layout { classes: vec![class], widths: vec![width] }, terms }
    }

    pub fn coef(&self, key: u64) -> Option<&Coef> {
        self.terms.get(&key)
    }

    /// Restates the expression over a larger layout.
    pub fn extend(&self, to: &Layout) -> ProbExpr {
        if *to == self.layout {
            return self.clone();
        }
        let full = 1u64 << to.bits();
        let mut terms = BTreeMap::new();
        for key in 0..full {
            if let Some(c) = self.terms.get(&to.project(key, &self.layout)) {
                terms.insert(key, c.clone());
            }
        }
        ProbExpr { layout: to.clone(), terms }
    }

    /// The `⊖` operator.
    pub fn neg(&self) -> ProbExpr {
        let zero = Coef::zero();
        let mut terms = BTreeMap::new();
        for key in 0..1u64 << self.layout.bits() {
            let c = self.terms.get(&key).unwrap_or(&zero).complement();
            if !c.is_zero() {
                terms.insert(key, c);
            }
        }
        ProbExpr { layout: self.layout.clone(), terms }
    }

    /// The `⊗` operator.
    pub fn mul(&self, other: &ProbExpr) -> ProbExpr {
        let layout = self.layout.union(&other.layout);
        let shared = self.layout.intersect(&other.layout);
        let mut by_shared: HashMap<u64, Vec<(u64, &Coef)>> = HashMap::new();
        for (&k, c) in &other.terms {
            by_shared.entry(other.layout.project(k, &shared)).or_default().push((k, c));
        }
        let mut terms = BTreeMap::new();
        for (&k1, c1) in &self.terms {
            let Some(matches) = by_shared.get(&self.layout.project(k1, &shared)) else {
                continue;
            };
            let base = self.layout.embed(k1, &layout);
            for &(k2, c2) in matches {
                let c = c1.joint(c2);
                if !c.is_zero() {
                    terms.insert(base | other.layout.embed(k2, &layout), c);
                }
            }
        }
        ProbExpr { layout, terms }
    }

    /// The `⊕` operator.
    pub fn add(&self, other: &ProbExpr) -> ProbExpr {
        let layout = self.layout.union(&other.layout);
        let a = self.extend(&layout);
        let b = other.extend(&layout);
        let mut terms = a.terms;
        for (k, c2) in b.terms {
            let c = match terms.remove(&k) {
                Some(c1) => c1.union(&c2),
                None => c2,
            };
            if !c.is_zero() {
                terms.insert(k, c);
            }
        }
        ProbExpr { layout, terms }
    }

    /// Multiplies every coefficient by the probability of rule event `v`.
    pub fn scale_var(&self, v: VarId) -> ProbExpr {
        let f = Coef::var(v);
        let terms = self
            .terms
            .iter()
            .filter_map(|(&k, c)| {
                let c = c.joint(&f);
                (!c.is_zero()).then_some((k, c))
            })
            .collect();
        ProbExpr { layout: self.layout.clone(), terms }
    }

    /// Binds rule variables to probabilities, leaving a multilinear polynomial
    /// over joint variables.
    pub fn substitute(&self, rule_probs: &[f64]) -> Objective {
        let terms = self
            .terms
            .iter()
            .map(|(&k, c)| (k, c.eval(rule_probs)))
            .filter(|t| t.1 != 0.0)
            .collect();
        Objective { layout: self.layout.clone(), terms }
    }

    /// Prints every product term of the layout, zeros included. Class names
    /// are `V` when `single_class` and `V1`, `V2`, … otherwise.
    pub fn render(&self, labels: &[String], single_class: bool) -> String {
        let zero = Coef::zero();
        let mut parts = Vec::new();
        for key in 0..1u64 << self.layout.bits() {
            let c = self.terms.get(&key).unwrap_or(&zero);
            parts.push(format!("{}*{}", c.render(labels), render_term(&self.layout, key, single_class)));
        }
        if parts.is_empty() {
            return "0".into();
        }
        parts.join(" + ")
    }
}

fn render_term(layout: &Layout, key: u64, single_class: bool) -> String {
    if layout.classes.is_empty() {
        return "1".into();
    }
    let mut s = String::new();
    for j in 0..layout.classes.len() {
        let name = if single_class { "V".to_string() } else { format!("V{}", layout.classes[j] + 1) };
        let w = layout.widths[j] as usize;
        let _ = write!(s, "{name}[{:0w$b}]", layout.local(key, j));
    }
    s
}

/// A [`ProbExpr`] with rule probabilities substituted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub layout: Layout,
    pub terms: Vec<(u64, f64)>,
}

impl Objective {
    /// Value at per-class joint distributions `x`, indexed by class position.
    pub fn eval(&self, x: &[Vec<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|&(k, c)| {
                let mut v = c;
                for j in 0..self.layout.classes.len() {
                    v *= x[self.layout.classes[j]][self.layout.local(k, j) as usize];
                }
                v
            })
            .sum()
    }

    /// Coefficients of the objective as a linear function of class `class`
    /// with every other class fixed at `x`.
    pub fn linear_in(&self, class: usize, x: &[Vec<f64>], width: u32) -> Vec<f64> {
        let mut out = vec![0.0; 1 << width];
        let Ok(jc) = self.layout.classes.binary_search(&class) else {
            let v = self.eval(x);
            out.iter_mut().for_each(|o| *o = v);
            return out;
        };
        for &(k, c) in &self.terms {
            let mut v = c;
            for j in 0..self.layout.classes.len() {
                if j != jc {
                    v *= x[self.layout.classes[j]][self.layout.local(k, j) as usize];
                }
            }
            out[self.layout.local(k, jc) as usize] += v;
        }
        out
    }
}

/// Memoized bottom-up construction of node expressions.
pub struct ObjectiveBuilder<'a> {
    g: &'a DerivationGraph,
    leaf: Box<dyn Fn(NodeId) -> Option<(usize, usize)> + 'a>,
    widths: Vec<u32>,
    cap_bits: u32,
    memo: HashMap<NodeId, ProbExpr>,
}

impl<'a> ObjectiveBuilder<'a> {
    /// `leaf(n)` names the class position and member index of every node
    /// treated as an input; `widths` gives each class's member count.
    pub fn new(
        g: &'a DerivationGraph,
        leaf: impl Fn(NodeId) -> Option<(usize, usize)> + 'a,
        widths: Vec<u32>,
        cap_bits: u32,
    ) -> Self {
        ObjectiveBuilder { g, leaf: Box::new(leaf), widths, cap_bits, memo: HashMap::new() }
    }

    /// Builder over the input classes of `program`.
    pub fn for_program(g: &'a DerivationGraph, program: &'a Program, cap_bits: u32) -> Self {
        let widths = program.classes.iter().map(|c| c.len() as u32).collect();
        ObjectiveBuilder::new(g, move |n| g.fact_of(n).map(|f| program.class_of(f)), widths, cap_bits)
    }

    fn check(&self, a: &Layout, b: &Layout) -> Result<(), SymError> {
        let bits = a.union(b).bits();
        if bits > self.cap_bits {
            return Err(SymError::TemplateTooLarge { bits, cap: self.cap_bits });
        }
        Ok(())
    }

    pub fn build(&mut self, root: NodeId) -> Result<ProbExpr, SymError> {
        // iterative post-order over the part of the cone above the leaves
        let mut stack = vec![(root, false)];
        while let Some((v, done)) = stack.pop() {
            if self.memo.contains_key(&v) {
                continue;
            }
            if let Some((c, m)) = (self.leaf)(v) {
                let e = ProbExpr::input(c, self.widths[c], m);
                self.memo.insert(v, e);
                continue;
            }
            if !done {
                stack.push((v, true));
                for &e in &self.g.out[v] {
                    for &b in self.g.edges[e].pos.iter().chain(&self.g.edges[e].neg) {
                        if !self.memo.contains_key(&b) {
                            stack.push((b, false));
                        }
                    }
                }
                continue;
            }
            let mut node = ProbExpr::zero();
            for &ei in &self.g.out[v] {
                let edge = &self.g.edges[ei];
                let p = self.g.rules[edge.rule].prob;
                if p <= 0.0 {
                    continue;
                }
                let mut acc = ProbExpr::one();
                for &b in &edge.pos {
                    let e = &self.memo[&b];
                    self.check(&acc.layout, &e.layout)?;
                    acc = acc.mul(e);
                }
                for &b in &edge.neg {
                    let e = self.memo[&b].neg();
                    self.check(&acc.layout, &e.layout)?;
                    acc = acc.mul(&e);
                }
                if p < 1.0 {
                    acc = acc.scale_var(edge.rule as VarId);
                }
                self.check(&node.layout, &acc.layout)?;
                node = node.add(&acc);
            }
            self.memo.insert(v, node);
        }
        Ok(self.memo[&root].clone())
    }
}

/// Expression for `root` over the classes of `program`.
pub fn gen_objective(
    program: &Program,
    g: &DerivationGraph,
    root: NodeId,
    cap_bits: u32,
) -> Result<ProbExpr, SymError> {
    ObjectiveBuilder::for_program(g, program, cap_bits).build(root)
}
