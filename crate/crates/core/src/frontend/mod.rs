//! Praline source text: lexing, parsing, validation and correlation classes.
//!
//! The surface syntax is ProbLog-like:
//!
//! ```text
//! 0.7::edge(5,7).                      % input fact with marginal probability
//! 0.8::edge(2,5) | edge(1,4).          % conditional probability
//! corr(edge(2,5), edge(1,4)).          % facts that may be correlated
//! 3::Class(edge(2,6)).                 % explicit class assignment
//! 1::path(X,Y) :- edge(X,Y).           % rule with probability
//! reach(X) :- start(X), \+blocked(X).  % negation in rule bodies
//! query(path(1,7)).
//! ```

mod classes;
mod lexer;
mod parser;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use classes::infer_correlation_classes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Loc {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("{loc}: syntax error: expected {expected}, found {found}")]
    Syntax { loc: Loc, expected: String, found: String },
    #[error("{loc}: probability {value} is outside [0, 1]")]
    ProbabilityRange { loc: Loc, value: f64 },
    #[error("{loc}: `{fact}` is not declared as an input fact")]
    UndeclaredFact { loc: Loc, fact: String },
    #[error("{loc}: `{fact}` is placed in class {first} and in class {second}")]
    Conflict { loc: Loc, fact: String, first: i64, second: i64 },
    #[error("{loc}: relation `{pred}` has both input facts and rules")]
    MixedRelation { loc: Loc, pred: String },
    #[error("{loc}: variable `{var}` does not occur in a positive body literal")]
    UnsafeVariable { loc: Loc, var: String },
    #[error("{loc}: input fact `{fact}` is not ground")]
    NonGround { loc: Loc, fact: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(String),
    Var(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(s) | Term::Var(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: &[&str]) -> Self {
        let args = args
            .iter()
            .map(|a| {
                if a.starts_with(|c: char| c.is_uppercase() || c == '_') {
                    Term::Var(a.to_string())
                } else {
                    Term::Const(a.to_string())
                }
            })
            .collect();
        Atom { pred: pred.to_string(), args }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| matches!(t, Term::Const(_)))
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Relation key `name/arity`.
    pub fn relation(&self) -> String {
        format!("{}/{}", self.pred, self.args.len())
    }

    /// True when `ground` is an instance of this (possibly non-ground) pattern.
    pub fn matches(&self, ground: &Atom) -> bool {
        if self.pred != ground.pred || self.args.len() != ground.args.len() {
            return false;
        }
        let mut bound: HashMap<&str, &Term> = HashMap::new();
        for (p, g) in self.args.iter().zip(&ground.args) {
            match p {
                Term::Const(_) => {
                    if p != g {
                        return false;
                    }
                }
                Term::Var(v) if v == "_" => {}
                Term::Var(v) => {
                    if let Some(prev) = bound.insert(v, g) {
                        if prev != g {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pred)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("\\+")?;
        }
        write!(f, "{}", self.atom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Literal>,
    pub prob: f64,
    pub loc: Loc,
}

impl Rule {
    pub fn body_pos(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter(|l| !l.negated).map(|l| &l.atom)
    }

    pub fn body_neg(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter(|l| l.negated).map(|l| &l.atom)
    }

    /// Variables in order of first occurrence (head first).
    pub fn variables(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for a in std::iter::once(&self.head).chain(self.body.iter().map(|l| &l.atom)) {
            for v in a.vars() {
                if !seen.iter().any(|s| s == v) {
                    seen.push(v.to_string());
                }
            }
        }
        seen
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{} :- ", self.prob, self.head)?;
        for (i, l) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str(".")
    }
}

pub type FactId = usize;

/// `prob :: target | given`; an empty `given` is a marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProbDecl {
    pub target: FactId,
    /// Given facts with polarity (`true` for a positive literal).
    pub given: Vec<(FactId, bool)>,
    pub prob: f64,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationClass {
    /// `-1` for facts that were never linked to any other fact.
    pub id: i64,
    pub members: Vec<FactId>,
}

impl CorrelationClass {
    /// Zero-based position of `fact` within the class.
    pub fn index(&self, fact: FactId) -> Option<usize> {
        self.members.iter().position(|&m| m == fact)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecl {
    pub id: i64,
    pub fact: FactId,
    pub loc: Loc,
}

#[derive(Debug, Clone, Default)]
pub struct Program {
    /// Declared input facts in order of first declaration.
    pub facts: Vec<Atom>,
    /// Correlation classes ordered by their first member.
    pub classes: Vec<CorrelationClass>,
    pub rules: Vec<Rule>,
    pub input_probs: Vec<InputProbDecl>,
    pub corr_decls: Vec<Vec<FactId>>,
    pub class_decls: Vec<ClassDecl>,
    pub queries: Vec<Atom>,
    fact_index: HashMap<Atom, FactId>,
    /// fact -> (class position, member position)
    membership: Vec<(usize, usize)>,
}

impl Program {
    pub fn fact_id(&self, atom: &Atom) -> Option<FactId> {
        self.fact_index.get(atom).copied()
    }

    /// Position of the fact's class in `classes` and its index inside it.
    pub fn class_of(&self, fact: FactId) -> (usize, usize) {
        self.membership[fact]
    }

    /// First marginal declared for `fact`.
    pub fn marginal(&self, fact: FactId) -> Option<f64> {
        self.input_probs
            .iter()
            .find(|d| d.target == fact && d.given.is_empty())
            .map(|d| d.prob)
    }

    pub fn input_relations(&self) -> Vec<String> {
        let mut rels: Vec<String> = self.facts.iter().map(Atom::relation).collect();
        rels.sort();
        rels.dedup();
        rels
    }

    fn declare_fact(&mut self, atom: Atom) -> FactId {
        if let Some(&id) = self.fact_index.get(&atom) {
            return id;
        }
        let id = self.facts.len();
        self.fact_index.insert(atom.clone(), id);
        self.facts.push(atom);
        id
    }

    pub(crate) fn set_classes(&mut self, classes: Vec<CorrelationClass>) {
        let mut membership = vec![(usize::MAX, usize::MAX); self.facts.len()];
        for (ci, c) in classes.iter().enumerate() {
            for (mi, &m) in c.members.iter().enumerate() {
                membership[m] = (ci, mi);
            }
        }
        self.classes = classes;
        self.membership = membership;
    }
}

impl fmt::Display for Program {
    /// Canonical printer; its output parses back to an equivalent program.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.input_probs {
            write!(f, "{}::{}", d.prob, self.facts[d.target])?;
            for (i, (g, pos)) in d.given.iter().enumerate() {
                f.write_str(if i == 0 { " | " } else { ", " })?;
                if !pos {
                    f.write_str("\\+")?;
                }
                write!(f, "{}", self.facts[*g])?;
            }
            f.write_str(".\n")?;
        }
        for group in &self.corr_decls {
            let names: Vec<String> = group.iter().map(|&g| self.facts[g].to_string()).collect();
            writeln!(f, "corr({}).", names.join(", "))?;
        }
        for c in &self.class_decls {
            writeln!(f, "{}::Class({}).", c.id, self.facts[c.fact])?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        for q in &self.queries {
            writeln!(f, "query({q}).")?;
        }
        Ok(())
    }
}

/// Parses, validates and resolves correlation classes.
pub fn parse(source: &str) -> Result<Program, FrontendError> {
    let stmts = parser::parse_statements(source)?;
    let program = parser::resolve(stmts)?;
    infer_correlation_classes(program)
}

/// Parses a single atom such as `path(1,X)`, as used for query patterns.
pub fn parse_atom(source: &str) -> Result<Atom, FrontendError> {
    let stmts = parser::parse_statements(&format!("query({}).", source.trim().trim_end_matches('.')))?;
    let program = parser::resolve(stmts)?;
    match <[Atom; 1]>::try_from(program.queries) {
        Ok([a]) => Ok(a),
        Err(_) => Err(FrontendError::Syntax {
            loc: Loc::default(),
            expected: "one atom".into(),
            found: source.to_string(),
        }),
    }
}
