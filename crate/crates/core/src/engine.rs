//! End-to-end inference: parse result in, bounds report out.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{approx_bounds, input_intervals, ApproxResult, Interval};
use crate::constraints::{check_feasible, gen_constraints, ConstraintSystem, Feasibility};
use crate::corrtypes::CorrEnv;
use crate::frontend::{Atom, Program};
use crate::grounder::{solve_standard, DerivationGraph, GroundError, NodeId, NodeKind};
use crate::optimizer::{OptConfig, Optimizer};
use crate::refine::{build_cut_system, cut_range, make_delta_precise, CombinedOracle};
use crate::symexpr::{gen_objective, ObjectiveBuilder};

/// Correlation lookups answered before the rest degrade to unknown.
const CORR_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Approx,
    Delta,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "approx" => Ok(Mode::Approx),
            "delta" => Ok(Mode::Delta),
            _ => Err(format!("unknown mode `{s}` (expected exact, approx or delta)")),
        }
    }
}

/// Guarantee actually delivered for one fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactMode {
    Exact,
    Approx,
    Delta,
    SoundnessOnly,
}

impl std::fmt::Display for FactMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FactMode::Exact => "exact",
            FactMode::Approx => "approx",
            FactMode::Delta => "delta",
            FactMode::SoundnessOnly => "soundness_only",
        })
    }
}

pub const FLAG_LARGE_CLASS: &str = "large_class";
pub const FLAG_HEURISTIC: &str = "heuristic_optimizer";
pub const FLAG_TEMPLATE: &str = "template_cap";

#[derive(Debug, Clone)]
pub struct Options {
    pub mode: Mode,
    pub delta: f64,
    pub seed: u64,
    /// Query patterns; when empty the program's own queries are used, and
    /// when those are empty too, every derived fact.
    pub queries: Vec<Atom>,
    pub max_class_size: usize,
    /// Largest joint-variable count `2^k` of a cut encoding.
    pub cut_cap: usize,
    /// Largest number of class bits in a symbolic template.
    pub template_bits: u32,
    pub vertex_cap: usize,
    pub combo_cap: u64,
    pub restarts: usize,
    /// Treat every inferred correlation as unknown.
    pub force_unknown_corr: bool,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            mode: Mode::Delta,
            delta: 0.01,
            seed: 42,
            queries: Vec::new(),
            max_class_size: 12,
            cut_cap: 4096,
            template_bits: 20,
            vertex_cap: 64,
            combo_cap: 1_000_000,
            restarts: 32,
            force_unknown_corr: false,
            jobs: None,
        }
    }
}

impl Options {
    fn opt_config(&self) -> OptConfig {
        OptConfig { vertex_cap: self.vertex_cap, combo_cap: self.combo_cap, restarts: self.restarts, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactReport {
    pub atom: String,
    pub lower: f64,
    pub upper: f64,
    pub mode: FactMode,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub delta: f64,
    pub seed: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub facts: Vec<FactReport>,
    pub meta: Meta,
}

impl Report {
    pub fn get(&self, atom: &str) -> Option<&FactReport> {
        self.facts.iter().find(|f| f.atom == atom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("No solution")]
    NoSolution { class: usize },
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error("invalid delta {0}: expected a value in (0, 1]")]
    Delta(f64),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Everything shared between the stages, for reuse by the dump commands.
pub struct Prepared<'p> {
    pub program: &'p Program,
    pub graph: DerivationGraph,
    pub phi: ConstraintSystem,
    pub targets: Vec<NodeId>,
}

pub fn prepare<'p>(program: &'p Program, opts: &Options) -> Result<Prepared<'p>, EngineError> {
    let (_, graph) = solve_standard(program)?;
    let phi = gen_constraints(program, opts.max_class_size);
    if let Feasibility::Infeasible { class } = check_feasible(&phi) {
        return Err(EngineError::NoSolution { class });
    }
    let targets = select_targets(program, &graph, &opts.queries);
    Ok(Prepared { program, graph, phi, targets })
}

fn select_targets(program: &Program, g: &DerivationGraph, queries: &[Atom]) -> Vec<NodeId> {
    let patterns = if queries.is_empty() { &program.queries[..] } else { queries };
    let candidates = (0..g.nodes.len()).filter(|&v| !matches!(g.nodes[v].kind, NodeKind::Aux { .. }));
    if patterns.is_empty() {
        return candidates.filter(|&v| g.nodes[v].kind == NodeKind::Output).collect();
    }
    candidates.filter(|&v| patterns.iter().any(|q| q.matches(&g.nodes[v].atom))).collect()
}

/// Whether every class feeding `v` has its constraints materialized.
fn small_classes(pre: &Prepared<'_>, v: NodeId) -> bool {
    pre.graph
        .cone(v)
        .into_iter()
        .filter_map(|n| pre.graph.fact_of(n))
        .all(|f| pre.phi.classes[pre.program.class_of(f).0].materialized)
}

fn pool(opts: &Options) -> Result<rayon::ThreadPool, EngineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().map_err(|e| EngineError::Pool(e.to_string()))
}

/// Exact range of `P(v)`, or the reason it is out of reach.
fn exact_range(pre: &Prepared<'_>, opt: &Optimizer<'_>, v: NodeId, opts: &Options) -> Result<Interval, &'static str> {
    if !small_classes(pre, v) {
        return Err(FLAG_LARGE_CLASS);
    }
    let probs: Vec<f64> = pre.graph.rules.iter().map(|r| r.prob).collect();
    let expr = gen_objective(pre.program, &pre.graph, v, opts.template_bits).map_err(|_| FLAG_TEMPLATE)?;
    match opt.optimize(&expr.substitute(&probs)) {
        Ok(r) if r.exact() => Ok(Interval::new(r.min, r.max)),
        _ => Err(FLAG_HEURISTIC),
    }
}

pub fn solve(program: &Program, opts: &Options) -> Result<Report, EngineError> {
    let start = Instant::now();
    if opts.mode == Mode::Delta && !(opts.delta > 0.0 && opts.delta <= 1.0) {
        return Err(EngineError::Delta(opts.delta));
    }
    let pre = prepare(program, opts)?;
    let cfg = opts.opt_config();
    let opt = Optimizer::new(&pre.phi, cfg.clone());
    let env = CorrEnv::new(program, &pre.phi, opts.force_unknown_corr, CORR_BUDGET);

    let approx = if opts.mode == Mode::Exact && pre.targets.iter().all(|&v| small_classes(&pre, v)) {
        None
    } else {
        Some(approx_bounds(&pre.graph, &input_intervals(program, &pre.phi), &env))
    };
    // exact mode computes the approximation lazily, only when it degrades
    let approx_of = |v: NodeId| -> Interval {
        match &approx {
            Some(a) => a.bounds[v],
            None => Interval::new(0.0, 1.0),
        }
    };

    let run = |v: NodeId| -> FactReport {
        let (iv, mode, flags) = match opts.mode {
            Mode::Exact => match exact_range(&pre, &opt, v, opts) {
                Ok(r) => (r, FactMode::Exact, Vec::new()),
                Err(flag) => {
                    log::warn!("{}: exact bounds out of reach ({flag}); reporting approximate bounds", pre.graph.nodes[v].name());
                    (approx_of(v), FactMode::Approx, vec![flag.to_string()])
                }
            },
            Mode::Approx => {
                let flags = if small_classes(&pre, v) { Vec::new() } else { vec![FLAG_LARGE_CLASS.to_string()] };
                (approx_of(v), FactMode::Approx, flags)
            }
            Mode::Delta => refine_one(&pre, &opt, approx.as_ref().expect("approximation"), &env, v, opts, &cfg),
        };
        FactReport { atom: pre.graph.nodes[v].atom.to_string(), lower: iv.lo, upper: iv.hi, mode, flags }
    };

    let facts: Vec<FactReport> = if opts.mode == Mode::Exact && approx.is_none() {
        pre.targets.iter().map(|&v| run(v)).collect()
    } else {
        pool(opts)?.install(|| pre.targets.par_iter().map(|&v| run(v)).collect())
    };
    let facts = match (opts.mode, approx) {
        // an exact-mode fact that degraded without an approximation at hand
        (Mode::Exact, None) if facts.iter().any(|f| f.mode != FactMode::Exact) => {
            let a = approx_bounds(&pre.graph, &input_intervals(program, &pre.phi), &env);
            facts
                .into_iter()
                .zip(&pre.targets)
                .map(|(mut f, &v)| {
                    if f.mode != FactMode::Exact {
                        (f.lower, f.upper) = (a.bounds[v].lo, a.bounds[v].hi);
                    }
                    f
                })
                .collect()
        }
        _ => facts,
    };
    Ok(Report {
        facts,
        meta: Meta { delta: opts.delta, seed: opts.seed, elapsed_ms: start.elapsed().as_millis() as u64 },
    })
}

fn refine_one(
    pre: &Prepared<'_>,
    opt: &Optimizer<'_>,
    approx: &ApproxResult,
    env: &CorrEnv<'_>,
    v: NodeId,
    opts: &Options,
    cfg: &OptConfig,
) -> (Interval, FactMode, Vec<String>) {
    let base = approx.bounds[v];
    let small = small_classes(pre, v);
    let mut flags = Vec::new();
    if !small {
        flags.push(FLAG_LARGE_CLASS.to_string());
    }
    // an approximation narrower than delta already meets the contract
    if base.width() < opts.delta {
        return (base, FactMode::Delta, flags);
    }
    // a private budget keeps the result independent of scheduling
    let cut = build_cut_system(&pre.graph, approx, &env.fork(), v, opts.cut_cap);
    let cr = cut_range(&pre.graph, &cut, approx, cfg);
    let exact_flag = std::cell::Cell::new(None);
    let exact: Option<Box<dyn FnOnce() -> Option<Interval> + '_>> = if small {
        Some(Box::new(|| match exact_range(pre, opt, v, opts) {
            Ok(r) => Some(r),
            Err(flag) => {
                exact_flag.set(Some(flag));
                None
            }
        }))
    } else {
        None
    };
    let mut oracle = CombinedOracle::new(cr, exact);
    let iv = match make_delta_precise(&mut oracle, base, opts.delta) {
        Ok(iv) => iv,
        Err(e) => {
            log::error!("{}: {e}", pre.graph.nodes[v].name());
            base
        }
    };
    let soundness_only = oracle.soundness_only;
    drop(oracle);
    if let Some(flag) = exact_flag.get() {
        flags.push(flag.to_string());
    }
    (iv, if soundness_only { FactMode::SoundnessOnly } else { FactMode::Delta }, flags)
}

/// Probability expression of every target, rule events as `r<k>`.
pub fn dump_exprs(pre: &Prepared<'_>, opts: &Options) -> String {
    let labels = pre.graph.rule_labels();
    let single = pre.program.classes.len() == 1;
    let mut builder = ObjectiveBuilder::for_program(&pre.graph, pre.program, opts.template_bits);
    let mut s = String::new();
    for &v in &pre.targets {
        let text = match builder.build(v) {
            Ok(e) => e.render(&labels, single),
            Err(e) => format!("% {e}"),
        };
        let _ = writeln!(s, "Pr({}) = {}", pre.graph.nodes[v].name(), text);
    }
    s
}

pub fn dump_constraints(pre: &Prepared<'_>) -> String {
    crate::constraints::render(&pre.phi, pre.program)
}

pub fn dump_correlations(pre: &Prepared<'_>, opts: &Options) -> String {
    CorrEnv::new(pre.program, &pre.phi, opts.force_unknown_corr, CORR_BUDGET).render()
}

pub fn dump_graph(pre: &Prepared<'_>) -> String {
    pre.graph.to_json()
}
