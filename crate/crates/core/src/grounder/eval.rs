//! Semi-naive bottom-up evaluation of the rule skeleton.
//!
//! Negative literals are treated as satisfiable while computing the set of
//! atoms that can hold in some world; a negated atom that can never be derived
//! is dropped from the instance since it is true everywhere.

use std::collections::{HashMap, HashSet};

use crate::frontend::{Atom, Program, Term};

#[derive(Default)]
struct Relation {
    tuples: Vec<Vec<String>>,
    set: HashSet<Vec<String>>,
    /// (argument position, value) -> tuple indices
    index: HashMap<(usize, String), Vec<usize>>,
}

impl Relation {
    fn insert(&mut self, t: Vec<String>) -> bool {
        if self.set.contains(&t) {
            return false;
        }
        let id = self.tuples.len();
        for (k, v) in t.iter().enumerate() {
            self.index.entry((k, v.clone())).or_default().push(id);
        }
        self.set.insert(t.clone());
        self.tuples.push(t);
        true
    }
}

/// A ground rule application found by evaluation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rule: usize,
    /// Values of the rule's variables, in `Rule::variables` order.
    pub values: Vec<String>,
    pub head: Atom,
    pub pos: Vec<Atom>,
    pub neg: Vec<Atom>,
}

fn ground(atom: &Atom, vars: &[String], binding: &[Option<String>]) -> Atom {
    Atom {
        pred: atom.pred.clone(),
        args: atom
            .args
            .iter()
            .map(|t| match t {
                Term::Const(_) => t.clone(),
                Term::Var(v) => {
                    let k = vars.iter().position(|x| x == v).expect("rule variable");
                    Term::Const(binding[k].clone().expect("bound variable"))
                }
            })
            .collect(),
    }
}

fn tuple_of(atom: &Atom) -> Vec<String> {
    atom.args.iter().map(|t| t.to_string()).collect()
}

struct Join<'a> {
    rels: &'a HashMap<String, Relation>,
    /// Per-relation tuple count visible in this round.
    limit: &'a HashMap<String, usize>,
    /// Per-relation range of tuples new in the previous round.
    delta: &'a HashMap<String, (usize, usize)>,
}

impl Join<'_> {
    fn candidates(&self, atom: &Atom, vars: &[String], binding: &[Option<String>], range: (usize, usize)) -> Vec<usize> {
        let Some(rel) = self.rels.get(&atom.relation()) else {
            return Vec::new();
        };
        for (k, t) in atom.args.iter().enumerate() {
            let bound = match t {
                Term::Const(c) => Some(c.clone()),
                Term::Var(v) => vars.iter().position(|x| x == v).and_then(|i| binding[i].clone()),
            };
            if let Some(val) = bound {
                return rel
                    .index
                    .get(&(k, val))
                    .map(|ids| ids.iter().copied().filter(|&i| i >= range.0 && i < range.1).collect())
                    .unwrap_or_default();
            }
        }
        (range.0..range.1).collect()
    }

    fn unify(atom: &Atom, tuple: &[String], vars: &[String], binding: &mut [Option<String>]) -> Option<Vec<usize>> {
        let mut newly = Vec::new();
        for (t, val) in atom.args.iter().zip(tuple) {
            match t {
                Term::Const(c) => {
                    if c != val {
                        for &k in &newly {
                            binding[k] = None;
                        }
                        return None;
                    }
                }
                Term::Var(v) => {
                    let k = vars.iter().position(|x| x == v).expect("rule variable");
                    match &binding[k] {
                        Some(b) if b != val => {
                            for &j in &newly {
                                binding[j] = None;
                            }
                            return None;
                        }
                        Some(_) => {}
                        None => {
                            binding[k] = Some(val.clone());
                            newly.push(k);
                        }
                    }
                }
            }
        }
        Some(newly)
    }

    /// Enumerates bindings of `body` with atom `delta_at` drawn from the delta.
    fn run(
        &self,
        body: &[&Atom],
        order: &[usize],
        delta_at: usize,
        vars: &[String],
        binding: &mut Vec<Option<String>>,
        out: &mut Vec<Vec<Option<String>>>,
    ) {
        let Some((&i, rest)) = order.split_first() else {
            out.push(binding.clone());
            return;
        };
        let atom = body[i];
        let rel_name = atom.relation();
        let range = if i == delta_at {
            self.delta.get(&rel_name).copied().unwrap_or((0, 0))
        } else {
            (0, self.limit.get(&rel_name).copied().unwrap_or(0))
        };
        for id in self.candidates(atom, vars, binding, range) {
            let tuple = &self.rels[&rel_name].tuples[id];
            if let Some(newly) = Self::unify(atom, tuple, vars, binding) {
                self.run(body, rest, delta_at, vars, binding, out);
                for k in newly {
                    binding[k] = None;
                }
            }
        }
    }
}

/// Returns every ground rule application whose positive body can hold, in
/// discovery order, plus the set of derivable atoms.
pub fn evaluate(program: &Program) -> (Vec<Instance>, Vec<Atom>) {
    let mut rels: HashMap<String, Relation> = HashMap::new();
    let mut derived: Vec<Atom> = Vec::new();
    for f in &program.facts {
        rels.entry(f.relation()).or_default().insert(tuple_of(f));
    }

    let rule_vars: Vec<Vec<String>> = program.rules.iter().map(|r| r.variables()).collect();
    let mut seen: HashSet<(usize, Vec<String>)> = HashSet::new();
    let mut instances: Vec<Instance> = Vec::new();
    let mut pending: Vec<(usize, Vec<Option<String>>)> = Vec::new();

    for (ri, rule) in program.rules.iter().enumerate() {
        if rule.body_pos().next().is_none() {
            pending.push((ri, vec![None; rule_vars[ri].len()]));
        }
    }

    let mut delta: HashMap<String, (usize, usize)> = rels.iter().map(|(k, r)| (k.clone(), (0, r.tuples.len()))).collect();
    loop {
        let limit: HashMap<String, usize> = rels.iter().map(|(k, r)| (k.clone(), r.tuples.len())).collect();
        {
            let join = Join { rels: &rels, limit: &limit, delta: &delta };
            for (ri, rule) in program.rules.iter().enumerate() {
                let body: Vec<&Atom> = rule.body_pos().collect();
                for d in 0..body.len() {
                    let live = delta.get(&body[d].relation()).is_some_and(|(a, b)| a < b);
                    if !live {
                        continue;
                    }
                    let mut order = vec![d];
                    order.extend((0..body.len()).filter(|&k| k != d));
                    let mut binding = vec![None; rule_vars[ri].len()];
                    let mut found = Vec::new();
                    join.run(&body, &order, d, &rule_vars[ri], &mut binding, &mut found);
                    pending.extend(found.into_iter().map(|b| (ri, b)));
                }
            }
        }

        let before: HashMap<String, usize> = rels.iter().map(|(k, r)| (k.clone(), r.tuples.len())).collect();
        for (ri, binding) in pending.drain(..) {
            let rule = &program.rules[ri];
            let vars = &rule_vars[ri];
            let values: Vec<String> = binding.iter().map(|b| b.clone().unwrap_or_default()).collect();
            if !seen.insert((ri, values.clone())) {
                continue;
            }
            let head = ground(&rule.head, vars, &binding);
            if rels.entry(head.relation()).or_default().insert(tuple_of(&head)) {
                derived.push(head.clone());
            }
            instances.push(Instance {
                rule: ri,
                values,
                head,
                pos: rule.body_pos().map(|a| ground(a, vars, &binding)).collect(),
                neg: rule.body_neg().map(|a| ground(a, vars, &binding)).collect(),
            });
        }

        delta = rels
            .iter()
            .map(|(k, r)| (k.clone(), (before.get(k).copied().unwrap_or(0), r.tuples.len())))
            .collect();
        if delta.values().all(|(a, b)| a >= b) {
            break;
        }
    }
    (instances, derived)
}
