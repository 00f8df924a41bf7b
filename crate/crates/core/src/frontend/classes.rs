use std::collections::HashMap;

use super::{CorrelationClass, FactId, FrontendError, Program};

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller id as root so components are keyed by first member
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups input facts into correlation classes.
///
/// Facts are linked when they co-occur in a `corr` declaration, in a
/// conditional probability declaration, or carry the same explicit class id.
/// Each connected component is one class. Components with an explicit id keep
/// the smallest such id, other multi-member components get fresh ids, and
/// facts never linked to anything become singletons with id `-1`.
pub fn infer_correlation_classes(mut program: Program) -> Result<Program, FrontendError> {
    let n = program.facts.len();
    let mut uf = UnionFind::new(n);

    for group in &program.corr_decls {
        for w in group.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    for d in &program.input_probs {
        for &(g, _) in &d.given {
            uf.union(d.target, g);
        }
    }

    let mut explicit: HashMap<FactId, i64> = HashMap::new();
    let mut first_with_id: HashMap<i64, FactId> = HashMap::new();
    for decl in &program.class_decls {
        if decl.id == -1 {
            continue;
        }
        if let Some(&prev) = explicit.get(&decl.fact) {
            if prev != decl.id {
                return Err(FrontendError::Conflict {
                    loc: decl.loc,
                    fact: program.facts[decl.fact].to_string(),
                    first: prev,
                    second: decl.id,
                });
            }
        }
        explicit.insert(decl.fact, decl.id);
        match first_with_id.get(&decl.id) {
            Some(&other) => uf.union(other, decl.fact),
            None => {
                first_with_id.insert(decl.id, decl.fact);
            }
        }
    }

    let mut members: Vec<Vec<FactId>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for f in 0..n {
        let root = uf.find(f);
        let s = *slot.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[s].push(f);
    }

    let mut next_id = explicit.values().copied().max().map_or(1, |m| m.max(0) + 1);
    let classes = members
        .into_iter()
        .map(|m| {
            let id = match m.iter().filter_map(|f| explicit.get(f)).min() {
                Some(&k) => k,
                None if m.len() == 1 => -1,
                None => {
                    next_id += 1;
                    next_id - 1
                }
            };
            CorrelationClass { id, members: m }
        })
        .collect();
    program.set_classes(classes);
    Ok(program)
}
