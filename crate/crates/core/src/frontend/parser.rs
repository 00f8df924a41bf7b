use std::collections::HashSet;

use super::lexer::{tokenize, Tok};
use super::{Atom, ClassDecl, FrontendError, InputProbDecl, Literal, Loc, Program, Rule, Term};

#[derive(Debug)]
pub(crate) enum Stmt {
    /// Input declaration; `given` non-empty for conditionals.
    Input { prob: f64, atom: Atom, given: Vec<Literal>, loc: Loc },
    Rule(Rule),
    Corr { atoms: Vec<Atom>, loc: Loc },
    Class { id: i64, atom: Atom, loc: Loc },
    Query(Atom),
}

struct Parser {
    toks: Vec<(Tok, Loc)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn loc(&self) -> Loc {
        self.toks[self.pos].1
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, FrontendError> {
        Err(FrontendError::Syntax {
            loc: self.loc(),
            expected: expected.to_string(),
            found: self.peek().describe(),
        })
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), FrontendError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            self.fail(expected)
        }
    }

    fn probability(&mut self) -> Result<f64, FrontendError> {
        let loc = self.loc();
        match self.advance() {
            Tok::Num(s) => {
                let value: f64 = s.parse().map_err(|_| FrontendError::Syntax {
                    loc,
                    expected: "a probability".into(),
                    found: format!("`{s}`"),
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(FrontendError::ProbabilityRange { loc, value });
                }
                Ok(value)
            }
            other => Err(FrontendError::Syntax {
                loc,
                expected: "a probability".into(),
                found: other.describe(),
            }),
        }
    }

    fn term(&mut self) -> Result<Term, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Num(s) => {
                self.advance();
                Ok(Term::Const(s))
            }
            Tok::Var(s) => {
                self.advance();
                Ok(Term::Var(s))
            }
            _ => self.fail("a term"),
        }
    }

    fn atom(&mut self) -> Result<Atom, FrontendError> {
        let pred = match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                s
            }
            _ => return self.fail("a predicate name"),
        };
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.advance();
            args.push(self.term()?);
            while *self.peek() == Tok::Comma {
                self.advance();
                args.push(self.term()?);
            }
            self.expect(Tok::RParen, "`)`")?;
        }
        Ok(Atom { pred, args })
    }

    fn literals(&mut self) -> Result<Vec<Literal>, FrontendError> {
        let mut out = Vec::new();
        loop {
            let negated = if *self.peek() == Tok::Not {
                self.advance();
                true
            } else {
                false
            };
            out.push(Literal { atom: self.atom()?, negated });
            if *self.peek() != Tok::Comma {
                return Ok(out);
            }
            self.advance();
        }
    }

    fn statement(&mut self) -> Result<Stmt, FrontendError> {
        let loc = self.loc();
        // Declarations recognised by keyword at statement start.
        if let Tok::Ident(name) = self.peek().clone() {
            if (name == "query" || name == "corr") && *self.peek_at(1) == Tok::LParen {
                self.advance();
                self.advance();
                let mut atoms = vec![self.atom()?];
                while *self.peek() == Tok::Comma {
                    self.advance();
                    atoms.push(self.atom()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Dot, "`.`")?;
                if name == "query" {
                    if atoms.len() != 1 {
                        return Err(FrontendError::Syntax {
                            loc,
                            expected: "a single query atom".into(),
                            found: format!("{} atoms", atoms.len()),
                        });
                    }
                    return Ok(Stmt::Query(atoms.pop().unwrap()));
                }
                return Ok(Stmt::Corr { atoms, loc });
            }
        }

        let mut prob = 1.0;
        if let Tok::Num(text) = self.peek().clone() {
            if matches!(self.peek_at(2), Tok::Var(v) if v == "Class") && *self.peek_at(1) == Tok::DoubleColon {
                let id: i64 = text.parse().map_err(|_| FrontendError::Syntax {
                    loc,
                    expected: "an integer class id".into(),
                    found: format!("`{text}`"),
                })?;
                self.advance();
                self.advance();
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let atom = self.atom()?;
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Dot, "`.`")?;
                return Ok(Stmt::Class { id, atom, loc });
            }
            prob = self.probability()?;
            self.expect(Tok::DoubleColon, "`::`")?;
        }

        let head = self.atom()?;
        match self.peek() {
            Tok::Dot => {
                self.advance();
                Ok(Stmt::Input { prob, atom: head, given: Vec::new(), loc })
            }
            Tok::Pipe => {
                self.advance();
                let given = self.literals()?;
                self.expect(Tok::Dot, "`.`")?;
                Ok(Stmt::Input { prob, atom: head, given, loc })
            }
            Tok::ColonDash => {
                self.advance();
                let body = self.literals()?;
                self.expect(Tok::Dot, "`.`")?;
                Ok(Stmt::Rule(Rule { head, body, prob, loc }))
            }
            _ => self.fail("`.`, `|` or `:-`"),
        }
    }
}

pub(crate) fn parse_statements(source: &str) -> Result<Vec<Stmt>, FrontendError> {
    let mut p = Parser { toks: tokenize(source)?, pos: 0 };
    let mut out = Vec::new();
    while *p.peek() != Tok::Eof {
        out.push(p.statement()?);
    }
    Ok(out)
}

fn ground_atom(atom: &Atom, loc: Loc) -> Result<(), FrontendError> {
    if atom.is_ground() {
        Ok(())
    } else {
        Err(FrontendError::NonGround { loc, fact: atom.to_string() })
    }
}

/// Builds the program tables; correlation classes are left for inference.
pub(crate) fn resolve(stmts: Vec<Stmt>) -> Result<Program, FrontendError> {
    let mut program = Program::default();

    for s in &stmts {
        if let Stmt::Input { atom, given, loc, .. } = s {
            if given.is_empty() {
                ground_atom(atom, *loc)?;
                program.declare_fact(atom.clone());
            }
        }
    }

    let lookup = |program: &Program, atom: &Atom, loc: Loc| {
        program.fact_id(atom).ok_or_else(|| FrontendError::UndeclaredFact { loc, fact: atom.to_string() })
    };

    for s in stmts {
        match s {
            Stmt::Input { prob, atom, given, loc } => {
                let target = lookup(&program, &atom, loc)?;
                let mut resolved = Vec::with_capacity(given.len());
                for lit in &given {
                    resolved.push((lookup(&program, &lit.atom, loc)?, !lit.negated));
                }
                program.input_probs.push(InputProbDecl { target, given: resolved, prob, loc });
            }
            Stmt::Corr { atoms, loc } => {
                let ids = atoms.iter().map(|a| lookup(&program, a, loc)).collect::<Result<Vec<_>, _>>()?;
                program.corr_decls.push(ids);
            }
            Stmt::Class { id, atom, loc } => {
                let fact = lookup(&program, &atom, loc)?;
                program.class_decls.push(ClassDecl { id, fact, loc });
            }
            Stmt::Query(atom) => program.queries.push(atom),
            Stmt::Rule(rule) => program.rules.push(rule),
        }
    }

    let inputs: HashSet<String> = program.input_relations().into_iter().collect();
    for rule in &program.rules {
        if inputs.contains(&rule.head.relation()) {
            return Err(FrontendError::MixedRelation { loc: rule.loc, pred: rule.head.relation() });
        }
        let bound: HashSet<&str> = rule.body_pos().flat_map(|a| a.vars()).collect();
        for v in rule.head.vars().chain(rule.body_neg().flat_map(|a| a.vars())) {
            if v != "_" && !bound.contains(v) {
                return Err(FrontendError::UnsafeVariable { loc: rule.loc, var: v.to_string() });
            }
        }
    }
    Ok(program)
}
