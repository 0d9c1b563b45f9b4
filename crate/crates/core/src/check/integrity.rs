//! Integrity constraints checked against stored relations.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::store::{show_key as show, Database, Relation, Semiring};
use crate::value::{Tuple, Value};

use super::types::ScalarType;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: Code,
    pub relation: String,
    pub message: String,
    pub witnesses: Vec<Tuple>,
}

impl Violation {
    /// Soft constraints never escalate to errors.
    pub fn is_soft(&self) -> bool {
        self.code == Code::SoftDeg
    }

    pub fn to_diagnostic(&self, strict: bool) -> Diagnostic {
        let mut msg = self.message.clone();
        if !self.witnesses.is_empty() {
            let w: Vec<String> = self.witnesses.iter().map(|t| show(t)).collect();
            msg.push_str(&format!("; witnesses {}", w.join(", ")));
        }
        if strict && !self.is_soft() {
            Diagnostic::error(self.code, msg)
        } else {
            Diagnostic::warning(self.code, msg)
        }
    }
}

/// Flat key positions of a declaration's variables, per atom.
struct Bindings<'a> {
    atoms: Vec<&'a Access>,
    pos: BTreeMap<String, (usize, usize)>,
}

impl<'a> Bindings<'a> {
    fn new(c: &'a Constraint) -> Self {
        let mut atoms = Vec::new();
        let mut pos = BTreeMap::new();
        for part in c.conjuncts() {
            if let Constraint::Atom(a) = part {
                for (k, e) in a.flat_args().enumerate() {
                    if let Some(v) = e.as_var() {
                        pos.entry(v.to_string()).or_insert((atoms.len(), k));
                    }
                }
                atoms.push(a);
            }
        }
        Bindings { atoms, pos }
    }

    /// The atom all of `vars` come from, with their positions.
    fn columns(&self, vars: &[&Expr]) -> Option<(&'a Access, Vec<usize>)> {
        let mut atom = None;
        let mut cols = Vec::new();
        for e in vars {
            let (a, k) = *self.pos.get(e.as_var()?)?;
            if atom.is_some_and(|x| x != a) {
                return None;
            }
            atom = Some(a);
            cols.push(k);
        }
        Some((self.atoms[atom?], cols))
    }
}

fn project(t: &[Value], cols: &[usize]) -> Tuple {
    cols.iter().map(|c| t[*c].clone()).collect()
}

fn groups(rel: &Relation, cols: &[usize]) -> BTreeMap<Tuple, Vec<Tuple>> {
    let mut g: BTreeMap<Tuple, Vec<Tuple>> = BTreeMap::new();
    for (k, _) in rel.entries() {
        g.entry(project(&k, cols)).or_default().push(k);
    }
    g
}

fn resolve_size(e: &Expr, db: &Database) -> Option<i64> {
    match e {
        Expr::Lit(Value::Int(n)) => Some(*n),
        Expr::Var(v) => db.param(v).and_then(Value::as_i64),
        _ => None,
    }
}

/// Shape of a relation: declared or dense, else the bounding box of its
/// integer keys.
pub fn shape_of(rel: &Relation) -> Option<Vec<usize>> {
    if let Some(s) = rel.shape() {
        return Some(s.to_vec());
    }
    let mut dims = vec![0usize; rel.arity()];
    for (k, _) in rel.entries() {
        for (d, v) in k.iter().enumerate() {
            let Value::Int(i) = v else { return None };
            if *i < 0 {
                return None;
            }
            dims[d] = dims[d].max(*i as usize + 1);
        }
    }
    Some(dims)
}

fn check_card(call: &CeiCall, db: &Database, out: &mut Vec<Violation>) {
    let Some(name) = call.relation_arg() else { return };
    let Some(rel) = db.get(name) else { return };
    let sizes = call.value_args();
    let text = Constraint::Cei(call.clone()).to_string();
    if sizes.len() == 1 && rel.semiring() != Semiring::Real {
        if let Some(n) = resolve_size(sizes[0], db) {
            if rel.len() as i64 != n {
                out.push(Violation {
                    code: Code::IntegrityCard,
                    relation: name.to_string(),
                    message: format!("{text} violated: {}≠{n}", rel.len()),
                    witnesses: Vec::new(),
                });
            }
        }
        return;
    }
    if sizes.len() != rel.arity() {
        out.push(Violation {
            code: Code::IntegrityCard,
            relation: name.to_string(),
            message: format!("{text} gives {} sizes for arity {}", sizes.len(), rel.arity()),
            witnesses: Vec::new(),
        });
        return;
    }
    let explicit = rel.shape().map(<[usize]>::to_vec);
    for (d, e) in sizes.iter().enumerate() {
        let Some(n) = resolve_size(e, db) else { continue };
        match &explicit {
            Some(shape) if shape[d] as i64 != n => out.push(Violation {
                code: Code::IntegrityCard,
                relation: name.to_string(),
                message: format!("{text} violated: dimension {} is {}≠{n}", d + 1, shape[d]),
                witnesses: Vec::new(),
            }),
            Some(_) => {}
            None => {
                let outside: Vec<Tuple> = rel
                    .entries()
                    .into_iter()
                    .map(|(k, _)| k)
                    .filter(|k| !matches!(k[d], Value::Int(i) if i >= 0 && i < n))
                    .collect();
                if !outside.is_empty() {
                    out.push(Violation {
                        code: Code::IntegrityCard,
                        relation: name.to_string(),
                        message: format!("{text} violated: keys outside dimension {} of size {n}", d + 1),
                        witnesses: outside,
                    });
                }
            }
        }
    }
}

/// Check one declaration against the stored data.
pub fn check_declaration(c: &Constraint, db: &Database) -> Vec<Violation> {
    let mut out = Vec::new();
    let b = Bindings::new(c);
    for part in c.conjuncts() {
        match part {
            Constraint::Cei(call) => check_cei(call, &b, db, &mut out),
            Constraint::Cmp(..) => check_refinement(part, &b, db, &mut out),
            _ => {}
        }
    }
    out
}

fn check_cei(call: &CeiCall, b: &Bindings, db: &Database, out: &mut Vec<Violation>) {
    let text = Constraint::Cei(call.clone()).to_string();
    match call.name.as_str() {
        "card" => check_card(call, db, out),
        "type" => {
            let Some(t) = call.type_name() else { return };
            if let Some(name) = call.relation_arg() {
                if let Some(rel) = db.get(name) {
                    if Semiring::from_relation_type(t) != Some(rel.semiring()) {
                        out.push(Violation {
                            code: Code::IntegrityType,
                            relation: name.to_string(),
                            message: format!("{text} violated: {name} is a {}", rel.semiring().relation_type()),
                            witnesses: Vec::new(),
                        });
                    }
                }
                return;
            }
            let Some(ty) = ScalarType::from_name(t) else { return };
            let Some((a, cols)) = b.columns(&call.value_args()) else { return };
            let Some(rel) = db.get(&a.relation) else { return };
            let bad: Vec<Tuple> = rel
                .entries()
                .into_iter()
                .map(|(k, _)| k)
                .filter(|k| !ty.admits(&k[cols[0]]))
                .collect();
            if !bad.is_empty() {
                out.push(Violation {
                    code: Code::IntegrityType,
                    relation: a.relation.clone(),
                    message: format!("{text} violated on {}", a.relation),
                    witnesses: bad,
                });
            }
        }
        "fdep" | "pkey" | "unique" => {
            let (lhs, rhs): (Vec<&Expr>, Vec<&Expr>) = match call.name.as_str() {
                "fdep" => (
                    call.args.first().map(|l| l.iter().collect()).unwrap_or_default(),
                    call.args.get(1).map(|l| l.iter().collect()).unwrap_or_default(),
                ),
                _ => (call.args.iter().flatten().collect(), Vec::new()),
            };
            let all: Vec<&Expr> = lhs.iter().chain(rhs.iter()).copied().collect();
            let Some((a, cols)) = b.columns(&all) else { return };
            let Some(rel) = db.get(&a.relation) else { return };
            let (key_cols, dep_cols) = cols.split_at(lhs.len());
            let code = match call.name.as_str() {
                "fdep" => Code::IntegrityFdep,
                "pkey" => Code::IntegrityPkey,
                _ => Code::IntegrityUnique,
            };
            for (key, tuples) in groups(rel, key_cols) {
                let bad = if code == Code::IntegrityFdep {
                    let distinct: BTreeSet<Tuple> = tuples.iter().map(|t| project(t, dep_cols)).collect();
                    distinct.len() > 1
                } else {
                    tuples.len() > 1
                };
                if bad {
                    out.push(Violation {
                        code,
                        relation: a.relation.clone(),
                        message: format!("{text} violated on {} at {}", a.relation, show(&key)),
                        witnesses: tuples,
                    });
                }
            }
        }
        "order" => {
            let vars: Vec<&Expr> = call.args.iter().flatten().collect();
            let Some((a, cols)) = b.columns(&vars) else { return };
            let Some(rel) = db.get(&a.relation) else { return };
            let keys: Vec<Tuple> = rel.entries().into_iter().map(|(k, _)| project(&k, &cols)).collect();
            if let Some(w) = keys.windows(2).find(|w| w[0] > w[1]) {
                out.push(Violation {
                    code: Code::IntegrityOrder,
                    relation: a.relation.clone(),
                    message: format!("{text} violated: {} scans {} before {}", a.relation, show(&w[0]), show(&w[1])),
                    witnesses: Vec::new(),
                });
            }
        }
        "deg" => {
            let args = call.value_args();
            let (Some(x), Some(n)) = (args.first(), args.get(1)) else { return };
            let Some(n) = resolve_size(n, db) else { return };
            let Some((a, cols)) = b.columns(&[*x]) else { return };
            let Some(rel) = db.get(&a.relation) else { return };
            if let Some((v, ts)) = groups(rel, &cols).into_iter().max_by_key(|(_, ts)| ts.len()) {
                if ts.len() as i64 > n {
                    out.push(Violation {
                        code: Code::SoftDeg,
                        relation: a.relation.clone(),
                        message: format!("{text}: {} tuples share {}", ts.len(), show(&v)),
                        witnesses: Vec::new(),
                    });
                }
            }
        }
        _ => {}
    }
}

fn check_refinement(c: &Constraint, b: &Bindings, db: &Database, out: &mut Vec<Violation>) {
    let Constraint::Cmp(l, op, r) = c else { return };
    let vars: Vec<Expr> = l.vars().union(&r.vars()).map(|v| Expr::var(v.clone())).collect();
    let refs: Vec<&Expr> = vars.iter().collect();
    let Some((a, cols)) = b.columns(&refs) else { return };
    let Some(rel) = db.get(&a.relation) else { return };
    let value = |e: &Expr, k: &Tuple| -> Option<Value> {
        match e {
            Expr::Lit(v) => Some(v.clone()),
            Expr::Var(v) => {
                let i = vars.iter().position(|x| x.as_var() == Some(v))?;
                Some(k[cols[i]].clone())
            }
            _ => None,
        }
    };
    let mut bad = Vec::new();
    for (k, _) in rel.entries() {
        let (Some(x), Some(y)) = (value(l, &k), value(r, &k)) else { return };
        if !x.compare_loose(&y).is_some_and(|o| op.holds(o)) {
            bad.push(k);
        }
    }
    if !bad.is_empty() {
        out.push(Violation {
            code: Code::Refinement,
            relation: a.relation.clone(),
            message: format!("refinement `{c}` violated on {}", a.relation),
            witnesses: bad,
        });
    }
}

pub fn check_integrity(db: &Database, decls: &[Constraint]) -> Vec<Violation> {
    decls.iter().flat_map(|d| check_declaration(d, db)).collect()
}
