//! Relation schemas: nesting levels, payload semiring and declared shapes,
//! gathered from the database, rule heads and declarations.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::store::{Database, Semiring};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct RelSchema {
    pub levels: Vec<usize>,
    pub semiring: Semiring,
    /// Declared by a literal `card(X, n1, ..., nk)` or taken from a dense relation.
    pub shape: Option<Vec<usize>>,
    /// Loaded from data rather than defined by a rule.
    pub extensional: bool,
}

impl RelSchema {
    pub fn arity(&self) -> usize {
        self.levels.iter().sum()
    }

    /// Levels covered by `nargs` flat arguments, if they end on a boundary.
    pub fn levels_covered(&self, nargs: usize) -> Option<usize> {
        // Zero-width levels are absorbed, so `R()` on a scalar covers it.
        let mut acc = 0;
        let mut covered = (nargs == 0).then_some(0);
        for (i, l) in self.levels.iter().enumerate() {
            acc += l;
            if acc == nargs {
                covered = Some(i + 1);
            }
            if acc > nargs {
                break;
            }
        }
        covered
    }
}

pub type Schemas = BTreeMap<String, RelSchema>;

/// Where an access occurs; decides which argument counts are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessSite {
    /// A body atom: any level-aligned prefix.
    Atom,
    /// A value inside an expression: the full key.
    Value,
    /// The body of `(Rv := X(...))`: any level-aligned prefix.
    RelationBinding,
}

/// Visit every access of a rule body and expression together with its site.
pub fn visit_accesses<'a>(rule: &'a Rule, f: &mut dyn FnMut(&'a Access, AccessSite)) {
    if let Some(e) = &rule.expr {
        visit_expr(e, f);
    }
    for e in rule.head.flat_args() {
        visit_expr(e, f);
    }
    visit_constraint(&rule.constraint, f);
}

fn visit_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Access, AccessSite)) {
    e.walk(&mut |x| {
        if let Expr::Access(a) = x {
            f(a, AccessSite::Value);
        }
    });
}

pub fn visit_constraint<'a>(c: &'a Constraint, f: &mut dyn FnMut(&'a Access, AccessSite)) {
    match c {
        Constraint::And(ps) | Constraint::Or(ps) => ps.iter().for_each(|p| visit_constraint(p, f)),
        Constraint::Not(c) | Constraint::Group(c) => visit_constraint(c, f),
        Constraint::Atom(a) => {
            f(a, AccessSite::Atom);
            a.flat_args().for_each(|e| visit_expr(e, f));
        }
        Constraint::Nested(r) => {
            if r.head.args.is_empty() {
                if let (None, Constraint::Atom(a)) = (&r.expr, r.constraint.ungroup()) {
                    f(a, AccessSite::RelationBinding);
                    a.flat_args().for_each(|e| visit_expr(e, f));
                    return;
                }
            }
            visit_accesses(r, f);
        }
        Constraint::Cmp(l, _, r) => {
            visit_expr(l, f);
            visit_expr(r, f);
        }
        Constraint::Cei(call) => call.value_args().into_iter().for_each(|e| visit_expr(e, f)),
        Constraint::In(e, items) => {
            visit_expr(e, f);
            items.iter().for_each(|e| visit_expr(e, f));
        }
        Constraint::Chain(first, rest) => {
            visit_expr(first, f);
            rest.iter().for_each(|(_, e)| visit_expr(e, f));
        }
        Constraint::Match(t, cases) => {
            visit_expr(t, f);
            for (p, c) in cases {
                visit_expr(p, f);
                visit_constraint(c, f);
            }
        }
        Constraint::Typed(..) => {}
    }
}

/// Every CEI call in the program (bodies, nested bodies and declarations).
fn all_ceis(p: &Program) -> Vec<&CeiCall> {
    let mut out = Vec::new();
    let roots = p.declarations.iter().map(|d| &d.constraint).chain(p.rules.iter().map(|r| &r.constraint));
    for root in roots {
        root.walk(&mut |c| {
            if let Constraint::Cei(call) = c {
                out.push(call);
            }
        });
    }
    out
}

/// Literal shape of `card(X, n1, ..., nk)` when every size is an integer literal.
pub fn literal_card(call: &CeiCall) -> Option<(String, Vec<usize>)> {
    let rel = call.relation_arg()?.to_string();
    let sizes: Option<Vec<usize>> = call
        .value_args()
        .into_iter()
        .map(|e| match e {
            Expr::Lit(Value::Int(n)) if *n >= 0 => Some(*n as usize),
            _ => None,
        })
        .collect();
    Some((rel, sizes?))
}

/// Build the schema table and report arity, kind and naming errors.
pub fn infer_schemas(p: &Program, db: &Database) -> (Schemas, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut schemas: Schemas = BTreeMap::new();
    for (name, rel) in db.relations() {
        schemas.insert(
            name.clone(),
            RelSchema {
                levels: rel.levels().to_vec(),
                semiring: rel.semiring(),
                shape: rel.shape().map(<[usize]>::to_vec),
                extensional: true,
            },
        );
    }

    let mut declared_semiring: BTreeMap<String, Semiring> = BTreeMap::new();
    let mut declared_shape: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for call in all_ceis(p) {
        if !CEI_NAMES.contains(&call.name.as_str()) {
            diags.push(Diagnostic::error(
                Code::UnknownCei,
                format!("unknown constraint extension `{}`", call.name),
            ));
            continue;
        }
        if call.name == "type" {
            if let (Some(rel), Some(t)) = (call.relation_arg(), call.type_name()) {
                let s = Semiring::from_relation_type(t).expect("relation type");
                if let Some(prev) = declared_semiring.insert(rel.to_string(), s) {
                    if prev != s {
                        diags.push(Diagnostic::error(
                            Code::TypeConflict,
                            format!("relation {rel} declared both {} and {}", prev.relation_type(), t),
                        ));
                    }
                }
            }
        }
        if call.name == "card" {
            if let Some((rel, shape)) = literal_card(call) {
                if shape.len() >= 2 || !declared_shape.contains_key(&rel) {
                    declared_shape.insert(rel, shape);
                }
            }
        }
    }

    // Heads.
    for (i, r) in p.rules.iter().enumerate() {
        let levels: Vec<usize> = r.head.args.iter().map(Vec::len).collect();
        let name = &r.head.relation;
        let semiring = declared_semiring.get(name).copied().unwrap_or(if r.expr.is_some() {
            Semiring::Real
        } else {
            Semiring::Bool
        });
        let at = |d: Diagnostic| d.with_rule(i).at(r.loc.line, r.loc.col);
        match schemas.get(name) {
            Some(s) if s.levels.iter().sum::<usize>() != levels.iter().sum::<usize>()
                || (s.levels != levels && !s.extensional) =>
            {
                diags.push(at(Diagnostic::error(
                    Code::ArityMismatch,
                    format!(
                        "head {name} has argument lists {levels:?}, elsewhere {:?}",
                        s.levels
                    ),
                )));
            }
            Some(s) if s.extensional && r.action == Action::Assign => {
                diags.push(at(Diagnostic::warning(
                    Code::KindError,
                    format!("rule redefines loaded relation {name}; its data is replaced"),
                )));
                let s = RelSchema {
                    levels,
                    semiring,
                    shape: s.shape.clone(),
                    extensional: false,
                };
                schemas.insert(name.clone(), s);
            }
            Some(_) => {}
            None => {
                schemas.insert(
                    name.clone(),
                    RelSchema {
                        levels,
                        semiring,
                        shape: None,
                        extensional: false,
                    },
                );
            }
        }
    }
    for (name, shape) in declared_shape {
        if let Some(s) = schemas.get_mut(&name) {
            if s.shape.is_none() {
                s.shape = Some(shape);
            }
        }
    }
    for (name, semiring) in &declared_semiring {
        if let Some(s) = schemas.get_mut(name) {
            if s.extensional && s.semiring != *semiring {
                diags.push(Diagnostic::warning(
                    Code::IntegrityType,
                    format!(
                        "{name} is declared {} but loaded as {}",
                        semiring.relation_type(),
                        s.semiring.relation_type()
                    ),
                ));
            }
        }
    }

    for (i, r) in p.rules.iter().enumerate() {
        check_rule_accesses(r, &schemas, db, &mut diags, i);
    }
    (schemas, diags)
}

fn check_rule_accesses(
    r: &Rule,
    schemas: &Schemas,
    db: &Database,
    diags: &mut Vec<Diagnostic>,
    index: usize,
) {
    let at = |d: Diagnostic| d.with_rule(index).at(r.loc.line, r.loc.col);
    // Relation variables and the levels they still carry.
    let mut relvars: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    r.constraint.walk(&mut |c| {
        if let Constraint::Nested(n) = c {
            if n.head.args.is_empty() {
                if let Constraint::Atom(a) = n.constraint.ungroup() {
                    if let Some(s) = schemas.get(&a.relation) {
                        if let Some(k) = s.levels_covered(a.arity()) {
                            relvars.insert(n.head.relation.clone(), s.levels[k..].to_vec());
                        }
                    } else if let Some(levels) = relvars.get(&a.relation).cloned() {
                        let mut acc = 0;
                        let mut k = 0;
                        while k < levels.len() && acc < a.arity() {
                            acc += levels[k];
                            k += 1;
                        }
                        relvars.insert(n.head.relation.clone(), levels[k..].to_vec());
                    }
                } else {
                    diags.push(at(Diagnostic::error(
                        Code::Unimplemented,
                        format!(
                            "relation variable {} must be bound to a single access",
                            n.head.relation
                        ),
                    )));
                }
            }
        }
    });

    let scalars = free_variables(r);
    let mut report = |a: &Access, site: AccessSite| {
        if scalars.contains(&a.relation) {
            diags.push(at(Diagnostic::error(
                Code::KindError,
                format!("scalar variable {} used as a relation", a.relation),
            )));
            return;
        }
        let levels = match (schemas.get(&a.relation), relvars.get(&a.relation)) {
            (_, Some(l)) => l.clone(),
            (Some(s), None) => s.levels.clone(),
            (None, None) => {
                if db.param(&a.relation).is_none() {
                    diags.push(at(Diagnostic::error(
                        Code::UndeclaredRelation,
                        format!("relation {} is neither loaded nor defined by a rule", a.relation),
                    )));
                }
                return;
            }
        };
        let schema = RelSchema {
            levels: levels.clone(),
            semiring: Semiring::Bool,
            shape: None,
            extensional: false,
        };
        let n = a.arity();
        match schema.levels_covered(n) {
            None => diags.push(at(Diagnostic::error(
                Code::ArityMismatch,
                format!(
                    "{} applied to {n} arguments, but its levels are {levels:?}",
                    a.relation
                ),
            ))),
            Some(k) if site == AccessSite::Value && k < levels.len() => {
                diags.push(at(Diagnostic::error(
                    Code::KindError,
                    format!("{a} denotes a sub-relation, not a value"),
                )))
            }
            Some(_) => {}
        }
    };
    visit_accesses(r, &mut report);

    // Relation variables used as scalars.
    let rv: BTreeSet<String> = relation_variables(&r.constraint);
    let mut used_as_scalar = BTreeSet::new();
    let mut collect = |e: &Expr| {
        e.walk(&mut |x| {
            if let Expr::Var(v) = x {
                if rv.contains(v) {
                    used_as_scalar.insert(v.clone());
                }
            }
        })
    };
    r.head.flat_args().for_each(&mut collect);
    r.expr.iter().for_each(&mut collect);
    r.constraint.exprs().into_iter().for_each(&mut collect);
    for v in used_as_scalar {
        diags.push(at(Diagnostic::error(
            Code::KindError,
            format!("relation variable {v} used as a scalar"),
        )));
    }
    check_eei(r, diags, index);
}

fn check_eei(r: &Rule, diags: &mut Vec<Diagnostic>, index: usize) {
    let mut exprs: Vec<&Expr> = r.constraint.exprs();
    exprs.extend(r.head.flat_args());
    exprs.extend(r.expr.iter());
    for e in exprs {
        e.walk(&mut |x| {
            if let Expr::Call(name, args) = x {
                if !EEI_NAMES.contains(&name.as_str()) {
                    diags.push(
                        Diagnostic::error(Code::UnknownEei, format!("unknown expression extension `{name}`"))
                            .with_rule(index)
                            .at(r.loc.line, r.loc.col),
                    );
                } else if args.len() != 1 {
                    diags.push(
                        Diagnostic::error(Code::UnknownEei, format!("`{name}` takes one argument, got {}", args.len()))
                            .with_rule(index)
                            .at(r.loc.line, r.loc.col),
                    );
                }
            }
        });
    }
}
