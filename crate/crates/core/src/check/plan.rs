//! Binding plans: a rule body compiled to an ordered list of generator and
//! filter steps over numbered variable slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::store::Semiring;
use crate::value::Value;

use super::schema::Schemas;
use super::types::ScalarType;

/// How a step reads a named relation. Semi-naive evaluation substitutes
/// deltas only for `Generator` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Lookup,
    Negated,
    Binding,
    Card,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelUse {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelRef {
    /// Index into [`RulePlan::rels`].
    Named(usize),
    /// Index into [`RulePlan::relvars`].
    Var(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CExpr {
    Slot(usize),
    Const(Value),
    Bin(Box<CExpr>, BinOp, Box<CExpr>),
    Neg(Box<CExpr>),
    Call(Func, Box<CExpr>),
    Lookup(RelRef, Vec<CExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pat {
    Bind(usize),
    Check(CExpr),
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    Cmp(CExpr, CmpOp, CExpr),
    Not(Vec<Step>),
    Exists(Vec<Step>),
    Type(CExpr, ScalarType),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Enumerate entries (or distinct key prefixes) matching the patterns.
    Scan { rel: RelRef, pats: Vec<Pat>, text: String },
    /// `target = X(pats)` over full keys; dense relations include zeros.
    ValueScan { target: Pat, rel: RelRef, pats: Vec<Pat>, text: String },
    Range { slot: usize, lo: CExpr, lo_strict: bool, hi: CExpr, hi_strict: bool, text: String },
    Assign { slot: usize, expr: CExpr, text: String },
    /// `card(X, sizes)`: the count of `X` (one size, set or bag) or its shape.
    Card { rel: RelRef, pats: Vec<Pat>, count: bool, text: String },
    /// Union of branch plans, projected on `exported` and deduplicated.
    Or { branches: Vec<Vec<Step>>, exported: Vec<usize>, text: String },
    Filter { cond: Cond, text: String },
    /// `(Rv := X(prefix))`: bind a relation variable; passes iff non-empty.
    BindRel { var: usize, rel: RelRef, prefix: Vec<CExpr>, text: String },
}

impl Step {
    pub fn text(&self) -> &str {
        match self {
            Step::Scan { text, .. }
            | Step::ValueScan { text, .. }
            | Step::Range { text, .. }
            | Step::Assign { text, .. }
            | Step::Card { text, .. }
            | Step::Or { text, .. }
            | Step::Filter { text, .. }
            | Step::BindRel { text, .. } => text,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agg {
    Sum,
    Avg,
    Min,
    Max,
    Median,
    Softmax,
}

impl Agg {
    pub fn from_name(n: &str) -> Option<Agg> {
        Some(match n {
            "sum" => Agg::Sum,
            "avg" => Agg::Avg,
            "min" => Agg::Min,
            "max" => Agg::Max,
            "median" => Agg::Median,
            "softmax" => Agg::Softmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadValue {
    One,
    Expr(CExpr),
    Aggregate(Agg, CExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadPlan {
    pub relation: String,
    pub levels: Vec<usize>,
    pub keys: Vec<CExpr>,
    pub value: HeadValue,
    /// `order(...)` over head variables: flat key positions.
    pub order: Option<Vec<usize>>,
    /// `card(Head, k)`: keep the first `k` entries.
    pub cap: Option<CExpr>,
    /// `card(Head, n1, ..., nk)` with k ≥ 2: dense shape.
    pub shape: Option<Vec<CExpr>>,
    /// `fdep`/`pkey`/`unique` stated in the body, as declarations on the head.
    pub assertions: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulePlan {
    pub rule: usize,
    pub slots: Vec<String>,
    pub relvars: Vec<String>,
    pub rels: Vec<RelUse>,
    pub steps: Vec<Step>,
    pub head: HeadPlan,
}

impl RulePlan {
    /// One line per step, nested branches indented.
    pub fn describe(&self) -> Vec<String> {
        fn go(steps: &[Step], depth: usize, out: &mut Vec<String>) {
            for s in steps {
                out.push(format!("{}{}", "  ".repeat(depth), s.text()));
                match s {
                    Step::Or { branches, .. } => {
                        for b in branches {
                            go(b, depth + 1, out);
                        }
                    }
                    Step::Filter {
                        cond: Cond::Not(b) | Cond::Exists(b),
                        ..
                    } => go(b, depth + 1, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        go(&self.steps, 0, &mut out);
        out
    }

    pub fn uses(&self, name: &str) -> impl Iterator<Item = (usize, &RelUse)> {
        let name = name.to_string();
        self.rels.iter().enumerate().filter(move |(_, u)| u.name == name)
    }
}

#[derive(Clone, Default)]
struct Ground {
    vars: BTreeSet<String>,
    relvars: BTreeSet<String>,
}

struct Planner<'a> {
    rule: &'a Rule,
    index: usize,
    schemas: &'a Schemas,
    params: &'a BTreeMap<String, Value>,
    slots: Vec<String>,
    slot_of: BTreeMap<String, usize>,
    relvars: Vec<String>,
    relvar_of: BTreeMap<String, usize>,
    rels: Vec<RelUse>,
    negated: usize,
    totals: BTreeMap<String, usize>,
}

fn count_vars<'a>(exprs: impl IntoIterator<Item = &'a Expr>, out: &mut BTreeMap<String, usize>) {
    for e in exprs {
        e.walk(&mut |x| {
            if let Expr::Var(v) = x {
                *out.entry(v.clone()).or_default() += 1;
            }
        });
    }
}

/// Named variables of a constraint (wildcards, relation and type names excluded).
fn constraint_vars(c: &Constraint) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in c.exprs() {
        out.extend(e.vars());
    }
    for rv in relation_variables(c) {
        out.remove(&rv);
    }
    out
}

/// Relations read through accesses inside `c` that are relation variables.
fn relvar_reads(c: &Constraint, relvars: &BTreeMap<String, usize>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut grab = |a: &Access| {
        if relvars.contains_key(&a.relation) {
            out.insert(a.relation.clone());
        }
    };
    c.walk(&mut |c| match c {
        Constraint::Atom(a) => grab(a),
        Constraint::Nested(r) => {
            if let Constraint::Atom(a) = r.constraint.ungroup() {
                grab(a)
            }
        }
        _ => {}
    });
    for e in c.exprs() {
        for a in e.accesses() {
            grab(a);
        }
    }
    out
}

enum Candidate<'c> {
    Card(usize, &'c CeiCall),
    Atom(usize, &'c Access),
    Range(String, [(usize, Expr, bool); 2]),
    Assign(usize, String, &'c Expr),
    ValueScan(usize, &'c Expr, &'c Access),
    Or(usize, &'c [Constraint]),
}

impl<'a> Planner<'a> {
    fn err(&self, code: Code, msg: String) -> Diagnostic {
        Diagnostic::error(code, msg)
            .with_rule(self.index)
            .at(self.rule.loc.line, self.rule.loc.col)
    }

    fn slot(&mut self, v: &str) -> usize {
        if let Some(&s) = self.slot_of.get(v) {
            return s;
        }
        self.slots.push(v.to_string());
        self.slot_of.insert(v.to_string(), self.slots.len() - 1);
        self.slots.len() - 1
    }

    fn relref(&mut self, name: &str, role: Role) -> RelRef {
        if let Some(&i) = self.relvar_of.get(name) {
            return RelRef::Var(i);
        }
        let role = if self.negated > 0 { Role::Negated } else { role };
        self.rels.push(RelUse {
            name: name.to_string(),
            role,
        });
        RelRef::Named(self.rels.len() - 1)
    }

    fn is_relvar(&self, name: &str) -> bool {
        self.relvar_of.contains_key(name)
    }

    fn ground_expr(&self, e: &Expr, g: &Ground) -> bool {
        let mut ok = true;
        e.walk(&mut |x| match x {
            Expr::Var(v) => ok &= g.vars.contains(v) || self.params.contains_key(v),
            Expr::Wildcard => ok = false,
            Expr::Access(a) if self.is_relvar(&a.relation) => ok &= g.relvars.contains(&a.relation),
            _ => {}
        });
        ok
    }

    fn unbound_var<'e>(&self, e: &'e Expr, g: &Ground) -> Option<&'e str> {
        match e {
            Expr::Var(v) if !g.vars.contains(v) && !self.params.contains_key(v) => Some(v),
            _ => None,
        }
    }

    fn compile(&mut self, e: &Expr) -> Result<CExpr, Diagnostic> {
        Ok(match e {
            Expr::Var(v) => match (self.slot_of.get(v), self.params.get(v)) {
                (Some(&s), _) => CExpr::Slot(s),
                (None, Some(val)) => CExpr::Const(val.clone()),
                (None, None) => CExpr::Slot(self.slot(v)),
            },
            Expr::Lit(v) => CExpr::Const(v.clone()),
            Expr::Wildcard => {
                return Err(self.err(
                    Code::KindError,
                    "`_` is only allowed as an access or card argument".into(),
                ))
            }
            Expr::Neg(x) => CExpr::Neg(Box::new(self.compile(x)?)),
            Expr::Binary(l, op, r) => {
                CExpr::Bin(Box::new(self.compile(l)?), *op, Box::new(self.compile(r)?))
            }
            Expr::Call(name, args) => {
                let f = match name.as_str() {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "relu" => Func::Relu,
                    n if AGGREGATE_NAMES.contains(&n) => {
                        return Err(self.err(
                            Code::KindError,
                            format!("aggregate `{n}` must be the outermost head expression"),
                        ))
                    }
                    n => return Err(self.err(Code::UnknownEei, format!("unknown expression extension `{n}`"))),
                };
                let [arg] = args.as_slice() else {
                    return Err(self.err(Code::UnknownEei, format!("`{name}` takes one argument")));
                };
                CExpr::Call(f, Box::new(self.compile(arg)?))
            }
            Expr::Access(a) => {
                let args = a.flat_args().map(|x| self.compile(x)).collect::<Result<Vec<_>, _>>()?;
                CExpr::Lookup(self.relref(&a.relation, Role::Lookup), args)
            }
        })
    }

    /// Patterns for access arguments; binds fresh variables left to right.
    fn patterns<'e>(
        &mut self,
        args: impl Iterator<Item = &'e Expr>,
        g: &mut Ground,
    ) -> Result<Vec<Pat>, Diagnostic> {
        let mut out = Vec::new();
        for e in args {
            if matches!(e, Expr::Wildcard) {
                out.push(Pat::Any);
            } else if let Some(v) = self.unbound_var(e, g) {
                let s = self.slot(v);
                g.vars.insert(v.to_string());
                out.push(Pat::Bind(s));
            } else {
                out.push(Pat::Check(self.compile(e)?));
            }
        }
        Ok(out)
    }

    /// Arguments are plain variables, wildcards or ground expressions.
    fn args_schedulable<'e>(&self, mut args: impl Iterator<Item = &'e Expr>, g: &Ground) -> bool {
        args.all(|e| matches!(e, Expr::Wildcard) || self.unbound_var(e, g).is_some() || self.ground_expr(e, g))
    }

    fn access_ready(&self, a: &Access, g: &Ground) -> bool {
        (!self.is_relvar(&a.relation) || g.relvars.contains(&a.relation)) && self.args_schedulable(a.flat_args(), g)
    }

    fn is_head_annotation(&self, call: &CeiCall) -> bool {
        match call.name.as_str() {
            "card" | "type" => call.relation_arg() == Some(self.rule.head.relation.as_str()),
            "order" | "deg" | "fdep" | "pkey" | "unique" => true,
            _ => false,
        }
    }

    fn card_count_mode(&self, call: &CeiCall) -> bool {
        let rel = call.relation_arg().unwrap_or_default();
        let semiring = self.schemas.get(rel).map(|s| s.semiring);
        call.value_args().len() == 1 && semiring != Some(Semiring::Real)
    }

    /// Try to emit `c` as a filter (everything it reads is ground).
    fn try_filter(&mut self, c: &Constraint, g: &mut Ground) -> Result<Option<Step>, Diagnostic> {
        let text = c.to_string();
        Ok(match c {
            Constraint::Cmp(l, op, r) => {
                if self.ground_expr(l, g) && self.ground_expr(r, g) {
                    let cond = Cond::Cmp(self.compile(l)?, *op, self.compile(r)?);
                    Some(Step::Filter {
                        cond,
                        text: format!("filter {text}"),
                    })
                } else {
                    None
                }
            }
            Constraint::Atom(a) => {
                let ready = (!self.is_relvar(&a.relation) || g.relvars.contains(&a.relation))
                    && a.flat_args().all(|e| matches!(e, Expr::Wildcard) || self.ground_expr(e, g));
                if ready {
                    let rel = self.relref(&a.relation, Role::Generator);
                    let pats = self.patterns(a.flat_args(), g)?;
                    Some(Step::Scan {
                        rel,
                        pats,
                        text: format!("check {a}"),
                    })
                } else {
                    None
                }
            }
            Constraint::Not(inner) => {
                let free = constraint_vars(inner);
                let reads = relvar_reads(inner, &self.relvar_of);
                if free.iter().all(|v| g.vars.contains(v) || self.params.contains_key(v))
                    && reads.iter().all(|r| g.relvars.contains(r))
                {
                    self.negated += 1;
                    let mut sub = g.clone();
                    let steps = self.plan_conj(&inner.conjuncts(), &mut sub);
                    self.negated -= 1;
                    Some(Step::Filter {
                        cond: Cond::Not(steps?),
                        text: format!("not {}", inner),
                    })
                } else {
                    None
                }
            }
            Constraint::Nested(r) => {
                if let Some(a) = self.relation_binding(r) {
                    let src_ready = !self.is_relvar(&a.relation) || g.relvars.contains(&a.relation);
                    if src_ready && a.flat_args().all(|e| self.ground_expr(e, g)) {
                        let rel = self.relref(&a.relation, Role::Binding);
                        let prefix = a.flat_args().map(|e| self.compile(e)).collect::<Result<_, _>>()?;
                        let name = r.head.relation.clone();
                        let var = self.relvars.len();
                        self.relvars.push(name.clone());
                        self.relvar_of.insert(name.clone(), var);
                        g.relvars.insert(name.clone());
                        return Ok(Some(Step::BindRel {
                            var,
                            rel,
                            prefix,
                            text: format!("bind {name} := {a}"),
                        }));
                    }
                    return Ok(None);
                }
                let mut inside = BTreeMap::new();
                count_vars(c.exprs(), &mut inside);
                let shared: Vec<&String> = inside
                    .iter()
                    .filter(|(v, n)| self.totals.get(*v).copied().unwrap_or(0) > **n)
                    .map(|(v, _)| v)
                    .collect();
                if shared.iter().all(|v| g.vars.contains(*v) || self.params.contains_key(*v)) {
                    let mut sub = g.clone();
                    let steps = self.plan_conj(&r.constraint.conjuncts(), &mut sub)?;
                    Some(Step::Filter {
                        cond: Cond::Exists(steps),
                        text: format!("exists {text}"),
                    })
                } else {
                    None
                }
            }
            Constraint::Cei(call) => match call.name.as_str() {
                "type" if call.relation_arg().is_none() => {
                    let Some(e) = call.value_args().first().copied() else { return Ok(None) };
                    if !self.ground_expr(e, g) {
                        return Ok(None);
                    }
                    let ty = call
                        .type_name()
                        .and_then(ScalarType::from_name)
                        .ok_or_else(|| self.err(Code::TypeConflict, format!("unknown type in `{text}`")))?;
                    Some(Step::Filter {
                        cond: Cond::Type(self.compile(e)?, ty),
                        text: format!("filter {text}"),
                    })
                }
                "card" => {
                    let sizes = call.value_args();
                    if sizes.iter().all(|e| matches!(e, Expr::Wildcard) || self.ground_expr(e, g)) {
                        Some(self.card_step(call, g)?)
                    } else {
                        None
                    }
                }
                _ => None,
            },
            Constraint::Or(branches) => {
                let free = constraint_vars(c);
                if free.iter().all(|v| g.vars.contains(v) || self.params.contains_key(v)) {
                    let mut plans = Vec::new();
                    for b in branches {
                        let mut sub = g.clone();
                        plans.push(self.plan_conj(&b.conjuncts(), &mut sub)?);
                    }
                    Some(Step::Or {
                        branches: plans,
                        exported: Vec::new(),
                        text: format!("or {text}"),
                    })
                } else {
                    None
                }
            }
            _ => None,
        })
    }

    fn relation_binding<'r>(&self, r: &'r Rule) -> Option<&'r Access> {
        if !r.head.args.is_empty() || r.expr.is_some() {
            return None;
        }
        match r.constraint.ungroup() {
            Constraint::Atom(a) => Some(a),
            _ => None,
        }
    }

    fn card_step(&mut self, call: &CeiCall, g: &mut Ground) -> Result<Step, Diagnostic> {
        let name = call.relation_arg().unwrap_or_default().to_string();
        let count = self.card_count_mode(call);
        let sizes = call.value_args();
        if !count {
            if let Some(s) = self.schemas.get(&name) {
                if s.arity() != sizes.len() {
                    return Err(self.err(
                        Code::ArityMismatch,
                        format!("`{}` gives {} sizes for {name} of arity {}", CallText(call), sizes.len(), s.arity()),
                    ));
                }
            }
        }
        let rel = self.relref(&name, Role::Card);
        let before = g.vars.len();
        let pats = self.patterns(sizes.into_iter(), g)?;
        let verb = if g.vars.len() > before { "card" } else { "check" };
        Ok(Step::Card {
            rel,
            pats,
            count,
            text: format!("{verb} {}", CallText(call)),
        })
    }

    /// Range bounds for an unbound variable among pending comparisons.
    fn range_for(&self, v: &str, items: &[&Constraint], done: &[bool], g: &Ground) -> Option<[(usize, Expr, bool); 2]> {
        let mut lo = None;
        let mut hi = None;
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            let Constraint::Cmp(l, op, r) = c else { continue };
            let (op, other) = match (l.as_var(), r.as_var()) {
                (Some(x), _) if x == v && !r.vars().contains(v) => (*op, r),
                (_, Some(x)) if x == v && !l.vars().contains(v) => (op.flip(), l),
                _ => continue,
            };
            if !self.ground_expr(other, g) {
                continue;
            }
            match op {
                CmpOp::Gt | CmpOp::Ge if lo.is_none() => lo = Some((i, other.clone(), op == CmpOp::Gt)),
                CmpOp::Lt | CmpOp::Le if hi.is_none() => hi = Some((i, other.clone(), op == CmpOp::Lt)),
                _ => {}
            }
        }
        Some([lo?, hi?])
    }

    fn candidates<'c>(
        &mut self,
        items: &[&'c Constraint],
        done: &[bool],
        g: &Ground,
    ) -> Result<Option<Candidate<'c>>, Diagnostic> {
        // Card bindings on body relations.
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Cei(call) = c {
                if call.name == "card" && !self.is_head_annotation(call) {
                    let sizes = call.value_args();
                    let simple = sizes.iter().all(|e| {
                        matches!(e, Expr::Wildcard) || self.unbound_var(e, g).is_some() || self.ground_expr(e, g)
                    });
                    if simple {
                        return Ok(Some(Candidate::Card(i, call)));
                    }
                }
            }
        }
        // Atom generators, smallest declared card first.
        let mut best: Option<(usize, usize, &Access)> = None;
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Atom(a) = c {
                if self.access_ready(a, g) {
                    let cost = self
                        .schemas
                        .get(&a.relation)
                        .and_then(|s| s.shape.as_ref())
                        .map_or(usize::MAX, |s| s.iter().product());
                    if best.is_none_or(|(c0, _, _)| cost < c0) {
                        best = Some((cost, i, a));
                    }
                }
            }
        }
        if let Some((_, i, a)) = best {
            return Ok(Some(Candidate::Atom(i, a)));
        }
        // Ranges, in order of first mention.
        let mut seen = BTreeSet::new();
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Cmp(l, _, r) = c {
                for side in [l, r] {
                    if let Some(v) = self.unbound_var(side, g) {
                        if seen.insert(v.to_string()) {
                            if let Some(b) = self.range_for(v, items, done, g) {
                                return Ok(Some(Candidate::Range(v.to_string(), b)));
                            }
                        }
                    }
                }
            }
        }
        // Equalities to ground terms.
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Cmp(l, CmpOp::Eq, r) = c {
                for (x, other) in [(l, r), (r, l)] {
                    if let Some(v) = self.unbound_var(x, g) {
                        if self.ground_expr(other, g) {
                            return Ok(Some(Candidate::Assign(i, v.to_string(), other)));
                        }
                    }
                }
            }
        }
        // Valued scans `v = X(...)`.
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Cmp(l, CmpOp::Eq, r) = c {
                for (x, other) in [(l, r), (r, l)] {
                    if let Expr::Access(a) = other {
                        let target_ok = self.unbound_var(x, g).is_some() || self.ground_expr(x, g);
                        let self_ref = x.as_var().is_some_and(|v| a.flat_args().any(|e| e.vars().contains(v)));
                        if target_ok && !self_ref && self.access_ready(a, g) {
                            return Ok(Some(Candidate::ValueScan(i, x, a)));
                        }
                    }
                }
            }
        }
        // Disjunctions whose branches all plan.
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Or(branches) = c {
                if self.or_plannable(c, branches, g) {
                    return Ok(Some(Candidate::Or(i, branches)));
                }
            }
        }
        Ok(None)
    }

    /// Exported variables of a disjunction, if every branch plans from `g`
    /// and no branch-local variable is also used outside it.
    fn or_exports(&mut self, c: &Constraint, branches: &[Constraint], g: &Ground) -> Result<BTreeSet<String>, Diagnostic> {
        let mut exported: Option<BTreeSet<String>> = None;
        let mut bound_any = BTreeSet::new();
        for b in branches {
            let mut sub = g.clone();
            self.plan_conj(&b.conjuncts(), &mut sub)?;
            let new: BTreeSet<String> = sub.vars.difference(&g.vars).cloned().collect();
            bound_any.extend(new.iter().cloned());
            exported = Some(match exported {
                None => new,
                Some(e) => e.intersection(&new).cloned().collect(),
            });
        }
        let exported = exported.unwrap_or_default();
        let mut inside = BTreeMap::new();
        count_vars(c.exprs(), &mut inside);
        for v in bound_any.difference(&exported) {
            if self.totals.get(v).copied().unwrap_or(0) > inside.get(v).copied().unwrap_or(0) {
                return Err(self.err(Code::UnsafeVariable, format!("{v} is bound by only some branches")));
            }
        }
        Ok(exported)
    }

    fn or_plannable(&mut self, c: &Constraint, branches: &[Constraint], g: &Ground) -> bool {
        let saved = (self.rels.len(), self.relvars.len(), self.relvar_of.clone());
        let ok = self.or_exports(c, branches, g).is_ok_and(|e| !e.is_empty());
        self.rels.truncate(saved.0);
        self.relvars.truncate(saved.1);
        self.relvar_of = saved.2;
        ok
    }

    fn plan_conj(&mut self, items: &[&Constraint], g: &mut Ground) -> Result<Vec<Step>, Diagnostic> {
        let mut done: Vec<bool> = items
            .iter()
            .map(|c| match c {
                Constraint::Cei(call) => {
                    self.is_head_annotation(call) || (call.name == "type" && call.relation_arg().is_some())
                }
                _ => false,
            })
            .collect();
        let mut steps = Vec::new();
        loop {
            let mut progress = true;
            while progress {
                progress = false;
                for i in 0..items.len() {
                    if done[i] {
                        continue;
                    }
                    if let Some(s) = self.try_filter(items[i], g)? {
                        steps.push(s);
                        done[i] = true;
                        progress = true;
                    }
                }
            }
            if done.iter().all(|d| *d) {
                return Ok(steps);
            }
            let Some(cand) = self.candidates(items, &done, g)? else {
                return Err(self.stuck(items, &done, g));
            };
            match cand {
                Candidate::Card(i, call) => {
                    steps.push(self.card_step(call, g)?);
                    done[i] = true;
                }
                Candidate::Atom(i, a) => {
                    let rel = self.relref(&a.relation, Role::Generator);
                    let pats = self.patterns(a.flat_args(), g)?;
                    steps.push(Step::Scan {
                        rel,
                        pats,
                        text: format!("gen {a}"),
                    });
                    done[i] = true;
                }
                Candidate::Range(v, [(li, lo, lo_strict), (hi_i, hi, hi_strict)]) => {
                    let lo_c = self.compile(&lo)?;
                    let hi_c = self.compile(&hi)?;
                    let slot = self.slot(&v);
                    g.vars.insert(v.clone());
                    let text = format!(
                        "range {}{}{v}{}{}",
                        lo,
                        if lo_strict { "<" } else { "<=" },
                        if hi_strict { "<" } else { "<=" },
                        hi
                    );
                    steps.push(Step::Range {
                        slot,
                        lo: lo_c,
                        lo_strict,
                        hi: hi_c,
                        hi_strict,
                        text,
                    });
                    done[li] = true;
                    done[hi_i] = true;
                }
                Candidate::Assign(i, v, e) => {
                    let expr = self.compile(e)?;
                    let slot = self.slot(&v);
                    g.vars.insert(v.clone());
                    steps.push(Step::Assign {
                        slot,
                        expr,
                        text: format!("eq {v}={e}"),
                    });
                    done[i] = true;
                }
                Candidate::ValueScan(i, x, a) => {
                    let rel = self.relref(&a.relation, Role::Generator);
                    let pats = self.patterns(a.flat_args(), g)?;
                    let target = self.patterns(std::iter::once(x), g)?.remove(0);
                    steps.push(Step::ValueScan {
                        target,
                        rel,
                        pats,
                        text: format!("scan {x}={a}"),
                    });
                    done[i] = true;
                }
                Candidate::Or(i, branches) => {
                    let exported = self.or_exports(items[i], branches, g)?;
                    let mut plans = Vec::new();
                    for b in branches {
                        let mut sub = g.clone();
                        plans.push(self.plan_conj(&b.conjuncts(), &mut sub)?);
                    }
                    let slots = exported.iter().map(|v| self.slot(v)).collect();
                    g.vars.extend(exported);
                    steps.push(Step::Or {
                        branches: plans,
                        exported: slots,
                        text: format!("or {}", items[i]),
                    });
                    done[i] = true;
                }
            }
        }
    }

    fn stuck(&self, items: &[&Constraint], done: &[bool], g: &Ground) -> Diagnostic {
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Constraint::Not(inner) = c {
                let free: Vec<String> = constraint_vars(inner)
                    .into_iter()
                    .filter(|v| !g.vars.contains(v) && !self.params.contains_key(v))
                    .collect();
                if !free.is_empty() {
                    return self.err(
                        Code::UnsafeNegation,
                        format!("negation `{c}` uses unbound variable {}", free.join(", ")),
                    );
                }
            }
        }
        for (i, c) in items.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Some(v) = constraint_vars(c)
                .into_iter()
                .find(|v| !g.vars.contains(v) && !self.params.contains_key(v))
            {
                return self.err(
                    Code::UnsafeVariable,
                    format!("variable {v} cannot be bound (in `{c}`)"),
                );
            }
        }
        let c = items.iter().zip(done).find(|(_, d)| !**d).map(|(c, _)| c.to_string()).unwrap_or_default();
        self.err(Code::UnsafeVariable, format!("cannot schedule `{c}`"))
    }
}

struct CallText<'a>(&'a CeiCall);

impl fmt::Display for CallText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Constraint::Cei(self.0.clone()).fmt(f)
    }
}

/// Compile a desugared rule into a binding plan.
pub fn plan_rule(
    rule: &Rule,
    index: usize,
    schemas: &Schemas,
    params: &BTreeMap<String, Value>,
) -> Result<RulePlan, Diagnostic> {
    let mut totals = BTreeMap::new();
    count_vars(rule.head.flat_args(), &mut totals);
    count_vars(rule.expr.iter(), &mut totals);
    count_vars(rule.constraint.exprs(), &mut totals);
    let mut p = Planner {
        rule,
        index,
        schemas,
        params,
        slots: Vec::new(),
        slot_of: BTreeMap::new(),
        relvars: Vec::new(),
        relvar_of: BTreeMap::new(),
        rels: Vec::new(),
        negated: 0,
        totals,
    };
    let items = rule.constraint.conjuncts();
    let mut g = Ground::default();
    let steps = p.plan_conj(&items, &mut g)?;

    let mut needed = BTreeSet::new();
    for e in rule.head.flat_args().chain(rule.expr.iter()) {
        if matches!(e, Expr::Wildcard) {
            return Err(p.err(Code::KindError, "`_` cannot appear in a rule head".into()));
        }
        needed.extend(e.vars());
    }
    if let Some(v) = needed.iter().find(|v| !g.vars.contains(*v) && !params.contains_key(*v)) {
        return Err(p.err(
            Code::UnsafeVariable,
            format!("head variable {v} is not bound by the body"),
        ));
    }
    let keys = rule.head.flat_args().map(|e| p.compile(e)).collect::<Result<Vec<_>, _>>()?;
    let value = match &rule.expr {
        None => HeadValue::One,
        Some(Expr::Call(name, args)) if Agg::from_name(name).is_some() => {
            let [arg] = args.as_slice() else {
                return Err(p.err(Code::UnknownEei, format!("`{name}` takes one argument")));
            };
            HeadValue::Aggregate(Agg::from_name(name).unwrap(), p.compile(arg)?)
        }
        Some(e) => HeadValue::Expr(p.compile(e)?),
    };
    let head = head_annotations(&mut p, keys, value, &items)?;
    Ok(RulePlan {
        rule: index,
        slots: p.slots,
        relvars: p.relvars,
        rels: p.rels,
        steps,
        head,
    })
}

fn head_annotations(
    p: &mut Planner,
    keys: Vec<CExpr>,
    value: HeadValue,
    items: &[&Constraint],
) -> Result<HeadPlan, Diagnostic> {
    let head = &p.rule.head;
    let head_vars: Vec<Option<&str>> = head.flat_args().map(Expr::as_var).collect();
    let position = |v: &str| head_vars.iter().position(|h| *h == Some(v));
    let mut plan = HeadPlan {
        relation: head.relation.clone(),
        levels: head.args.iter().map(Vec::len).collect(),
        keys,
        value,
        order: None,
        cap: None,
        shape: None,
        assertions: Vec::new(),
    };
    for c in items {
        let Constraint::Cei(call) = c else { continue };
        match call.name.as_str() {
            "card" if call.relation_arg() == Some(head.relation.as_str()) => {
                let sizes = call.value_args();
                if sizes.iter().any(|e| matches!(e, Expr::Wildcard)) {
                    continue;
                }
                let compiled = sizes.iter().map(|e| p.compile(e)).collect::<Result<Vec<_>, _>>()?;
                if compiled.len() == 1 {
                    plan.cap = compiled.into_iter().next();
                } else {
                    plan.shape = Some(compiled);
                }
            }
            "order" => {
                let cols: Option<Vec<usize>> = call
                    .args
                    .iter()
                    .flatten()
                    .map(|e| e.as_var().and_then(position))
                    .collect();
                match cols {
                    Some(cols) => plan.order = Some(cols),
                    None => {
                        return Err(p.err(
                            Code::KindError,
                            format!("`{c}` must name head variables of {}", head.relation),
                        ))
                    }
                }
            }
            "fdep" | "pkey" | "unique" if head_vars.iter().all(Option::is_some) => {
                plan.assertions.push(Constraint::and([
                    Constraint::Atom(head.clone()),
                    (*c).clone(),
                ]));
            }
            _ => {}
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::schema::infer_schemas;
    use crate::store::{Database, Relation};
    use crate::syntax::parse;

    fn plan(src: &str, db: &Database) -> Result<Vec<RulePlan>, Diagnostic> {
        let p = desugar(&parse(src).unwrap()).unwrap();
        let (schemas, diags) = infer_schemas(&p, db);
        assert!(!diags.iter().any(|d| d.is_error()), "{diags:?}");
        p.rules
            .iter()
            .enumerate()
            .map(|(i, r)| plan_rule(r, i, &schemas, db.params()))
            .collect()
    }

    fn db_with(names: &[(&str, usize)]) -> Database {
        let mut db = Database::new();
        for (n, arity) in names {
            db.insert(*n, Relation::flat(Semiring::Bool, *arity));
        }
        db
    }

    #[test]
    fn nested_loop_join_plan() {
        let db = db_with(&[("R", 2), ("S", 2)]);
        let p = plan("Q(a,b,c) := R(a,b),S(b',c),(b=b')", &db).unwrap();
        assert_eq!(p[0].describe(), ["gen R(a, b)", "gen S(b', c)", "filter b=b'"]);
    }

    #[test]
    fn csr_decode_plan_order() {
        let mut db = Database::new();
        db.insert("P", Relation::flat(Semiring::Nat, 1));
        db.insert("I", Relation::flat(Semiring::Nat, 1));
        db.insert("V", Relation::flat(Semiring::Real, 1));
        db.set_param("n", Value::Int(2));
        let src = "B_CSR(i)(j) := V(p) if (0<=i<n),(p1=P(i)), (p2=P(i+1)), (p1<=p<p2), (j=I(p))";
        let p = plan(src, &db).unwrap();
        assert_eq!(
            p[0].describe(),
            ["range 0<=i<n", "eq p1=P(i)", "eq p2=P(i+1)", "range p1<=p<p2", "eq j=I(p)"]
        );
    }

    #[test]
    fn unsafe_negation_is_reported() {
        let db = db_with(&[("R", 1)]);
        let e = plan("Q(x) := not(R(x))", &db).unwrap_err();
        assert_eq!(e.code, Code::UnsafeNegation);
    }

    #[test]
    fn ungroundable_variable_is_named() {
        let db = db_with(&[("R", 1)]);
        let e = plan("Q(x, y) := R(x), y > x", &db).unwrap_err();
        assert_eq!(e.code, Code::UnsafeVariable);
        assert!(e.message.contains('y'), "{}", e.message);
    }

    #[test]
    fn generic_join_binds_relation_variables() {
        let db = db_with(&[("R", 2), ("S", 2), ("T", 1)]);
        let src = "Rh(x)(a) := R(x, a)\nSh(x)(b) := S(x, b)\n\
                   Q(x,a,b) := Rh(x), (Rx:=Rh(x)), (Sx:=Sh(x)), T(x), Rx(a), Sx(b)";
        let p = plan(src, &db).unwrap();
        assert_eq!(
            p[2].describe(),
            [
                "gen Rh(x)",
                "bind Rx := Rh(x)",
                "bind Sx := Sh(x)",
                "check T(x)",
                "gen Rx(a)",
                "gen Sx(b)"
            ]
        );
    }

    #[test]
    fn disjunction_exports_common_variables() {
        let db = db_with(&[("J", 3)]);
        let src = "X(i, j) := v if J(i,a,b), match j case 0 -> v=a case 1 -> v=b";
        let p = plan(src, &db).unwrap();
        let Step::Or { exported, .. } = &p[0].steps[1] else { panic!("{:?}", p[0].steps) };
        let names: Vec<&str> = exported.iter().map(|s| p[0].slots[*s].as_str()).collect();
        assert_eq!(names, ["j", "v"]);
    }

    #[test]
    fn head_annotations_are_collected() {
        let db = db_with(&[("R", 2)]);
        let p = plan("Q(a, b) := R(a, b), order(b), card(Q, 2)", &db).unwrap();
        assert_eq!(p[0].head.order, Some(vec![1]));
        assert_eq!(p[0].head.cap, Some(CExpr::Const(Value::Int(2))));
    }

    #[test]
    fn aggregates_only_at_the_head_root() {
        let db = db_with(&[("R", 2)]);
        let e = plan("Q(a) := 1 + sum(v) if R(a, v)", &db).unwrap_err();
        assert_eq!(e.code, Code::KindError);
    }
}
