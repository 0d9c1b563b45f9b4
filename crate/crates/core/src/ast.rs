//! Abstract syntax of Hojabr programs and the desugaring of surface
//! conveniences into core constructs.
//!
//! A program is a list of rules `A ◁ E if C` / `A ◁ C` plus standalone
//! declarations (constraints that are facts about the data, such as
//! `R(a,b), fdep(a)(b)` or `card(B,2,2)`).
//!
//! Conjunctions and disjunctions are n-ary. The smart constructors
//! [`Constraint::and`] and [`Constraint::or`] keep them *well formed*: no
//! conjunction directly contains a conjunction, no disjunction directly
//! contains a disjunction, and a disjunction nested in a conjunction is
//! wrapped in a [`Constraint::Group`]. Only well-formed trees are guaranteed
//! to survive a print/parse round trip unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::diag::{Code, Diagnostic};
use crate::value::Value;

/// Names accepted by the constraint extension interface.
pub const CEI_NAMES: &[&str] = &["type", "card", "deg", "order", "fdep", "pkey", "unique"];
/// Names accepted by the expression extension interface.
pub const EEI_NAMES: &[&str] = &[
    "avg", "sum", "min", "max", "median", "sin", "cos", "relu", "softmax",
];
/// The aggregate subset of [`EEI_NAMES`].
pub const AGGREGATE_NAMES: &[&str] = &["avg", "sum", "min", "max", "median", "softmax"];

/// Scalar type names accepted by `type(x, T)`.
pub const SCALAR_TYPES: &[&str] = &["int", "real", "float", "string", "bool"];
/// Relation-level type names accepted by `type(X, T)`.
pub const RELATION_TYPES: &[&str] = &["set", "bag", "tensor"];

/// Source position of a rule or declaration.
///
/// Positions never take part in equality or hashing, so that ASTs compare
/// structurally regardless of where they were parsed from.
#[derive(Debug, Clone, Copy, Default)]
pub struct Loc {
    pub line: u32,
    pub col: u32,
}

impl Loc {
    pub fn new(line: u32, col: u32) -> Self {
        Loc { line, col }
    }
}

impl PartialEq for Loc {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Loc {}

impl std::hash::Hash for Loc {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    /// `:=` declarative definition
    Assign,
    /// `+=`
    Append,
    /// `-=`
    Remove,
    /// `<-`
    Replace,
}

impl Action {
    pub fn symbol(self) -> &'static str {
        match self {
            Action::Assign => ":=",
            Action::Append => "+=",
            Action::Remove => "-=",
            Action::Replace => "<-",
        }
    }

    pub fn is_imperative(self) -> bool {
        self != Action::Assign
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// The operator with its operands swapped: `a < b` iff `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            op => op,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// `X(e, ...)...(e, ...)`: a relation applied to zero or more argument lists.
///
/// Zero argument lists only occur as the head of a nested rule binding a
/// relation variable, as in `(Rx := Rh(x))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Access {
    pub relation: String,
    pub args: Vec<Vec<Expr>>,
}

impl Access {
    pub fn new(relation: impl Into<String>, args: Vec<Vec<Expr>>) -> Self {
        Access {
            relation: relation.into(),
            args,
        }
    }

    /// A single-argument-list access over plain variables.
    pub fn flat(relation: impl Into<String>, vars: &[&str]) -> Self {
        Access::new(relation, vec![vars.iter().map(|v| Expr::var(*v)).collect()])
    }

    /// Total number of arguments across all lists.
    pub fn arity(&self) -> usize {
        self.args.iter().map(Vec::len).sum()
    }

    pub fn flat_args(&self) -> impl Iterator<Item = &Expr> {
        self.args.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Access(Access),
    Var(String),
    /// `_`: an anonymous variable, fresh at every occurrence.
    Wildcard,
    Binary(Box<Expr>, BinOp, Box<Expr>),
    Neg(Box<Expr>),
    /// An expression-extension call such as `relu(v)` or `sum(v)`.
    Call(String, Vec<Expr>),
    Lit(Value),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Lit(Value::Int(v))
    }

    pub fn binary(lhs: Expr, op: BinOp, rhs: Expr) -> Expr {
        Expr::Binary(Box::new(lhs), op, Box::new(rhs))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Expr::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Visit every sub-expression (pre-order), including access arguments.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Access(a) => a.flat_args().for_each(|e| e.walk(f)),
            Expr::Binary(l, _, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::Neg(e) => e.walk(f),
            Expr::Call(_, args) => args.iter().for_each(|e| e.walk(f)),
            Expr::Var(_) | Expr::Wildcard | Expr::Lit(_) => {}
        }
    }

    /// Variables occurring in the expression (relation names excluded).
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(v.clone());
            }
        });
        out
    }

    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Access(a) = e {
                out.push(a);
            }
        });
        out
    }

    /// Rename variables according to `map`.
    pub fn rename(&self, map: &BTreeMap<String, String>) -> Expr {
        match self {
            Expr::Var(v) => Expr::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Expr::Access(a) => Expr::Access(a.rename(map)),
            Expr::Binary(l, op, r) => Expr::binary(l.rename(map), *op, r.rename(map)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.rename(map))),
            Expr::Call(n, args) => Expr::Call(n.clone(), args.iter().map(|e| e.rename(map)).collect()),
            Expr::Wildcard | Expr::Lit(_) => self.clone(),
        }
    }
}

impl Access {
    pub fn rename(&self, map: &BTreeMap<String, String>) -> Access {
        Access {
            relation: self.relation.clone(),
            args: self
                .args
                .iter()
                .map(|l| l.iter().map(|e| e.rename(map)).collect())
                .collect(),
        }
    }
}

/// A constraint-extension call such as `card(B,n,m)` or `fdep(a)(b)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CeiCall {
    pub name: String,
    pub args: Vec<Vec<Expr>>,
}

impl CeiCall {
    pub fn new(name: impl Into<String>, args: Vec<Vec<Expr>>) -> Self {
        CeiCall {
            name: name.into(),
            args,
        }
    }

    /// For CEIs whose first argument names a relation (`card`, relation-level
    /// `type`), that relation.
    pub fn relation_arg(&self) -> Option<&str> {
        let first = self.args.first()?.first()?.as_var()?;
        match self.name.as_str() {
            "card" => Some(first),
            "type" if self.type_name().is_some_and(|t| RELATION_TYPES.contains(&t)) => Some(first),
            _ => None,
        }
    }

    /// For `type(_, T)`, the type name `T`.
    pub fn type_name(&self) -> Option<&str> {
        if self.name != "type" {
            return None;
        }
        self.args.first()?.get(1)?.as_var()
    }

    /// Expressions that denote values (relation and type names excluded).
    pub fn value_args(&self) -> Vec<&Expr> {
        let flat: Vec<&Expr> = self.args.iter().flatten().collect();
        match self.name.as_str() {
            "card" => flat.into_iter().skip(1).collect(),
            "type" => {
                if self.relation_arg().is_some() {
                    Vec::new()
                } else {
                    flat.into_iter().take(1).collect()
                }
            }
            _ => flat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Constraint {
    And(Vec<Constraint>),
    Or(Vec<Constraint>),
    Not(Box<Constraint>),
    Atom(Access),
    /// A rule used as a constraint: satisfied when its head is non-empty.
    Nested(Box<Rule>),
    Cmp(Expr, CmpOp, Expr),
    Cei(CeiCall),
    /// A parenthesised constraint; semantically transparent.
    Group(Box<Constraint>),
    /// Sugar: `x in [t1, ..., tn]`.
    In(Expr, Vec<Expr>),
    /// Sugar: `n θ1 e θ2 m ...` with at least two operators.
    Chain(Expr, Vec<(CmpOp, Expr)>),
    /// Sugar: `match t case t1 -> C1 ... case tn -> Cn`.
    Match(Expr, Vec<(Expr, Constraint)>),
    /// Sugar: `x: T`.
    Typed(String, String),
}

impl Constraint {
    /// Conjunction that flattens nested conjunctions and groups disjunctions.
    pub fn and(parts: impl IntoIterator<Item = Constraint>) -> Constraint {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Constraint::And(inner) => out.extend(inner),
                Constraint::Or(_) => out.push(Constraint::Group(Box::new(p))),
                p => out.push(p),
            }
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Constraint::And(out)
        }
    }

    /// Disjunction that flattens nested disjunctions.
    pub fn or(parts: impl IntoIterator<Item = Constraint>) -> Constraint {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Constraint::Or(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Constraint::Or(out)
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(c: Constraint) -> Constraint {
        Constraint::Not(Box::new(c))
    }

    pub fn cmp(l: Expr, op: CmpOp, r: Expr) -> Constraint {
        Constraint::Cmp(l, op, r)
    }

    pub fn group(c: Constraint) -> Constraint {
        Constraint::Group(Box::new(c))
    }

    pub fn cei(name: &str, args: Vec<Vec<Expr>>) -> Constraint {
        Constraint::Cei(CeiCall::new(name, args))
    }

    /// Top-level conjuncts, looking through groups.
    pub fn conjuncts(&self) -> Vec<&Constraint> {
        match self {
            Constraint::And(parts) => parts.iter().flat_map(|p| p.conjuncts()).collect(),
            Constraint::Group(inner) => inner.conjuncts(),
            c => vec![c],
        }
    }

    /// Strip any number of enclosing groups.
    pub fn ungroup(&self) -> &Constraint {
        match self {
            Constraint::Group(inner) => inner.ungroup(),
            c => c,
        }
    }

    /// Visit this constraint and every sub-constraint (pre-order). Nested rule
    /// bodies are visited too.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Constraint)) {
        f(self);
        match self {
            Constraint::And(ps) | Constraint::Or(ps) => ps.iter().for_each(|p| p.walk(f)),
            Constraint::Not(c) | Constraint::Group(c) => c.walk(f),
            Constraint::Nested(r) => r.constraint.walk(f),
            Constraint::Match(_, cases) => cases.iter().for_each(|(_, c)| c.walk(f)),
            _ => {}
        }
    }

    /// Every expression directly owned by this constraint tree (including
    /// those inside nested rules and atom arguments as sub-expressions).
    pub fn exprs(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.walk(&mut |c| match c {
            Constraint::Atom(a) => out.extend(a.flat_args()),
            Constraint::Nested(r) => {
                out.extend(r.head.flat_args());
                out.extend(r.expr.iter());
            }
            Constraint::Cmp(l, _, r) => {
                out.push(l);
                out.push(r);
            }
            Constraint::Cei(call) => out.extend(call.value_args()),
            Constraint::In(e, items) => {
                out.push(e);
                out.extend(items);
            }
            Constraint::Chain(first, rest) => {
                out.push(first);
                out.extend(rest.iter().map(|(_, e)| e));
            }
            Constraint::Match(t, cases) => {
                out.push(t);
                out.extend(cases.iter().map(|(e, _)| e));
            }
            _ => {}
        });
        out
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Constraint {
        let r = |e: &Expr| e.rename(map);
        match self {
            Constraint::And(ps) => Constraint::And(ps.iter().map(|p| p.rename(map)).collect()),
            Constraint::Or(ps) => Constraint::Or(ps.iter().map(|p| p.rename(map)).collect()),
            Constraint::Not(c) => Constraint::Not(Box::new(c.rename(map))),
            Constraint::Group(c) => Constraint::Group(Box::new(c.rename(map))),
            Constraint::Atom(a) => Constraint::Atom(a.rename(map)),
            Constraint::Nested(rule) => Constraint::Nested(Box::new(rule.rename(map))),
            Constraint::Cmp(a, op, b) => Constraint::Cmp(r(a), *op, r(b)),
            Constraint::Cei(call) => Constraint::Cei(CeiCall {
                name: call.name.clone(),
                args: call.args.iter().map(|l| l.iter().map(r).collect()).collect(),
            }),
            Constraint::In(e, items) => Constraint::In(r(e), items.iter().map(r).collect()),
            Constraint::Chain(f, rest) => {
                Constraint::Chain(r(f), rest.iter().map(|(op, e)| (*op, r(e))).collect())
            }
            Constraint::Match(t, cases) => Constraint::Match(
                r(t),
                cases.iter().map(|(e, c)| (r(e), c.rename(map))).collect(),
            ),
            Constraint::Typed(v, t) => {
                Constraint::Typed(map.get(v).cloned().unwrap_or_else(|| v.clone()), t.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub head: Access,
    pub expr: Option<Expr>,
    pub constraint: Constraint,
    pub action: Action,
    pub loc: Loc,
}

impl Rule {
    pub fn new(head: Access, expr: Option<Expr>, constraint: Constraint, action: Action) -> Self {
        Rule {
            head,
            expr,
            constraint,
            action,
            loc: Loc::default(),
        }
    }

    /// `head := constraint` (the set form).
    pub fn set(head: Access, constraint: Constraint) -> Self {
        Rule::new(head, None, constraint, Action::Assign)
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Rule {
        Rule {
            head: self.head.rename(map),
            expr: self.expr.as_ref().map(|e| e.rename(map)),
            constraint: self.constraint.rename(map),
            action: self.action,
            loc: self.loc,
        }
    }
}

/// A standalone constraint stating facts about relations, e.g.
/// `R(a,b), fdep(a)(b)` or `card(B,2,2)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Declaration {
    pub constraint: Constraint,
    pub loc: Loc,
}

impl Declaration {
    pub fn new(constraint: Constraint) -> Self {
        Declaration {
            constraint,
            loc: Loc::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Program {
    pub declarations: Vec<Declaration>,
    pub rules: Vec<Rule>,
}

impl Program {
    pub fn new(rules: Vec<Rule>) -> Self {
        Program {
            declarations: Vec::new(),
            rules,
        }
    }

    /// Relation names defined by some rule head, in first-definition order.
    pub fn head_relations(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rules
            .iter()
            .filter(|r| seen.insert(r.head.relation.clone()))
            .map(|r| r.head.relation.clone())
            .collect()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print(self))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_rule(self))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_constraint(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_expr(self))
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_access(self, ", "))
    }
}

/// Relation variables bound by nested rules anywhere inside `c`.
pub fn relation_variables(c: &Constraint) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    c.walk(&mut |c| {
        if let Constraint::Nested(r) = c {
            if r.head.args.is_empty() {
                out.insert(r.head.relation.clone());
            }
        }
    });
    out
}

/// All variables occurring in the head, expression or constraint of `rule`.
///
/// Relation names, type names and the relation-variable names bound by
/// nested rules (`Rx` in `(Rx := Rh(x))`) are not variables.
pub fn free_variables(rule: &Rule) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in rule.head.flat_args() {
        out.extend(e.vars());
    }
    if let Some(e) = &rule.expr {
        out.extend(e.vars());
    }
    for e in rule.constraint.exprs() {
        out.extend(e.vars());
    }
    rule.constraint.walk(&mut |c| {
        if let Constraint::Typed(v, _) = c {
            out.insert(v.clone());
        }
    });
    for rv in relation_variables(&rule.constraint) {
        out.remove(&rv);
    }
    out
}

/// Rewrite every sugar form into core constructs.
///
/// The rewrite is local to each constraint: rules are never merged,
/// reordered or removed, and `desugar(desugar(p)) == desugar(p)`.
pub fn desugar(program: &Program) -> Result<Program, Diagnostic> {
    let rules = program
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| {
            desugar_rule(r).map_err(|d| d.with_rule(i).at(r.loc.line, r.loc.col))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let declarations = program
        .declarations
        .iter()
        .map(|d| {
            Ok(Declaration {
                constraint: desugar_constraint(&d.constraint)
                    .map_err(|e| e.at(d.loc.line, d.loc.col))?,
                loc: d.loc,
            })
        })
        .collect::<Result<Vec<_>, Diagnostic>>()?;
    Ok(Program {
        declarations,
        rules,
    })
}

pub fn desugar_rule(rule: &Rule) -> Result<Rule, Diagnostic> {
    Ok(Rule {
        head: rule.head.clone(),
        expr: rule.expr.clone(),
        constraint: desugar_constraint(&rule.constraint)?,
        action: rule.action,
        loc: rule.loc,
    })
}

pub fn desugar_constraint(c: &Constraint) -> Result<Constraint, Diagnostic> {
    Ok(match c {
        Constraint::And(ps) => Constraint::and(ps.iter().map(desugar_constraint).collect::<Result<Vec<_>, _>>()?),
        Constraint::Or(ps) => Constraint::or(ps.iter().map(desugar_constraint).collect::<Result<Vec<_>, _>>()?),
        Constraint::Not(inner) => Constraint::not(desugar_constraint(inner)?),
        Constraint::Group(inner) => Constraint::group(desugar_constraint(inner)?),
        Constraint::Nested(rule) => Constraint::Nested(Box::new(desugar_rule(rule)?)),
        Constraint::In(e, items) => {
            Constraint::or(items.iter().map(|t| Constraint::cmp(e.clone(), CmpOp::Eq, t.clone())))
        }
        Constraint::Chain(first, rest) => {
            let mut parts = Vec::new();
            let mut lhs = first.clone();
            for (op, rhs) in rest {
                parts.push(Constraint::cmp(lhs, *op, rhs.clone()));
                lhs = rhs.clone();
            }
            Constraint::and(parts)
        }
        Constraint::Match(t, cases) => {
            let mut seen: Vec<&Expr> = Vec::new();
            let mut branches = Vec::new();
            for (pat, body) in cases {
                if matches!(pat, Expr::Lit(_)) && seen.contains(&pat) {
                    return Err(Diagnostic::error(
                        Code::MalformedMatch,
                        format!("duplicate case `{pat}` in match"),
                    ));
                }
                seen.push(pat);
                let eq = Constraint::cmp(t.clone(), CmpOp::Eq, pat.clone());
                branches.push(Constraint::group(Constraint::and([eq, desugar_constraint(body)?])));
            }
            Constraint::or(branches)
        }
        Constraint::Typed(v, ty) => {
            Constraint::cei("type", vec![vec![Expr::var(v.clone()), Expr::var(ty.clone())]])
        }
        Constraint::Atom(_) | Constraint::Cmp(..) | Constraint::Cei(_) => c.clone(),
    })
}

/// True when the constraint tree contains no sugar forms.
pub fn is_core(c: &Constraint) -> bool {
    let mut core = true;
    c.walk(&mut |c| {
        if matches!(
            c,
            Constraint::In(..) | Constraint::Chain(..) | Constraint::Match(..) | Constraint::Typed(..)
        ) {
            core = false;
        }
    });
    core
}
