//! Scalar type inference by unification over variables, relation columns and
//! payloads.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::store::{Database, Semiring};
use crate::value::Value;

use super::schema::Schemas;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    /// Numeric, not yet known to be integral or real.
    Num,
    Int,
    Real,
    Str,
    Bool,
}

impl ScalarType {
    pub fn from_name(name: &str) -> Option<ScalarType> {
        Some(match name {
            "int" => ScalarType::Int,
            "real" | "float" => ScalarType::Real,
            "string" => ScalarType::Str,
            "bool" => ScalarType::Bool,
            _ => return None,
        })
    }

    pub fn of_value(v: &Value) -> ScalarType {
        match v {
            Value::Int(_) => ScalarType::Int,
            Value::Float(_) => ScalarType::Real,
            Value::Str(_) => ScalarType::Str,
            Value::Bool(_) => ScalarType::Bool,
        }
    }

    /// Whether a runtime value inhabits this type.
    pub fn admits(self, v: &Value) -> bool {
        match self {
            ScalarType::Num => v.is_numeric(),
            ScalarType::Int => matches!(v, Value::Int(_)),
            ScalarType::Real => v.is_numeric(),
            ScalarType::Str => matches!(v, Value::Str(_)),
            ScalarType::Bool => matches!(v, Value::Bool(_)),
        }
    }

    fn numeric(self) -> bool {
        matches!(self, ScalarType::Num | ScalarType::Int | ScalarType::Real)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarType::Num => "number",
            ScalarType::Int => "int",
            ScalarType::Real => "real",
            ScalarType::Str => "string",
            ScalarType::Bool => "bool",
        })
    }
}

/// Inferred types. Variables are scoped by rule index; declarations use
/// their own scope list.
#[derive(Debug, Clone, Default)]
pub struct TypeEnv {
    pub rule_vars: Vec<BTreeMap<String, ScalarType>>,
    pub columns: BTreeMap<String, Vec<Option<ScalarType>>>,
    pub payloads: BTreeMap<String, ScalarType>,
    /// Comparisons mentioning typed variables, per rule; checked at run time.
    pub refinements: Vec<BTreeMap<String, Vec<Constraint>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Var(usize, String),
    Col(String, usize),
    Payload(String),
}

#[derive(Debug, Clone)]
struct Info {
    ty: ScalarType,
    declared: bool,
    source: String,
}

#[derive(Default)]
struct Unifier {
    ids: BTreeMap<Node, usize>,
    parent: Vec<usize>,
    info: Vec<Option<Info>>,
    errors: Vec<Diagnostic>,
}

/// Either a unification node or a type fixed by context.
#[derive(Clone)]
enum T {
    N(usize),
    Fixed(Info),
    Unknown,
}

impl Unifier {
    fn node(&mut self, n: Node) -> usize {
        if let Some(&i) = self.ids.get(&n) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.info.push(None);
        self.ids.insert(n, i);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn join(&mut self, a: Option<Info>, b: Option<Info>, what: &str) -> Option<Info> {
        let (a, b) = match (a, b) {
            (None, x) | (x, None) => return x,
            (Some(a), Some(b)) => (a, b),
        };
        use ScalarType::*;
        let merged = match (a.ty, b.ty) {
            (x, y) if x == y => Some(x),
            (Num, y) if y.numeric() => Some(y),
            (x, Num) if x.numeric() => Some(x),
            (Int, Real) | (Real, Int) => {
                let int_declared = (a.ty == Int && a.declared) || (b.ty == Int && b.declared);
                if int_declared {
                    None
                } else {
                    Some(Real)
                }
            }
            _ => None,
        };
        match merged {
            Some(ty) => {
                let pick = if a.ty == ty { &a } else { &b };
                Some(Info {
                    ty,
                    declared: a.declared || b.declared,
                    source: pick.source.clone(),
                })
            }
            None => {
                self.errors.push(Diagnostic::error(
                    Code::TypeConflict,
                    format!(
                        "type conflict for {what}: {} (from `{}`) vs {} (from `{}`)",
                        a.ty, a.source, b.ty, b.source
                    ),
                ));
                Some(a)
            }
        }
    }

    fn unify(&mut self, x: &T, y: &T, what: &str) {
        match (x, y) {
            (T::Unknown, _) | (_, T::Unknown) => {}
            (T::N(a), T::N(b)) => {
                let (ra, rb) = (self.find(*a), self.find(*b));
                if ra == rb {
                    return;
                }
                let (ia, ib) = (self.info[ra].clone(), self.info[rb].clone());
                let j = self.join(ia, ib, what);
                self.parent[rb] = ra;
                self.info[ra] = j;
            }
            (T::N(a), T::Fixed(f)) | (T::Fixed(f), T::N(a)) => {
                let r = self.find(*a);
                let cur = self.info[r].clone();
                self.info[r] = self.join(cur, Some(f.clone()), what);
            }
            (T::Fixed(a), T::Fixed(b)) => {
                self.join(Some(a.clone()), Some(b.clone()), what);
            }
        }
    }

    fn resolve(&mut self, t: &T) -> Option<ScalarType> {
        match t {
            T::N(i) => {
                let r = self.find(*i);
                self.info[r].as_ref().map(|i| i.ty)
            }
            T::Fixed(i) => Some(i.ty),
            T::Unknown => None,
        }
    }
}

fn fixed(ty: ScalarType, source: impl Into<String>) -> T {
    T::Fixed(Info {
        ty,
        declared: false,
        source: source.into(),
    })
}

struct Scope<'a> {
    id: usize,
    schemas: &'a Schemas,
    /// relation variable -> (source relation, column offset)
    relvars: BTreeMap<String, (String, usize)>,
}

impl Scope<'_> {
    fn column(&self, rel: &str, idx: usize) -> Node {
        match self.relvars.get(rel) {
            Some((src, off)) => Node::Col(src.clone(), off + idx),
            None => Node::Col(rel.to_string(), idx),
        }
    }

    fn payload(&self, rel: &str) -> Node {
        match self.relvars.get(rel) {
            Some((src, _)) => Node::Payload(src.clone()),
            None => Node::Payload(rel.to_string()),
        }
    }
}

fn expr_type(u: &mut Unifier, s: &Scope, e: &Expr) -> T {
    match e {
        Expr::Var(v) => T::N(u.node(Node::Var(s.id, v.clone()))),
        Expr::Wildcard => T::Unknown,
        Expr::Lit(v) => match v {
            Value::Int(_) => fixed(ScalarType::Num, e.to_string()),
            other => fixed(ScalarType::of_value(other), e.to_string()),
        },
        Expr::Access(a) => {
            access_args(u, s, a);
            T::N(u.node(s.payload(&a.relation)))
        }
        Expr::Neg(inner) => {
            let t = expr_type(u, s, inner);
            u.unify(&t, &fixed(ScalarType::Num, e.to_string()), &e.to_string());
            t
        }
        Expr::Binary(l, op, r) => {
            let (tl, tr) = (expr_type(u, s, l), expr_type(u, s, r));
            let src = e.to_string();
            u.unify(&tl, &fixed(ScalarType::Num, src.clone()), &l.to_string());
            u.unify(&tr, &fixed(ScalarType::Num, src.clone()), &r.to_string());
            let (a, b) = (u.resolve(&tl), u.resolve(&tr));
            let ty = if *op == BinOp::Div || a == Some(ScalarType::Real) || b == Some(ScalarType::Real) {
                ScalarType::Real
            } else if a == Some(ScalarType::Int) && b == Some(ScalarType::Int) {
                ScalarType::Int
            } else {
                ScalarType::Num
            };
            fixed(ty, src)
        }
        Expr::Call(name, args) => {
            let ts: Vec<T> = args.iter().map(|a| expr_type(u, s, a)).collect();
            let src = e.to_string();
            for (t, a) in ts.iter().zip(args) {
                u.unify(t, &fixed(ScalarType::Num, src.clone()), &a.to_string());
            }
            match name.as_str() {
                "relu" | "sum" | "min" | "max" => ts.into_iter().next().unwrap_or(T::Unknown),
                "median" => fixed(ScalarType::Num, src),
                _ => fixed(ScalarType::Real, src),
            }
        }
    }
}

fn access_args(u: &mut Unifier, s: &Scope, a: &Access) {
    if !s.schemas.contains_key(&a.relation) && !s.relvars.contains_key(&a.relation) {
        return;
    }
    for (i, arg) in a.flat_args().enumerate() {
        let t = expr_type(u, s, arg);
        let col = T::N(u.node(s.column(&a.relation, i)));
        u.unify(&t, &col, &format!("{a} argument {}", i + 1));
    }
}

fn constraint_types(u: &mut Unifier, s: &mut Scope, c: &Constraint) {
    match c {
        Constraint::And(ps) | Constraint::Or(ps) => ps.iter().for_each(|p| constraint_types(u, s, p)),
        Constraint::Not(c) | Constraint::Group(c) => constraint_types(u, s, c),
        Constraint::Atom(a) => access_args(u, s, a),
        Constraint::Nested(r) => {
            if r.head.args.is_empty() {
                if let Constraint::Atom(a) = r.constraint.ungroup() {
                    let (src, off) = s
                        .relvars
                        .get(&a.relation)
                        .cloned()
                        .unwrap_or((a.relation.clone(), 0));
                    for (i, arg) in a.flat_args().enumerate() {
                        let t = expr_type(u, s, arg);
                        let col = T::N(u.node(Node::Col(src.clone(), off + i)));
                        u.unify(&t, &col, &format!("{a} argument {}", i + 1));
                    }
                    s.relvars.insert(r.head.relation.clone(), (src, off + a.arity()));
                    return;
                }
            }
            constraint_types(u, s, &r.constraint);
            if let Some(e) = &r.expr {
                expr_type(u, s, e);
            }
        }
        Constraint::Cmp(l, _, r) => {
            let (tl, tr) = (expr_type(u, s, l), expr_type(u, s, r));
            u.unify(&tl, &tr, &c.to_string());
        }
        Constraint::Cei(call) => match call.name.as_str() {
            "type" if call.relation_arg().is_none() => {
                let (Some(Expr::Var(v)), Some(t)) = (call.args[0].first(), call.type_name()) else {
                    return;
                };
                match ScalarType::from_name(t) {
                    Some(ty) => {
                        let n = T::N(u.node(Node::Var(s.id, v.clone())));
                        let f = T::Fixed(Info {
                            ty,
                            declared: true,
                            source: c.to_string(),
                        });
                        u.unify(&n, &f, v);
                    }
                    None => u.errors.push(Diagnostic::error(
                        Code::TypeConflict,
                        format!("unknown type `{t}` in `{c}`"),
                    )),
                }
            }
            "card" | "deg" => {
                let skip = usize::from(call.name == "deg");
                for e in call.value_args().into_iter().skip(skip) {
                    let t = expr_type(u, s, e);
                    u.unify(&t, &fixed(ScalarType::Int, c.to_string()), &e.to_string());
                }
            }
            _ => {}
        },
        Constraint::In(..) | Constraint::Chain(..) | Constraint::Match(..) | Constraint::Typed(..) => {
            if let Ok(d) = desugar_constraint(c) {
                constraint_types(u, s, &d);
            }
        }
    }
}

/// Infer scalar types for every variable, column and payload.
pub fn infer_types(p: &Program, schemas: &Schemas, db: &Database) -> (TypeEnv, Vec<Diagnostic>) {
    let mut u = Unifier::default();

    // Stored data fixes column and payload types.
    for (name, rel) in db.relations() {
        let arity = rel.arity();
        let mut cols: Vec<Option<ScalarType>> = vec![None; arity];
        let mut mixed = vec![false; arity];
        for (k, _) in rel.entries() {
            for (i, v) in k.iter().enumerate() {
                let t = ScalarType::of_value(v);
                cols[i] = match cols[i] {
                    None => Some(t),
                    Some(ScalarType::Int) if t == ScalarType::Real => Some(ScalarType::Real),
                    Some(ScalarType::Real) if t == ScalarType::Int => Some(ScalarType::Real),
                    Some(c) if c == t => Some(c),
                    Some(c) => {
                        mixed[i] = true;
                        Some(c)
                    }
                };
            }
        }
        for (i, c) in cols.into_iter().enumerate() {
            if let (Some(ty), false) = (c, mixed[i]) {
                let n = T::N(u.node(Node::Col(name.clone(), i)));
                u.unify(&n, &fixed(ty, format!("data of {name}")), &format!("{name} column {}", i + 1));
            }
        }
    }
    for (name, s) in schemas {
        let ty = match s.semiring {
            Semiring::Bool => ScalarType::Bool,
            Semiring::Nat => ScalarType::Int,
            Semiring::Real => ScalarType::Real,
        };
        let n = T::N(u.node(Node::Payload(name.clone())));
        u.unify(&n, &fixed(ty, format!("{} semiring of {name}", s.semiring)), name);
    }

    let nrules = p.rules.len();
    let mut errors_by_scope: Vec<(usize, usize)> = Vec::new();
    for (i, r) in p.rules.iter().enumerate() {
        let before = u.errors.len();
        let mut scope = Scope {
            id: i,
            schemas,
            relvars: BTreeMap::new(),
        };
        constraint_types(&mut u, &mut scope, &r.constraint);
        for (k, arg) in r.head.flat_args().enumerate() {
            let t = expr_type(&mut u, &scope, arg);
            let col = T::N(u.node(Node::Col(r.head.relation.clone(), k)));
            u.unify(&t, &col, &format!("head {} argument {}", r.head.relation, k + 1));
        }
        if let Some(e) = &r.expr {
            let t = expr_type(&mut u, &scope, e);
            let payload_is_numeric = schemas
                .get(&r.head.relation)
                .is_some_and(|s| s.semiring != Semiring::Bool);
            if payload_is_numeric {
                u.unify(&t, &fixed(ScalarType::Num, format!("value of {}", r.head.relation)), &e.to_string());
            }
        }
        errors_by_scope.push((before, i));
    }
    for (j, d) in p.declarations.iter().enumerate() {
        let mut scope = Scope {
            id: nrules + j,
            schemas,
            relvars: BTreeMap::new(),
        };
        constraint_types(&mut u, &mut scope, &d.constraint);
    }

    // Attach rule indices to errors raised while visiting each rule.
    let mut diags = std::mem::take(&mut u.errors);
    for (k, (start, rule)) in errors_by_scope.iter().enumerate() {
        let end = errors_by_scope.get(k + 1).map_or(usize::MAX, |n| n.0);
        let r = &p.rules[*rule];
        for d in diags.iter_mut().skip(*start).take(end.saturating_sub(*start)) {
            if d.rule.is_none() {
                *d = d.clone().with_rule(*rule).at(r.loc.line, r.loc.col);
            }
        }
    }

    let mut env = TypeEnv {
        rule_vars: vec![BTreeMap::new(); nrules],
        refinements: vec![BTreeMap::new(); nrules],
        ..TypeEnv::default()
    };
    let nodes: Vec<(Node, usize)> = u.ids.iter().map(|(n, i)| (n.clone(), *i)).collect();
    for (n, i) in nodes {
        let Some(ty) = u.resolve(&T::N(i)) else { continue };
        match n {
            Node::Var(scope, v) if scope < nrules => {
                env.rule_vars[scope].insert(v, ty);
            }
            Node::Var(..) => {}
            Node::Col(rel, k) => {
                let cols = env.columns.entry(rel).or_default();
                if cols.len() <= k {
                    cols.resize(k + 1, None);
                }
                cols[k] = Some(ty);
            }
            Node::Payload(rel) => {
                env.payloads.insert(rel, ty);
            }
        }
    }
    for (i, r) in p.rules.iter().enumerate() {
        let typed = &env.rule_vars[i];
        let mut refs: BTreeMap<String, Vec<Constraint>> = BTreeMap::new();
        r.constraint.walk(&mut |c| {
            if let Constraint::Cmp(l, _, rhs) = c {
                let mut vars = l.vars();
                vars.extend(rhs.vars());
                for v in vars {
                    if typed.contains_key(&v) {
                        refs.entry(v).or_default().push(c.clone());
                    }
                }
            }
        });
        env.refinements[i] = refs;
    }
    (env, diags)
}
