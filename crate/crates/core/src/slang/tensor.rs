//! Tensor storage formats as rewrites of dense-tensor rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{require, Names};
use crate::ast::*;
use crate::check::integrity::shape_of;
use crate::diag::{Code, Diagnostic};
use crate::store::{Csr, Database, Relation, Semiring};
use crate::syntax::parse;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorFormat {
    Dense,
    Coo,
    Csr,
}

impl TensorFormat {
    pub const ALL: [TensorFormat; 3] = [TensorFormat::Dense, TensorFormat::Coo, TensorFormat::Csr];

    pub fn name(self) -> &'static str {
        match self {
            TensorFormat::Dense => "dense",
            TensorFormat::Coo => "coo",
            TensorFormat::Csr => "csr",
        }
    }
}

impl fmt::Display for TensorFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TensorFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TensorFormat::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown tensor format `{s}`"))
    }
}

/// How one input tensor is stored after lowering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Encoding {
    pub tensor: String,
    pub format: TensorFormat,
    /// The coordinate relation (coo) or the array-name prefix (csr).
    pub stored: String,
}

impl Encoding {
    /// Add the encoded form of `db[tensor]` to `db`.
    pub fn install(&self, db: &mut Database) -> Result<(), Diagnostic> {
        let missing = || Diagnostic::error(Code::UndeclaredRelation, format!("no data for tensor {}", self.tensor));
        let rel = db.get(&self.tensor).ok_or_else(missing)?.clone();
        match self.format {
            TensorFormat::Dense => {}
            TensorFormat::Coo => {
                let mut coo = Relation::flat(Semiring::Bool, rel.arity() + 1);
                for (mut k, v) in rel.entries() {
                    if v.as_f64().is_some_and(|x| x != 0.0) {
                        k.push(v);
                        coo.merge(k, Value::Bool(true)).map_err(Diagnostic::from)?;
                    }
                }
                db.insert(self.stored.clone(), coo);
            }
            TensorFormat::Csr => {
                let shape = shape_of(&rel)
                    .filter(|s| s.len() == 2)
                    .ok_or_else(|| Diagnostic::error(Code::Shape, format!("{} is not a matrix", self.tensor)))?;
                let (rows, cols) = (shape[0], shape[1]);
                let mut data = vec![0.0; rows * cols];
                for (k, v) in rel.entries() {
                    let (Some(i), Some(j)) = (k[0].as_i64(), k[1].as_i64()) else { continue };
                    data[i as usize * cols + j as usize] = v.as_f64().unwrap_or(0.0);
                }
                Csr::from_dense(rows, cols, &data)
                    .install(db, &self.stored)
                    .map_err(Diagnostic::from)?;
            }
        }
        Ok(())
    }
}

/// Array prefix for a CSR-lowered tensor: bare `n,P,I,V` when it is the
/// only one, otherwise qualified by the tensor name.
pub fn csr_prefix(prefix: &str, tensor: &str, count: usize) -> String {
    if count == 1 {
        prefix.to_string()
    } else {
        format!("{prefix}{tensor}_")
    }
}

/// A tensor lowering. `tensors` empty means every eligible input tensor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LowerTensor {
    pub tensors: Vec<String>,
    pub prefix: String,
}

pub fn lower_tensor(p: &Program, format: TensorFormat) -> Result<Program, Vec<Diagnostic>> {
    LowerTensor::default().apply(p, format).map(|(p, _)| p)
}

/// Tensors read by the program but not defined by it, with their order.
fn input_tensors(p: &Program) -> BTreeMap<String, usize> {
    let heads: BTreeSet<String> = p.head_relations().into_iter().collect();
    let mut out = BTreeMap::new();
    for r in &p.rules {
        for c in r.constraint.conjuncts() {
            if let Constraint::Cei(call) = c {
                if let Some(rel) = call.relation_arg().filter(|r| !heads.contains(*r) && call.name == "card") {
                    out.insert(rel.to_string(), call.value_args().len());
                }
            }
        }
        let mut exprs: Vec<&Expr> = r.constraint.exprs();
        exprs.extend(r.expr.iter());
        for e in exprs {
            for a in e.accesses() {
                if !heads.contains(&a.relation) {
                    out.entry(a.relation.clone()).or_insert(a.arity());
                }
            }
        }
    }
    out
}

fn err(code: Code, msg: String) -> Vec<Diagnostic> {
    vec![Diagnostic::error(code, msg)]
}

/// Replace each outermost access in `e` by a fresh variable.
fn hoist(e: &Expr, names: &mut Names, out: &mut Vec<(String, Access)>) -> Expr {
    match e {
        Expr::Access(a) => {
            let v = names.fresh_var(&a.relation.to_lowercase());
            out.push((v.clone(), a.clone()));
            Expr::Var(v)
        }
        Expr::Binary(l, op, r) => Expr::binary(hoist(l, names, out), *op, hoist(r, names, out)),
        Expr::Neg(x) => Expr::Neg(Box::new(hoist(x, names, out))),
        Expr::Call(n, args) => Expr::Call(n.clone(), args.iter().map(|a| hoist(a, names, out)).collect()),
        other => other.clone(),
    }
}

fn is_order_cmp(op: CmpOp) -> bool {
    matches!(op, CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge)
}

fn exprs_of(c: &Constraint) -> BTreeSet<String> {
    c.exprs().into_iter().flat_map(|e| e.vars()).collect()
}

/// Drop shape constraints left without purpose: `card` whose size
/// variables are used nowhere else, then ordering comparisons over
/// variables nothing else mentions.
fn tidy(head_vars: &BTreeSet<String>, mut parts: Vec<Constraint>) -> Vec<Constraint> {
    loop {
        let elsewhere = |parts: &[Constraint], skip: usize, v: &str| {
            head_vars.contains(v) || parts.iter().enumerate().any(|(k, c)| k != skip && exprs_of(c).contains(v))
        };
        let drop = parts.iter().enumerate().position(|(k, c)| match c {
            Constraint::Cei(call) if call.name == "card" => {
                let sizes: Vec<String> = call.value_args().iter().flat_map(|e| e.vars()).collect();
                sizes.iter().any(|v| !elsewhere(&parts, k, v))
            }
            Constraint::Cmp(l, op, r) if is_order_cmp(*op) => {
                let mut vs = l.vars();
                vs.extend(r.vars());
                vs.iter().any(|v| {
                    !head_vars.contains(v)
                        && !parts.iter().enumerate().any(|(m, o)| {
                            m != k
                                && !matches!(o, Constraint::Cmp(_, op2, _) if is_order_cmp(*op2))
                                && exprs_of(o).contains(v)
                        })
                })
            }
            _ => false,
        });
        match drop {
            Some(k) => {
                parts.remove(k);
            }
            None => return parts,
        }
    }
}

impl LowerTensor {
    pub fn apply(&self, p: &Program, format: TensorFormat) -> Result<(Program, Vec<Encoding>), Vec<Diagnostic>> {
        let p = desugar(p).map_err(|d| vec![d])?;
        require(&p, "dense-tensor")?;
        let inputs = input_tensors(&p);
        for r in &p.rules {
            for c in r.constraint.conjuncts() {
                let Constraint::Cei(call) = c else { continue };
                let Some(rel) = call.relation_arg() else { continue };
                let order = call.value_args().len();
                let mut exprs: Vec<&Expr> = r.constraint.exprs();
                exprs.extend(r.expr.iter());
                for a in exprs.into_iter().flat_map(|e| e.accesses()).filter(|a| a.relation == rel) {
                    if a.arity() != order {
                        return Err(err(
                            Code::Shape,
                            format!("card gives {order} sizes for {rel}, accessed as {a}"),
                        ));
                    }
                }
            }
        }
        if format == TensorFormat::Dense {
            return Ok((p, Vec::new()));
        }
        let targets: Vec<String> = if self.tensors.is_empty() {
            inputs
                .iter()
                .filter(|(_, order)| format != TensorFormat::Csr || **order == 2)
                .map(|(n, _)| n.clone())
                .collect()
        } else {
            self.tensors.clone()
        };
        if targets.is_empty() {
            return Err(err(Code::Shape, format!("no input tensor can be stored as {format}")));
        }
        for t in &targets {
            let order = *inputs
                .get(t)
                .ok_or_else(|| err(Code::UndeclaredRelation, format!("{t} is not an input tensor of the program")))?;
            if format == TensorFormat::Csr && order != 2 {
                return Err(err(Code::Shape, format!("csr stores matrices, but {t} has order {order}")));
            }
        }

        let mut names = Names::of_program(&p);
        let mut encodings = Vec::new();
        let mut stored: BTreeMap<String, String> = BTreeMap::new();
        let mut decode: BTreeMap<String, Rule> = BTreeMap::new();
        for t in &targets {
            let enc = match format {
                TensorFormat::Coo => {
                    let name = names.fresh(&format!("{}{t}_coo", self.prefix));
                    stored.insert(t.clone(), name.clone());
                    Encoding {
                        tensor: t.clone(),
                        format,
                        stored: name,
                    }
                }
                _ => {
                    let name = names.fresh(&format!("{}{t}_CSR", self.prefix));
                    let pre = csr_prefix(&self.prefix, t, targets.len());
                    let src = format!(
                        "{name}(i)(j) := {pre}V(p) if (0<=i<{pre}n),(p1={pre}P(i)), (p2={pre}P(i+1)), (p1<=p<p2), (j={pre}I(p))"
                    );
                    let rule = desugar(&parse(&src).expect("decode rule parses")).unwrap().rules.remove(0);
                    decode.insert(t.clone(), rule);
                    stored.insert(t.clone(), name);
                    Encoding {
                        tensor: t.clone(),
                        format,
                        stored: pre,
                    }
                }
            };
            encodings.push(enc);
        }

        let mut out = Vec::new();
        let mut emitted = BTreeSet::new();
        for r in &p.rules {
            let touched: Vec<&String> = targets
                .iter()
                .filter(|t| {
                    let mut exprs: Vec<&Expr> = r.constraint.exprs();
                    exprs.extend(r.expr.iter());
                    exprs.iter().any(|e| e.accesses().iter().any(|a| &&a.relation == t))
                })
                .collect();
            if touched.is_empty() {
                out.push(r.clone());
                continue;
            }
            for t in &touched {
                if let Some(d) = decode.get(*t) {
                    if emitted.insert((*t).clone()) {
                        out.push(d.clone());
                    }
                }
            }
            out.push(self.rewrite(r, &targets, &stored, format, &names)?);
        }
        Ok((
            Program {
                declarations: p.declarations.clone(),
                rules: out,
            },
            encodings,
        ))
    }

    fn rewrite(
        &self,
        r: &Rule,
        targets: &[String],
        stored: &BTreeMap<String, String>,
        format: TensorFormat,
        names: &Names,
    ) -> Result<Rule, Vec<Diagnostic>> {
        let mut local = Names {
            taken: names.taken.clone(),
        };
        local.taken.extend(free_variables(r));
        let mut hoisted = Vec::new();
        let expr = r.expr.as_ref().map(|e| hoist(e, &mut local, &mut hoisted));
        let mut parts: Vec<Constraint> = hoisted
            .into_iter()
            .map(|(v, a)| Constraint::cmp(Expr::Var(v), CmpOp::Eq, Expr::Access(a)))
            .collect();
        parts.extend(r.constraint.conjuncts().into_iter().cloned());

        let is_target = |a: &Access| targets.contains(&a.relation);
        let mut indices: BTreeSet<String> = BTreeSet::new();
        for c in &parts {
            for e in c.exprs() {
                for a in e.accesses().into_iter().filter(|a| is_target(a)) {
                    indices.extend(a.flat_args().flat_map(|x| x.as_var().map(str::to_string)));
                }
            }
        }

        let mut kept = Vec::new();
        for c in parts {
            match &c {
                Constraint::Cei(call) if call.name == "card" && call.relation_arg().is_some_and(|t| targets.iter().any(|x| x == t)) => continue,
                Constraint::Cmp(l, op, rhs) if is_order_cmp(*op) => {
                    let on_index = [l, rhs].iter().any(|e| e.as_var().is_some_and(|v| indices.contains(v)));
                    if on_index {
                        continue;
                    }
                    kept.push(c);
                }
                Constraint::Cmp(Expr::Var(v), CmpOp::Eq, Expr::Access(a)) | Constraint::Cmp(Expr::Access(a), CmpOp::Eq, Expr::Var(v))
                    if is_target(a) =>
                {
                    let name = &stored[&a.relation];
                    kept.push(match format {
                        TensorFormat::Coo => {
                            let mut args: Vec<Expr> = a.flat_args().cloned().collect();
                            args.push(Expr::var(v));
                            Constraint::Atom(Access::new(name.clone(), vec![args]))
                        }
                        _ => Constraint::cmp(Expr::var(v), CmpOp::Eq, Expr::Access(Access::new(name.clone(), a.args.clone()))),
                    });
                }
                other => {
                    if let Some(a) = other.exprs().into_iter().flat_map(|e| e.accesses()).find(|a| is_target(a)) {
                        if format == TensorFormat::Coo {
                            return Err(err(Code::Shape, format!("cannot store {a} as coordinates in `{other}`")));
                        }
                        let map: BTreeMap<String, String> =
                            stored.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                        kept.push(rename_relations(other, &map));
                    } else {
                        kept.push(c);
                    }
                }
            }
        }
        let head_vars: BTreeSet<String> = r.head.flat_args().flat_map(|e| e.vars()).collect();
        let mut all_head = head_vars.clone();
        if let Some(e) = &expr {
            all_head.extend(e.vars());
        }
        let kept = tidy(&all_head, kept);
        Ok(Rule {
            head: r.head.clone(),
            expr,
            constraint: Constraint::and(kept),
            action: r.action,
            loc: r.loc,
        })
    }
}

fn rename_expr(e: &Expr, map: &BTreeMap<String, String>) -> Expr {
    match e {
        Expr::Access(a) => Expr::Access(Access::new(
            map.get(&a.relation).cloned().unwrap_or_else(|| a.relation.clone()),
            a.args.iter().map(|l| l.iter().map(|x| rename_expr(x, map)).collect()).collect(),
        )),
        Expr::Binary(l, op, r) => Expr::binary(rename_expr(l, map), *op, rename_expr(r, map)),
        Expr::Neg(x) => Expr::Neg(Box::new(rename_expr(x, map))),
        Expr::Call(n, args) => Expr::Call(n.clone(), args.iter().map(|a| rename_expr(a, map)).collect()),
        other => other.clone(),
    }
}

fn rename_relations(c: &Constraint, map: &BTreeMap<String, String>) -> Constraint {
    match c {
        Constraint::Cmp(l, op, r) => Constraint::Cmp(rename_expr(l, map), *op, rename_expr(r, map)),
        other => other.clone(),
    }
}
