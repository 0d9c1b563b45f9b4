//! Execution of one rule plan against a fixed choice of relation versions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::ast::CmpOp;
use crate::check::integrity::shape_of;
use crate::check::plan::{Agg, CExpr, Cond, HeadValue, Pat, RelRef, RulePlan, Step};
use crate::diag::{Code, Diagnostic};
use crate::store::{Relation, Semiring};
use crate::value::{Tuple, Value};

use super::eei::{aggregate, apply_func, arith, negate, softmax};

pub(crate) enum Flow {
    /// Early exit from a sub-plan once a witness is found.
    Stop,
    Fail(Diagnostic),
}

impl From<Diagnostic> for Flow {
    fn from(d: Diagnostic) -> Self {
        Flow::Fail(d)
    }
}

#[derive(Clone)]
pub(crate) struct Env {
    slots: Vec<Option<Value>>,
    relvars: Vec<Option<(Arc<Relation>, Tuple)>>,
}

type Sink<'s, 'p> = dyn FnMut(&mut Exec<'p>, &mut Env) -> Result<(), Flow> + 's;

pub(crate) struct Exec<'p> {
    plan: &'p RulePlan,
    rels: Vec<Arc<Relation>>,
    pub enumerations: u64,
    /// Exported tuples reached by more than one branch of a disjunction.
    pub overlaps: u64,
}

/// Head contributions of one evaluation of a rule.
pub(crate) struct Output {
    pub delta: Relation,
    pub derivations: u64,
    pub enumerations: u64,
    pub overlaps: u64,
    pub shape: Option<Vec<usize>>,
    pub cap: Option<usize>,
}

fn rt(msg: String) -> Diagnostic {
    Diagnostic::error(Code::Runtime, msg)
}

fn loose_eq(a: &Value, b: &Value) -> bool {
    a.compare_loose(b) == Some(std::cmp::Ordering::Equal)
}

fn as_index(v: &Value, what: &str) -> Result<i64, Diagnostic> {
    match v {
        Value::Int(i) => Ok(*i),
        Value::Float(f) if f.fract() == 0.0 => Ok(*f as i64),
        other => Err(rt(format!("{what} must be an integer, got {other}"))),
    }
}

impl<'p> Exec<'p> {
    pub fn new(plan: &'p RulePlan, rels: Vec<Arc<Relation>>) -> Self {
        Exec {
            plan,
            rels,
            enumerations: 0,
            overlaps: 0,
        }
    }

    fn env(&self) -> Env {
        Env {
            slots: vec![None; self.plan.slots.len()],
            relvars: vec![None; self.plan.relvars.len()],
        }
    }

    fn source(&self, r: RelRef, env: &Env) -> Result<(Arc<Relation>, Tuple), Diagnostic> {
        match r {
            RelRef::Named(i) => Ok((self.rels[i].clone(), Vec::new())),
            RelRef::Var(v) => env.relvars[v]
                .clone()
                .ok_or_else(|| rt(format!("relation variable {} is unbound", self.plan.relvars[v]))),
        }
    }

    pub fn eval(&self, e: &CExpr, env: &Env) -> Result<Value, Diagnostic> {
        Ok(match e {
            CExpr::Slot(s) => env.slots[*s]
                .clone()
                .ok_or_else(|| rt(format!("variable {} read before it is bound", self.plan.slots[*s])))?,
            CExpr::Const(v) => v.clone(),
            CExpr::Bin(l, op, r) => arith(*op, &self.eval(l, env)?, &self.eval(r, env)?)?,
            CExpr::Neg(x) => negate(&self.eval(x, env)?)?,
            CExpr::Call(f, x) => apply_func(*f, &self.eval(x, env)?)?,
            CExpr::Lookup(r, args) => {
                let (rel, mut key) = self.source(*r, env)?;
                for a in args {
                    key.push(self.eval(a, env)?);
                }
                rel.get(&key)
            }
        })
    }

    /// Match `pats` against `key[offset..]`, binding slots left to right.
    fn matches(&self, pats: &[Pat], key: &[Value], env: &mut Env) -> Result<bool, Diagnostic> {
        for (p, v) in pats.iter().zip(key) {
            match p {
                Pat::Any => {}
                Pat::Bind(s) => env.slots[*s] = Some(v.clone()),
                Pat::Check(e) => {
                    if !loose_eq(&self.eval(e, env)?, v) {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Leading checked patterns evaluated into a scan prefix.
    fn prefix(&self, base: Tuple, pats: &[Pat], env: &Env) -> Result<(Tuple, usize), Diagnostic> {
        let mut prefix = base;
        let mut n = 0;
        for p in pats {
            let Pat::Check(e) = p else { break };
            prefix.push(self.eval(e, env)?);
            n += 1;
        }
        Ok((prefix, n))
    }

    pub fn run(&mut self, steps: &'p [Step], i: usize, env: &mut Env, sink: &mut Sink<'_, 'p>) -> Result<(), Flow> {
        let Some(step) = steps.get(i) else {
            return sink(self, env);
        };
        match step {
            Step::Scan { rel, pats, .. } => {
                let (rel, base) = self.source(*rel, env)?;
                let base_len = base.len();
                let (prefix, fixed) = self.prefix(base, pats, env)?;
                let width = base_len + pats.len();
                if fixed == pats.len() {
                    let hit = if width == rel.arity() {
                        rel.contains(&prefix)
                    } else {
                        rel.has_prefix(&prefix)
                    };
                    return if hit { self.run(steps, i + 1, env, sink) } else { Ok(()) };
                }
                let rest = &pats[fixed..];
                let partial = width < rel.arity();
                let wild = rest.iter().any(|p| matches!(p, Pat::Any));
                let mut last: Option<Tuple> = None;
                let mut seen: BTreeSet<Tuple> = BTreeSet::new();
                rel.scan_prefix::<Flow>(&prefix, false, &mut |full, _| {
                    let k = &full[..width];
                    if partial {
                        if last.as_deref() == Some(k) {
                            return Ok(());
                        }
                        last = Some(k.to_vec());
                    }
                    let tail = &k[base_len + fixed..];
                    if !self.matches(rest, tail, env)? {
                        return Ok(());
                    }
                    if wild {
                        let bound: Tuple = rest
                            .iter()
                            .zip(tail)
                            .filter(|(p, _)| matches!(p, Pat::Bind(_)))
                            .map(|(_, v)| v.clone())
                            .collect();
                        if !seen.insert(bound) {
                            return Ok(());
                        }
                    }
                    self.enumerations += 1;
                    self.run(steps, i + 1, env, sink)
                })
            }
            Step::ValueScan { target, rel, pats, .. } => {
                let (rel, base) = self.source(*rel, env)?;
                let base_len = base.len();
                let (prefix, fixed) = self.prefix(base, pats, env)?;
                let rest = &pats[fixed..];
                let dense = rel.is_dense();
                rel.scan_prefix::<Flow>(&prefix, dense, &mut |k, v| {
                    if !self.matches(rest, &k[base_len + fixed..], env)? {
                        return Ok(());
                    }
                    if !self.matches(std::slice::from_ref(target), std::slice::from_ref(v), env)? {
                        return Ok(());
                    }
                    self.enumerations += 1;
                    self.run(steps, i + 1, env, sink)
                })
            }
            Step::Range {
                slot,
                lo,
                lo_strict,
                hi,
                hi_strict,
                ..
            } => {
                let lo_v = self.eval(lo, env)?;
                let hi_v = self.eval(hi, env)?;
                let bound = |v: &Value, what: &str| {
                    v.as_f64().ok_or_else(|| rt(format!("range bound {what} must be numeric, got {v}")))
                };
                let (l, h) = (bound(&lo_v, "low")?, bound(&hi_v, "high")?);
                let start = if *lo_strict { l.floor() as i64 + 1 } else { l.ceil() as i64 };
                let end = if *hi_strict { h.ceil() as i64 - 1 } else { h.floor() as i64 };
                let mut x = start;
                while x <= end {
                    env.slots[*slot] = Some(Value::Int(x));
                    self.enumerations += 1;
                    self.run(steps, i + 1, env, sink)?;
                    x += 1;
                }
                Ok(())
            }
            Step::Assign { slot, expr, .. } => {
                env.slots[*slot] = Some(self.eval(expr, env)?);
                self.run(steps, i + 1, env, sink)
            }
            Step::Card { rel, pats, count, .. } => {
                let (rel, base) = self.source(*rel, env)?;
                let sizes: Vec<Value> = if *count {
                    vec![Value::Int(rel.count_prefix(&base) as i64)]
                } else {
                    let shape = shape_of(&rel)
                        .ok_or_else(|| rt("card needs integer keys to infer a shape".into()))?;
                    shape[base.len().min(shape.len())..]
                        .iter()
                        .map(|n| Value::Int(*n as i64))
                        .collect()
                };
                if sizes.len() != pats.len() {
                    return Err(Diagnostic::error(
                        Code::Shape,
                        format!("card gives {} sizes, relation has {}", pats.len(), sizes.len()),
                    )
                    .into());
                }
                if self.matches(pats, &sizes, env)? {
                    self.run(steps, i + 1, env, sink)
                } else {
                    Ok(())
                }
            }
            Step::Or { branches, exported, .. } => {
                let mut found: Vec<Tuple> = Vec::new();
                let mut origin: BTreeMap<Tuple, usize> = BTreeMap::new();
                for (b, branch) in branches.iter().enumerate() {
                    let mut local = env.clone();
                    let mut collect = |x: &mut Exec<'p>, e: &mut Env| -> Result<(), Flow> {
                        let t: Tuple = exported
                            .iter()
                            .map(|s| e.slots[*s].clone().unwrap_or(Value::Bool(false)))
                            .collect();
                        match origin.get(&t) {
                            None => {
                                origin.insert(t.clone(), b);
                                found.push(t);
                            }
                            Some(prev) if *prev != b => {
                                origin.insert(t, b);
                                x.overlaps += 1;
                            }
                            Some(_) => {}
                        }
                        Ok(())
                    };
                    self.run(branch, 0, &mut local, &mut collect)?;
                }
                for t in found {
                    for (s, v) in exported.iter().zip(t) {
                        env.slots[*s] = Some(v);
                    }
                    if !exported.is_empty() {
                        self.enumerations += 1;
                    }
                    self.run(steps, i + 1, env, sink)?;
                }
                Ok(())
            }
            Step::Filter { cond, .. } => {
                let pass = match cond {
                    Cond::Cmp(l, op, r) => {
                        let (a, b) = (self.eval(l, env)?, self.eval(r, env)?);
                        match a.compare_loose(&b) {
                            Some(o) => op.holds(o),
                            None => *op == CmpOp::Ne,
                        }
                    }
                    Cond::Type(e, ty) => ty.admits(&self.eval(e, env)?),
                    Cond::Not(sub) => !self.satisfiable(sub, env)?,
                    Cond::Exists(sub) => self.satisfiable(sub, env)?,
                };
                if pass {
                    self.run(steps, i + 1, env, sink)
                } else {
                    Ok(())
                }
            }
            Step::BindRel { var, rel, prefix, .. } => {
                let (rel, mut key) = self.source(*rel, env)?;
                for e in prefix {
                    key.push(self.eval(e, env)?);
                }
                if !rel.has_prefix(&key) {
                    return Ok(());
                }
                let saved = env.relvars[*var].replace((rel, key));
                let r = self.run(steps, i + 1, env, sink);
                env.relvars[*var] = saved;
                r
            }
        }
    }

    fn satisfiable(&mut self, sub: &'p [Step], env: &Env) -> Result<bool, Flow> {
        let mut local = env.clone();
        match self.run(sub, 0, &mut local, &mut |_, _| Err(Flow::Stop)) {
            Ok(()) => Ok(false),
            Err(Flow::Stop) => Ok(true),
            Err(e) => Err(e),
        }
    }
}

fn eval_shape(exec: &Exec, exprs: &[CExpr], env: &Env) -> Result<Vec<usize>, Diagnostic> {
    exprs
        .iter()
        .map(|e| {
            let n = as_index(&exec.eval(e, env)?, "card size")?;
            usize::try_from(n).map_err(|_| rt(format!("negative card size {n}")))
        })
        .collect()
}

/// Evaluate a rule once: enumerate the body, evaluate the head and combine
/// contributions. `rels` gives the relation version for every named use.
pub(crate) fn eval_rule(plan: &RulePlan, semiring: Semiring, rels: Vec<Arc<Relation>>) -> Result<Output, Diagnostic> {
    let mut exec = Exec::new(plan, rels);
    let head = &plan.head;
    let mut delta = Relation::new(semiring, head.levels.clone());
    let mut groups: BTreeMap<Tuple, Vec<(Tuple, Value)>> = BTreeMap::new();
    let mut derivations = 0u64;
    let mut shape: Option<Vec<usize>> = None;
    let mut cap: Option<usize> = None;
    let softmax_group = |key: &Tuple| -> Tuple {
        let drop = match head.levels.as_slice() {
            [_, .., last] => *last,
            _ => 1,
        };
        key[..key.len().saturating_sub(drop)].to_vec()
    };
    let mut sink = |x: &mut Exec<'_>, env: &mut Env| -> Result<(), Flow> {
        derivations += 1;
        let key: Tuple = head.keys.iter().map(|k| x.eval(k, env)).collect::<Result<_, _>>()?;
        if let Some(exprs) = &head.shape {
            let s = eval_shape(x, exprs, env)?;
            match &shape {
                Some(prev) if *prev != s => {
                    return Err(Diagnostic::error(
                        Code::Shape,
                        format!("head shape varies between bindings: {prev:?} and {s:?}"),
                    )
                    .into())
                }
                _ => shape = Some(s),
            }
        }
        if let (Some(e), None) = (&head.cap, cap) {
            let n = as_index(&x.eval(e, env)?, "card size")?;
            cap = Some(usize::try_from(n).unwrap_or(0));
        }
        match &head.value {
            HeadValue::One => delta.merge(key, semiring.one()).map_err(Diagnostic::from)?,
            HeadValue::Expr(e) => {
                let v = x.eval(e, env)?;
                delta.merge(key, v).map_err(|e| rt(e.to_string()))?
            }
            HeadValue::Aggregate(Agg::Softmax, e) => {
                let v = x.eval(e, env)?;
                groups.entry(softmax_group(&key)).or_default().push((key, v));
            }
            HeadValue::Aggregate(_, e) => {
                let v = x.eval(e, env)?;
                groups.entry(key.clone()).or_default().push((key, v));
            }
        }
        Ok(())
    };
    let mut env = exec.env();
    match exec.run(&plan.steps, 0, &mut env, &mut sink) {
        Ok(()) | Err(Flow::Stop) => {}
        Err(Flow::Fail(d)) => return Err(d),
    }
    if let HeadValue::Aggregate(agg, _) = &head.value {
        for (key, members) in groups {
            if *agg == Agg::Softmax {
                let xs: Vec<f64> = members
                    .iter()
                    .map(|(_, v)| v.as_f64().ok_or_else(|| rt(format!("softmax needs numbers, got {v}"))))
                    .collect::<Result<_, _>>()?;
                for ((k, _), y) in members.into_iter().zip(softmax(&xs)) {
                    delta.merge(k, Value::Float(y)).map_err(Diagnostic::from)?;
                }
            } else {
                let values: Vec<Value> = members.into_iter().map(|(_, v)| v).collect();
                let v = aggregate(*agg, &values)?;
                delta.merge(key, v).map_err(|e| rt(e.to_string()))?;
            }
        }
    }
    Ok(Output {
        delta,
        derivations,
        enumerations: exec.enumerations,
        overlaps: exec.overlaps,
        shape,
        cap,
    })
}
