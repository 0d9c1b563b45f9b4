//! Program evaluation: strata in order, declarative rules to a fixpoint,
//! then imperative actions.

pub mod eei;
mod exec;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::ast::{Action, Constraint, Program};
use crate::check::integrity::check_declaration;
use crate::check::plan::{RelUse, Role, RulePlan};
use crate::check::schema::literal_card;
use crate::check::{check_program, declarations, Checked, Stratum};
use crate::diag::{Code, Diagnostic};
use crate::store::{Database, Layout, Relation, Semiring};
use crate::value::Value;

pub use eei::{aggregate, eval_eei, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Naive,
    SemiNaive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub mode: Mode,
    pub strict: bool,
    pub max_iterations: usize,
    /// Record derivation counts and assert monotonic growth of set fixpoints.
    pub instrument: bool,
}

pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

impl Default for EvalConfig {
    fn default() -> Self {
        let max_iterations = std::env::var("HOJABR_MAX_ITERS")
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|n| *n >= 1)
            .unwrap_or(DEFAULT_MAX_ITERATIONS);
        EvalConfig {
            mode: Mode::SemiNaive,
            strict: false,
            max_iterations,
            instrument: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleStats {
    pub rule: usize,
    pub head: String,
    pub derivations: u64,
    pub enumerations: u64,
    pub output_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub rules: Vec<RuleStats>,
    /// Fixpoint rounds per stratum, the base stratum included.
    pub iterations: Vec<usize>,
    pub wall_time_ms: f64,
    #[serde(skip)]
    pub warnings: Vec<Diagnostic>,
}

impl RunReport {
    pub fn derivations(&self) -> u64 {
        self.rules.iter().map(|r| r.derivations).sum()
    }

    pub fn enumerations(&self) -> u64 {
        self.rules.iter().map(|r| r.enumerations).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Runner<'c> {
    checked: &'c Checked,
    cfg: &'c EvalConfig,
    db: Database,
    report: RunReport,
    decls: Vec<Constraint>,
}

/// Check and run a program.
pub fn run_program(p: &Program, db: Database, cfg: &EvalConfig) -> Result<(Database, RunReport), Vec<Diagnostic>> {
    let checked = check_program(p, &db, cfg.strict)?;
    let (db, mut report) = run(&checked, db, cfg).map_err(|d| vec![d])?;
    let mut warnings = checked.diagnostics.clone();
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok((db, report))
}

/// Run a checked program over `db`.
pub fn run(checked: &Checked, mut db: Database, cfg: &EvalConfig) -> Result<(Database, RunReport), Diagnostic> {
    let start = Instant::now();
    let decls = declarations(&checked.program, &db);
    // Literal shapes declared for stored relations become their shapes.
    for d in &decls {
        d.walk(&mut |c| {
            if let Constraint::Cei(call) = c {
                if let Some((name, shape)) = literal_card(call) {
                    if let Some(rel) = db.get(&name) {
                        let shape_mode = shape.len() >= 2 || rel.semiring() == Semiring::Real;
                        if shape_mode && rel.shape().is_none() && shape.len() == rel.arity() {
                            let mut r = (**rel).clone();
                            r.declare_shape(shape);
                            db.insert(name, r);
                        }
                    }
                }
            }
        });
    }
    let rules = checked
        .plans
        .iter()
        .map(|p| RuleStats {
            rule: p.rule,
            head: p.head.relation.clone(),
            ..RuleStats::default()
        })
        .collect();
    let mut runner = Runner {
        checked,
        cfg,
        db,
        report: RunReport {
            rules,
            iterations: vec![1],
            ..RunReport::default()
        },
        decls,
    };
    for stratum in &checked.strata.strata[1..] {
        let n = runner.stratum(stratum)?;
        runner.report.iterations.push(n);
    }
    let mut report = runner.report;
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((runner.db, report))
}

fn at(d: Diagnostic, checked: &Checked, rule: usize) -> Diagnostic {
    let r = &checked.program.rules[rule];
    d.with_rule(rule).at(r.loc.line, r.loc.col)
}

impl Runner<'_> {
    fn plan(&self, rule: usize) -> &RulePlan {
        &self.checked.plans[rule]
    }

    fn empty(&self, name: &str) -> Relation {
        let s = &self.checked.schemas[name];
        Relation::new(s.semiring, s.levels.clone())
    }

    fn current(&self, name: &str) -> Arc<Relation> {
        match self.db.get(name) {
            Some(r) => r.clone(),
            None => match self.checked.schemas.get(name) {
                Some(_) => Arc::new(self.empty(name)),
                None => Arc::new(Relation::flat(Semiring::Bool, 0)),
            },
        }
    }

    /// Evaluate one rule with the relation version chosen per use.
    fn resolve(&self, rule: usize, pick: &dyn Fn(usize, &RelUse) -> Arc<Relation>) -> Vec<Arc<Relation>> {
        self.checked.plans[rule].rels.iter().enumerate().map(|(i, u)| pick(i, u)).collect()
    }

    fn eval(&mut self, rule: usize, rels: Vec<Arc<Relation>>) -> Result<exec::Output, Diagnostic> {
        let plan = &self.checked.plans[rule];
        let semiring = self.checked.schemas[&plan.head.relation].semiring;
        let out = exec::eval_rule(plan, semiring, rels).map_err(|d| at(d, self.checked, rule))?;
        let stats = &mut self.report.rules[rule];
        stats.derivations += out.derivations;
        stats.enumerations += out.enumerations;
        if out.overlaps > 0 && self.cfg.strict && semiring != Semiring::Bool {
            self.report.warnings.push(at(
                Diagnostic::warning(
                    Code::OverlappingDisjuncts,
                    format!("{} bindings are produced by more than one disjunct", out.overlaps),
                ),
                self.checked,
                rule,
            ));
        }
        Ok(out)
    }

    fn stratum(&mut self, s: &Stratum) -> Result<usize, Diagnostic> {
        let declarative: Vec<usize> = s
            .rules
            .iter()
            .copied()
            .filter(|r| self.checked.program.rules[*r].action == Action::Assign)
            .collect();
        let imperative: Vec<usize> = s.rules.iter().copied().filter(|r| !declarative.contains(r)).collect();
        let heads: BTreeSet<String> = declarative
            .iter()
            .map(|r| self.plan(*r).head.relation.clone())
            .collect();
        let mut iterations = 1;
        if !declarative.is_empty() {
            let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            let mut caps: BTreeMap<String, usize> = BTreeMap::new();
            let result = if s.recursive {
                let (rels, n) = match self.cfg.mode {
                    Mode::Naive => self.naive(&declarative, &heads)?,
                    Mode::SemiNaive => self.semi_naive(&declarative, &heads)?,
                };
                iterations = n;
                rels
            } else {
                let mut rels: BTreeMap<String, Relation> = heads.iter().map(|h| (h.clone(), self.empty(h))).collect();
                for &r in &declarative {
                    let db = &self.db;
                    let schemas = &self.checked.schemas;
                    let current = |_: usize, u: &RelUse| -> Arc<Relation> {
                        db.get(&u.name).cloned().unwrap_or_else(|| {
                            let s = &schemas[&u.name];
                            Arc::new(Relation::new(s.semiring, s.levels.clone()))
                        })
                    };
                    let inputs = self.resolve(r, &current);
                    let out = self.eval(r, inputs)?;
                    let head = self.plan(r).head.relation.clone();
                    if let Some(sh) = out.shape {
                        shapes.insert(head.clone(), sh);
                    }
                    if let Some(c) = out.cap {
                        caps.insert(head.clone(), c);
                    }
                    merge_into(rels.get_mut(&head).unwrap(), &out.delta).map_err(|d| at(d, self.checked, r))?;
                }
                rels
            };
            for (name, mut rel) in result {
                let rule = declarative
                    .iter()
                    .copied()
                    .find(|r| self.plan(*r).head.relation == name)
                    .unwrap();
                rel = self.finish(rule, rel, shapes.get(&name), caps.get(&name).copied())?;
                self.db.insert(name, rel);
            }
        }
        for &r in &imperative {
            self.imperative(r)?;
        }
        self.verify(s, &declarative)?;
        for r in &s.rules {
            let name = &self.plan(*r).head.relation;
            self.report.rules[*r].output_size = self.db.get(name).map_or(0, |x| x.len());
        }
        Ok(iterations)
    }

    /// Apply head annotations: ordered layout, top-k cap, dense shape.
    fn finish(
        &self,
        rule: usize,
        mut rel: Relation,
        shape: Option<&Vec<usize>>,
        cap: Option<usize>,
    ) -> Result<Relation, Diagnostic> {
        let head = &self.plan(rule).head;
        let wrap = |e: crate::store::StoreError| at(Diagnostic::from(e), self.checked, rule);
        if let Some(cols) = &head.order {
            rel = rel.build_layout(Layout::Ordered(cols.clone())).map_err(wrap)?;
        }
        if let Some(k) = cap {
            rel.truncate(k);
        }
        if let Some(shape) = shape {
            if shape.len() != rel.arity() {
                return Err(at(
                    Diagnostic::error(
                        Code::Shape,
                        format!("card gives {} sizes for {} of arity {}", shape.len(), head.relation, rel.arity()),
                    ),
                    self.checked,
                    rule,
                ));
            }
            rel.declare_shape(shape.clone());
            if rel.semiring() == Semiring::Real {
                rel = rel.build_layout(Layout::Dense).map_err(wrap)?;
            }
        }
        Ok(rel)
    }

    fn naive(
        &mut self,
        rules: &[usize],
        heads: &BTreeSet<String>,
    ) -> Result<(BTreeMap<String, Relation>, usize), Diagnostic> {
        let mut total: BTreeMap<String, Arc<Relation>> =
            heads.iter().map(|h| (h.clone(), Arc::new(self.empty(h)))).collect();
        for round in 1..=self.cfg.max_iterations {
            let mut next: BTreeMap<String, Relation> = heads.iter().map(|h| (h.clone(), self.empty(h))).collect();
            for &r in rules {
                let (db, t) = (&self.db, &total);
                let pick = |_: usize, u: &RelUse| t.get(&u.name).cloned().unwrap_or_else(|| fetch(db, &u.name));
                let rels = self.resolve(r, &pick);
                let out = self.eval(r, rels)?;
                let head = &self.plan(r).head.relation;
                merge_into(next.get_mut(head).unwrap(), &out.delta).map_err(|d| at(d, self.checked, r))?;
            }
            if self.cfg.instrument {
                self.assert_monotone(&total, &next)?;
            }
            let unchanged = heads.iter().all(|h| next[h].same_content(&total[h]));
            if unchanged {
                return Ok((next, round));
            }
            total = next.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
        }
        Err(self.non_termination(heads))
    }

    fn semi_naive(
        &mut self,
        rules: &[usize],
        heads: &BTreeSet<String>,
    ) -> Result<(BTreeMap<String, Relation>, usize), Diagnostic> {
        let empty: BTreeMap<String, Arc<Relation>> =
            heads.iter().map(|h| (h.clone(), Arc::new(self.empty(h)))).collect();
        // Round 1: every rule over empty recursive relations.
        let mut delta: BTreeMap<String, Relation> = heads.iter().map(|h| (h.clone(), self.empty(h))).collect();
        for &r in rules {
            let (db, e) = (&self.db, &empty);
            let pick = |_: usize, u: &RelUse| e.get(&u.name).cloned().unwrap_or_else(|| fetch(db, &u.name));
            let rels = self.resolve(r, &pick);
                let out = self.eval(r, rels)?;
            let head = &self.plan(r).head.relation;
            merge_into(delta.get_mut(head).unwrap(), &out.delta).map_err(|d| at(d, self.checked, r))?;
        }
        let mut old = empty;
        let mut total: BTreeMap<String, Arc<Relation>> = delta.iter().map(|(k, v)| (k.clone(), Arc::new(v.clone()))).collect();
        let mut delta: BTreeMap<String, Arc<Relation>> = delta.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();

        for round in 2..=self.cfg.max_iterations + 1 {
            if delta.values().all(|d| d.is_empty()) {
                let out = total.into_iter().map(|(k, v)| (k, Arc::unwrap_or_clone(v))).collect();
                return Ok((out, round - 1));
            }
            if round > self.cfg.max_iterations {
                break;
            }
            let mut produced: BTreeMap<String, Relation> = heads.iter().map(|h| (h.clone(), self.empty(h))).collect();
            for &r in rules {
                let plan = self.plan(r);
                let recursive_uses: Vec<usize> = plan
                    .rels
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| heads.contains(&u.name))
                    .map(|(i, _)| i)
                    .collect();
                if recursive_uses.is_empty() {
                    continue;
                }
                let head = plan.head.relation.clone();
                let fallback = recursive_uses.iter().any(|i| plan.rels[*i].role != Role::Generator);
                let variants: Vec<Option<usize>> = if fallback {
                    vec![None]
                } else {
                    recursive_uses.iter().map(|i| Some(*i)).collect()
                };
                for v in variants {
                    let (db, o, d, t) = (&self.db, &old, &delta, &total);
                    let pick = |i: usize, u: &RelUse| -> Arc<Relation> {
                        let version = match v {
                            None => t,
                            Some(j) if i < j => o,
                            Some(j) if i == j => d,
                            Some(_) => t,
                        };
                        version.get(&u.name).cloned().unwrap_or_else(|| fetch(db, &u.name))
                    };
                    let rels = self.resolve(r, &pick);
                let out = self.eval(r, rels)?;
                    merge_into(produced.get_mut(&head).unwrap(), &out.delta).map_err(|d| at(d, self.checked, r))?;
                }
            }
            let mut next_total = BTreeMap::new();
            let mut next_delta = BTreeMap::new();
            for h in heads {
                let mut fresh = produced.remove(h).unwrap();
                let t = &total[h];
                if t.semiring() == Semiring::Bool {
                    let known: Vec<_> = fresh.entries().into_iter().filter(|(k, _)| t.contains(k)).collect();
                    for (k, _) in known {
                        fresh.remove(&k);
                    }
                }
                let mut merged = (**t).clone();
                merge_into(&mut merged, &fresh)?;
                next_total.insert(h.clone(), Arc::new(merged));
                next_delta.insert(h.clone(), Arc::new(fresh));
            }
            if self.cfg.instrument {
                let nt: BTreeMap<String, Relation> =
                    next_total.iter().map(|(k, v): (&String, &Arc<Relation>)| (k.clone(), (**v).clone())).collect();
                self.assert_monotone(&total, &nt)?;
            }
            old = std::mem::replace(&mut total, next_total);
            delta = next_delta;
        }
        Err(self.non_termination(heads))
    }

    fn assert_monotone(
        &self,
        before: &BTreeMap<String, Arc<Relation>>,
        after: &BTreeMap<String, Relation>,
    ) -> Result<(), Diagnostic> {
        for (name, old) in before {
            if old.semiring() != Semiring::Bool {
                continue;
            }
            if let Some((k, _)) = old.entries().into_iter().find(|(k, _)| !after[name].contains(k)) {
                return Err(Diagnostic::error(
                    Code::Runtime,
                    format!("fixpoint lost {name}{} between rounds", crate::store::show_key(&k)),
                ));
            }
        }
        Ok(())
    }

    fn non_termination(&self, heads: &BTreeSet<String>) -> Diagnostic {
        let names: Vec<&str> = heads.iter().map(String::as_str).collect();
        Diagnostic::error(
            Code::NonTermination,
            format!(
                "no fixpoint for {} within {} iterations",
                names.join(", "),
                self.cfg.max_iterations
            ),
        )
    }

    fn imperative(&mut self, r: usize) -> Result<(), Diagnostic> {
        let (db, schemas) = (&self.db, &self.checked.schemas);
        let pick = |_: usize, u: &RelUse| -> Arc<Relation> {
            db.get(&u.name).cloned().unwrap_or_else(|| {
                let s = &schemas[&u.name];
                Arc::new(Relation::new(s.semiring, s.levels.clone()))
            })
        };
        let rels = self.resolve(r, &pick);
                let out = self.eval(r, rels)?;
        let name = self.plan(r).head.relation.clone();
        let existing = self.current(&name);
        let action = self.checked.program.rules[r].action;
        let wrap = |e: crate::store::StoreError| at(Diagnostic::from(e), self.checked, r);
        let updated = match action {
            Action::Append => {
                let mut x = (*existing).clone();
                merge_into(&mut x, &out.delta).map_err(|d| at(d, self.checked, r))?;
                x
            }
            Action::Remove => {
                let mut x = (*existing).clone();
                for (k, v) in out.delta.entries() {
                    if x.semiring() == Semiring::Real {
                        let neg = Value::Float(-v.as_f64().unwrap_or(0.0));
                        x.merge(k, neg).map_err(wrap)?;
                    } else {
                        x.remove(&k);
                    }
                }
                x
            }
            Action::Replace => {
                let mut x = out.delta;
                if existing.layout() != x.layout() && !matches!(existing.layout(), Layout::Dense) {
                    x = x.build_layout(existing.layout().clone()).map_err(wrap)?;
                }
                x
            }
            Action::Assign => unreachable!("declarative rules are not actions"),
        };
        let updated = self.finish(r, updated, out.shape.as_ref(), out.cap)?;
        self.db.insert(name, updated);
        Ok(())
    }

    /// Integrity of relations derived in this stratum.
    fn verify(&mut self, s: &Stratum, rules: &[usize]) -> Result<(), Diagnostic> {
        let names: BTreeSet<&String> = s.relations.iter().collect();
        let mut decls: Vec<Constraint> = self
            .decls
            .iter()
            .filter(|d| mentions(d, &names))
            .cloned()
            .collect();
        for r in rules {
            decls.extend(self.plan(*r).head.assertions.iter().cloned());
        }
        for d in &decls {
            for v in check_declaration(d, &self.db) {
                let diag = v.to_diagnostic(self.cfg.strict);
                if diag.is_error() {
                    return Err(diag);
                }
                self.report.warnings.push(diag);
            }
        }
        Ok(())
    }
}

fn mentions(c: &Constraint, names: &BTreeSet<&String>) -> bool {
    let mut hit = false;
    c.walk(&mut |c| match c {
        Constraint::Atom(a) => hit |= names.contains(&a.relation),
        Constraint::Cei(call) => hit |= call.relation_arg().is_some_and(|r| names.contains(&r.to_string())),
        _ => {}
    });
    hit
}

fn fetch(db: &Database, name: &str) -> Arc<Relation> {
    db.get(name).cloned().unwrap_or_else(|| Arc::new(Relation::flat(Semiring::Bool, 0)))
}

fn merge_into(target: &mut Relation, delta: &Relation) -> Result<(), Diagnostic> {
    for (k, v) in delta.entries() {
        target.merge(k, v).map_err(Diagnostic::from)?;
    }
    Ok(())
}

/// Relations in name order, one line each, entries in layout order.
pub fn dump(db: &Database) -> String {
    let mut out = String::new();
    for (name, rel) in db.relations() {
        out.push_str(&format!("{name} = {rel}\n"));
    }
    out
}
