//! Join strategies as rewrites from flat conjunctive rules into plans over
//! hash tries, sorted tries and sub-relation bindings, and the way back.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{require, Names};
use crate::ast::*;
use crate::diag::{Code, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JoinStrategy {
    Nlj,
    Hash,
    SortMerge,
    Generic,
    Free,
    Diamond,
}

impl JoinStrategy {
    pub const ALL: [JoinStrategy; 6] = [
        JoinStrategy::Nlj,
        JoinStrategy::Hash,
        JoinStrategy::SortMerge,
        JoinStrategy::Generic,
        JoinStrategy::Free,
        JoinStrategy::Diamond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JoinStrategy::Nlj => "nlj",
            JoinStrategy::Hash => "hash",
            JoinStrategy::SortMerge => "sort-merge",
            JoinStrategy::Generic => "generic",
            JoinStrategy::Free => "free",
            JoinStrategy::Diamond => "diamond",
        }
    }
}

impl fmt::Display for JoinStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JoinStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        JoinStrategy::ALL
            .into_iter()
            .find(|j| j.name() == s)
            .ok_or_else(|| format!("unknown join strategy `{s}`"))
    }
}

/// A join lowering pass. Generated relation names start with `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowerJoin {
    pub strategy: JoinStrategy,
    pub prefix: String,
}

pub fn lower_join(p: &Program, strategy: JoinStrategy) -> Result<Program, Vec<Diagnostic>> {
    LowerJoin {
        strategy,
        prefix: String::new(),
    }
    .apply(p)
}

fn var_order(rule: &Rule) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    let mut note = |e: &Expr| {
        e.walk(&mut |x| {
            if let Expr::Var(v) = x {
                if !order.contains(v) {
                    order.push(v.clone());
                }
            }
        })
    };
    rule.head.flat_args().for_each(&mut note);
    rule.expr.iter().for_each(&mut note);
    rule.constraint.exprs().into_iter().for_each(note);
    order
}

/// Merge variables equated by top-level `x = y` conjuncts, keeping the one
/// that occurs first.
fn unify_equalities(rule: &Rule) -> Rule {
    let order = var_order(rule);
    let rank = |v: &str| order.iter().position(|o| o == v).unwrap_or(usize::MAX);
    let mut rep: BTreeMap<String, String> = BTreeMap::new();
    fn find(rep: &BTreeMap<String, String>, v: &str) -> String {
        let mut v = v.to_string();
        while let Some(next) = rep.get(&v) {
            v = next.clone();
        }
        v
    }
    let mut kept = Vec::new();
    for c in rule.constraint.conjuncts() {
        if let Constraint::Cmp(Expr::Var(a), CmpOp::Eq, Expr::Var(b)) = c.ungroup() {
            let (ra, rb) = (find(&rep, a), find(&rep, b));
            if ra != rb {
                let (keep, drop) = if rank(&ra) <= rank(&rb) { (ra, rb) } else { (rb, ra) };
                rep.insert(drop, keep);
            }
            continue;
        }
        kept.push(c.clone());
    }
    let map: BTreeMap<String, String> = rep.keys().map(|k| (k.clone(), find(&rep, k))).collect();
    let mut out = Rule {
        constraint: Constraint::and(kept),
        ..rule.clone()
    };
    out = out.rename(&map);
    out
}

fn atom_vars(a: &Access) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in a.flat_args() {
        if let Some(v) = e.as_var() {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
    }
    out
}

fn vars(vs: &[String]) -> Vec<Expr> {
    vs.iter().map(Expr::var).collect()
}

fn access(rel: &str, lists: Vec<Vec<Expr>>) -> Constraint {
    Constraint::Atom(Access::new(rel, lists))
}

fn bind(relvar: &str, rel: &str, key: &[String]) -> Constraint {
    Constraint::Nested(Box::new(Rule::set(Access::new(relvar, vec![]), access(rel, vec![vars(key)]))))
}

struct Pass<'a> {
    cfg: &'a LowerJoin,
    names: Names,
    /// Canonical build rule text -> generated relation name.
    builds: BTreeMap<String, String>,
    out: Vec<Rule>,
}

impl Pass<'_> {
    /// Name of the relation `levels := atom` (plus `order` of the first
    /// level when sorted), emitting the build rule on first use.
    fn build(&mut self, atom: &Access, levels: Vec<Vec<String>>, sorted: bool, suffix: &str) -> String {
        let mut parts = vec![Constraint::Atom(atom.clone())];
        if sorted {
            parts.push(Constraint::cei("order", vec![vars(&levels[0])]));
        }
        let head = |name: &str| Access::new(name, levels.iter().map(|l| vars(l)).collect());
        let body = Constraint::and(parts);
        let probe = Rule::set(head("_"), body.clone());
        let key = super::canonical(&Program::new(vec![probe])).rules[0].to_string();
        if let Some(name) = self.builds.get(&key) {
            return name.clone();
        }
        let name = self.names.fresh(&format!("{}{}{suffix}", self.cfg.prefix, atom.relation));
        self.builds.insert(key, name.clone());
        self.out.push(Rule::set(head(&name), body));
        name
    }

    fn rule(&mut self, rule: &Rule) -> Result<Rule, Diagnostic> {
        let rule = unify_equalities(rule);
        let mut atoms = Vec::new();
        let mut rest = Vec::new();
        for c in rule.constraint.conjuncts() {
            match c {
                Constraint::Atom(a) => atoms.push(a.clone()),
                other => rest.push(other.clone()),
            }
        }
        let order = var_order(&rule);
        let mut count: BTreeMap<String, usize> = BTreeMap::new();
        for a in &atoms {
            for v in atom_vars(a) {
                *count.entry(v).or_default() += 1;
            }
        }
        let join_vars: Vec<String> = order.iter().filter(|v| count.get(*v).copied().unwrap_or(0) >= 2).cloned().collect();
        let mut local = Names {
            taken: self.names.taken.clone(),
        };
        let body = match self.cfg.strategy {
            JoinStrategy::Nlj => {
                let mut seen = BTreeSet::new();
                let mut eqs = Vec::new();
                let mut flat = Vec::new();
                for a in &atoms {
                    let mut renamed = BTreeMap::new();
                    for v in atom_vars(a) {
                        if !seen.insert(v.clone()) {
                            let fresh = local.fresh_var(&v);
                            eqs.push(Constraint::group(Constraint::cmp(Expr::var(&v), CmpOp::Eq, Expr::var(&fresh))));
                            renamed.insert(v, fresh);
                        }
                    }
                    flat.push(Constraint::Atom(a.rename(&renamed)));
                }
                flat.extend(eqs);
                flat
            }
            JoinStrategy::Hash | JoinStrategy::SortMerge => {
                let sorted = self.cfg.strategy == JoinStrategy::SortMerge;
                let suffix = if sorted { "o" } else { "h" };
                let mut probe = Vec::new();
                for a in &atoms {
                    let own = atom_vars(a);
                    let key: Vec<String> = join_vars.iter().filter(|v| own.contains(v)).cloned().collect();
                    let other: Vec<String> = own.iter().filter(|v| !key.contains(v)).cloned().collect();
                    if key.is_empty() || other.is_empty() {
                        probe.push(Constraint::Atom(a.clone()));
                        continue;
                    }
                    let name = self.build(a, vec![key.clone(), other.clone()], sorted, suffix);
                    probe.push(access(&name, vec![vars(&key), vars(&other)]));
                }
                probe
            }
            JoinStrategy::Generic => self.generic(&atoms, &join_vars, &mut local),
            JoinStrategy::Free | JoinStrategy::Diamond => {
                let diamond = self.cfg.strategy == JoinStrategy::Diamond;
                let center = if diamond {
                    if atoms.len() < 3 {
                        return Err(Diagnostic::error(
                            Code::StrategyInapplicable,
                            format!("diamond join needs at least 3 relations, rule has {}", atoms.len()),
                        ));
                    }
                    let shares = |a: &Access, b: &Access| atom_vars(a).iter().any(|v| atom_vars(b).contains(v));
                    (0..atoms.len())
                        .find(|&i| atoms.iter().enumerate().all(|(j, b)| i == j || shares(&atoms[i], b)))
                        .ok_or_else(|| {
                            Diagnostic::error(
                                Code::StrategyInapplicable,
                                "diamond join needs a relation sharing a variable with every other",
                            )
                        })?
                } else if atoms.is_empty() {
                    return Ok(rule);
                } else {
                    0
                };
                self.cover(&atoms, center, &order, &mut local)
            }
        };
        let mut body = body;
        body.extend(rest);
        Ok(Rule {
            constraint: Constraint::and(body),
            ..rule
        })
    }

    /// Scan `atoms[center]` flat, look up sub-relations of the others by the
    /// variables it binds, then expand them.
    fn cover(&mut self, atoms: &[Access], center: usize, order: &[String], local: &mut Names) -> Vec<Constraint> {
        let bound = atom_vars(&atoms[center]);
        let mut lookups = Vec::new();
        let mut expands = Vec::new();
        for (i, a) in atoms.iter().enumerate() {
            if i == center {
                continue;
            }
            let own = atom_vars(a);
            let key: Vec<String> = order.iter().filter(|v| own.contains(v) && bound.contains(v)).cloned().collect();
            let other: Vec<String> = own.iter().filter(|v| !key.contains(v)).cloned().collect();
            if key.is_empty() || other.is_empty() {
                lookups.push(Constraint::Atom(a.clone()));
                continue;
            }
            let name = self.build(a, vec![key.clone(), other.clone()], false, "h");
            let relvar = local.fresh(&format!("{}{}", a.relation, key.concat()));
            lookups.push(bind(&relvar, &name, &key));
            expands.push(access(&relvar, vec![vars(&other)]));
        }
        let mut body = vec![Constraint::Atom(atoms[center].clone())];
        body.extend(lookups);
        body.extend(expands);
        body
    }

    /// One trie level per join variable in textual order, sub-relations
    /// bound as each variable is fixed.
    fn generic(&mut self, atoms: &[Access], join_vars: &[String], local: &mut Names) -> Vec<Constraint> {
        struct Trie {
            handle: String,
            levels: Vec<String>,
            rest: Vec<String>,
            depth: usize,
        }
        let mut tries: Vec<Option<Trie>> = Vec::new();
        let mut flat = Vec::new();
        for a in atoms {
            let own = atom_vars(a);
            let levels: Vec<String> = join_vars.iter().filter(|v| own.contains(v)).cloned().collect();
            if levels.is_empty() {
                tries.push(None);
                flat.push(Constraint::Atom(a.clone()));
                continue;
            }
            let rest: Vec<String> = own.iter().filter(|v| !levels.contains(v)).cloned().collect();
            let plain = a.args.len() == 1 && a.args[0].len() == 1 && rest.is_empty();
            let handle = if plain {
                a.relation.clone()
            } else {
                let mut lv: Vec<Vec<String>> = levels.iter().map(|v| vec![v.clone()]).collect();
                if !rest.is_empty() {
                    lv.push(rest.clone());
                }
                self.build(a, lv, false, "h")
            };
            tries.push(Some(Trie {
                handle,
                levels,
                rest,
                depth: 0,
            }));
        }
        let mut body = Vec::new();
        for x in join_vars {
            let members: Vec<usize> = (0..atoms.len())
                .filter(|&i| tries[i].as_ref().is_some_and(|t| t.levels.get(t.depth) == Some(x)))
                .collect();
            let Some(&first) = members.first() else { continue };
            let probe = |t: &Trie| access(&t.handle, vec![vec![Expr::var(x)]]);
            let mut bindings = Vec::new();
            let mut checks = Vec::new();
            body.push(probe(tries[first].as_ref().unwrap()));
            for &i in &members {
                let t = tries[i].as_mut().unwrap();
                let more = t.depth + 1 < t.levels.len() || !t.rest.is_empty();
                if more {
                    let base = if t.depth == 0 { atoms[i].relation.clone() } else { t.handle.clone() };
                    let relvar = local.fresh(&format!("{base}{x}"));
                    bindings.push(bind(&relvar, &t.handle, std::slice::from_ref(x)));
                    t.handle = relvar;
                } else if i != first {
                    checks.push(probe(t));
                }
                t.depth += 1;
            }
            body.extend(bindings);
            body.extend(checks);
        }
        for t in tries.iter().flatten() {
            if !t.rest.is_empty() {
                body.push(access(&t.handle, vec![vars(&t.rest)]));
            }
        }
        body.extend(flat);
        body
    }
}

impl LowerJoin {
    pub fn apply(&self, p: &Program) -> Result<Program, Vec<Diagnostic>> {
        let p = desugar(p).map_err(|d| vec![d])?;
        require(&p, "logical-join")?;
        let mut pass = Pass {
            cfg: self,
            names: Names::of_program(&p),
            builds: BTreeMap::new(),
            out: Vec::new(),
        };
        let mut errors = Vec::new();
        for (i, r) in p.rules.iter().enumerate() {
            match pass.rule(r) {
                Ok(lowered) => pass.out.push(lowered),
                Err(d) => errors.push(d.with_rule(i).at(r.loc.line, r.loc.col)),
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Program {
            declarations: p.declarations,
            rules: pass.out,
        })
    }
}

struct Build {
    levels: Vec<Vec<String>>,
    atom: Access,
}

impl Build {
    fn width(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// The source atom with head positions bound to `args`; missing
    /// positions become wildcards.
    fn instantiate(&self, args: &[Expr]) -> Access {
        let map: BTreeMap<&String, &Expr> = self.levels.iter().flatten().zip(args).collect();
        let lists = self
            .atom
            .args
            .iter()
            .map(|l| {
                l.iter()
                    .map(|e| match e.as_var() {
                        Some(v) => map.get(&v.to_string()).map_or(Expr::Wildcard, |x| (*x).clone()),
                        None => e.clone(),
                    })
                    .collect()
            })
            .collect();
        Access::new(self.atom.relation.clone(), lists)
    }
}

/// Recognize `X(k..)(r..) := R(args)` build rules (optionally sorted).
fn recognize_build(p: &Program, r: &Rule) -> Option<Build> {
    if r.expr.is_some() || r.action != Action::Assign || r.head.args.len() < 2 {
        return None;
    }
    if p.rules.iter().filter(|o| o.head.relation == r.head.relation).count() != 1 {
        return None;
    }
    let mut atom = None;
    let mut order_ok = true;
    for c in r.constraint.conjuncts() {
        match c {
            Constraint::Atom(a) if atom.is_none() && a.args.len() == 1 => atom = Some(a.clone()),
            Constraint::Cei(call) if call.name == "order" => {
                order_ok &= call.args.iter().flatten().all(|e| e.as_var().is_some());
            }
            _ => return None,
        }
    }
    let atom = atom?;
    let mut levels = Vec::new();
    let mut seen = BTreeSet::new();
    for l in &r.head.args {
        let mut names = Vec::new();
        for e in l {
            let v = e.as_var()?.to_string();
            if !seen.insert(v.clone()) {
                return None;
            }
            names.push(v);
        }
        levels.push(names);
    }
    let atom_set: BTreeSet<String> = atom_vars(&atom).into_iter().collect();
    (order_ok && atom_set == seen).then_some(Build { levels, atom })
}

/// Undo join lowerings whose shape is recognized: build rules are inlined
/// into their consumers and dropped, and explicit variable equalities are
/// merged.
pub fn lift(p: &Program) -> Result<Program, Vec<Diagnostic>> {
    let p = desugar(p).map_err(|d| vec![d])?;
    require(&p, "physical-join")?;
    let builds: BTreeMap<String, Build> = p
        .rules
        .iter()
        .filter_map(|r| recognize_build(&p, r).map(|b| (r.head.relation.clone(), b)))
        .collect();
    let mut rules = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in p.rules.iter().enumerate() {
        if builds.contains_key(&r.head.relation) {
            rules.push(None);
            continue;
        }
        match lift_rule(r, &builds) {
            Ok(l) => rules.push(Some(sort_atoms(unify_equalities(&l)))),
            Err(d) => errors.push(d.with_rule(i).at(r.loc.line, r.loc.col)),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let used: BTreeSet<String> = rules
        .iter()
        .flatten()
        .flat_map(|r| {
            let mut names = Vec::new();
            r.constraint.walk(&mut |c| {
                if let Constraint::Atom(a) = c {
                    names.push(a.relation.clone());
                }
            });
            names
        })
        .collect();
    let rules = p
        .rules
        .iter()
        .zip(rules)
        .filter_map(|(orig, lifted)| match lifted {
            Some(l) => Some(l),
            None if used.contains(&orig.head.relation) => Some(orig.clone()),
            None => None,
        })
        .collect();
    Ok(Program {
        declarations: p.declarations,
        rules,
    })
}

/// Lowerings reorder atoms freely, so lifted bodies list atoms by relation
/// name and arguments, ahead of the remaining conjuncts.
fn sort_atoms(r: Rule) -> Rule {
    let mut parts: Vec<Constraint> = r.constraint.conjuncts().into_iter().cloned().collect();
    parts.sort_by_cached_key(|c| match c {
        Constraint::Atom(a) => (0, a.relation.clone(), a.to_string()),
        _ => (1, String::new(), String::new()),
    });
    Rule {
        constraint: Constraint::and(parts),
        ..r
    }
}

fn lift_rule(r: &Rule, builds: &BTreeMap<String, Build>) -> Result<Rule, Diagnostic> {
    // relation variable -> (build, bound prefix, position of first mention)
    let mut relvars: BTreeMap<String, (String, Vec<Expr>, usize)> = BTreeMap::new();
    enum Item {
        Keep(Constraint),
        Full(Access),
        Partial(String, Vec<Expr>),
    }
    let mut items: Vec<(usize, Item)> = Vec::new();
    let resolve = |relvars: &BTreeMap<String, (String, Vec<Expr>, usize)>, a: &Access, pos: usize| {
        if let Some((b, prefix, first)) = relvars.get(&a.relation) {
            let mut args = prefix.clone();
            args.extend(a.flat_args().cloned());
            Some((b.clone(), args, *first))
        } else if builds.contains_key(&a.relation) {
            Some((a.relation.clone(), a.flat_args().cloned().collect(), pos))
        } else {
            None
        }
    };
    let unrecognized = |what: &Constraint| Diagnostic::error(Code::Lift, format!("unrecognized encoding: {what}"));
    for (pos, c) in r.constraint.conjuncts().into_iter().enumerate() {
        match c {
            Constraint::Nested(n) if n.head.args.is_empty() => {
                let Constraint::Atom(a) = n.constraint.ungroup() else {
                    return Err(unrecognized(c));
                };
                let (b, args, first) = resolve(&relvars, a, pos).ok_or_else(|| unrecognized(c))?;
                items.push((first, Item::Partial(b.clone(), args.clone())));
                relvars.insert(n.head.relation.clone(), (b, args, first));
            }
            Constraint::Atom(a) => match resolve(&relvars, a, pos) {
                Some((b, args, first)) => {
                    let build = &builds[&b];
                    if args.len() == build.width() {
                        items.push((first, Item::Full(build.instantiate(&args))));
                    } else {
                        items.push((first, Item::Partial(b, args)));
                    }
                }
                None => items.push((pos, Item::Keep(c.clone()))),
            },
            other => items.push((pos, Item::Keep(other.clone()))),
        }
    }
    // A partial access is implied by any full one extending it.
    let fulls: Vec<(String, Vec<Expr>)> = r
        .constraint
        .conjuncts()
        .into_iter()
        .filter_map(|c| match c {
            Constraint::Atom(a) => resolve(&relvars, a, 0).filter(|(b, args, _)| args.len() == builds[b].width()),
            _ => None,
        })
        .map(|(b, args, _)| (b, args))
        .collect();
    let mut seen_partial: Vec<(String, Vec<Expr>)> = Vec::new();
    let mut body: Vec<(usize, Constraint)> = Vec::new();
    for (pos, item) in items {
        match item {
            Item::Keep(c) => body.push((pos, c)),
            Item::Full(a) => body.push((pos, Constraint::Atom(a))),
            Item::Partial(b, args) => {
                let implied = fulls.iter().any(|(fb, fa)| *fb == b && fa.starts_with(&args));
                let key = (b.clone(), args.clone());
                if !implied && !seen_partial.contains(&key) {
                    seen_partial.push(key);
                    body.push((pos, Constraint::Atom(builds[&b].instantiate(&args))));
                }
            }
        }
    }
    body.sort_by_key(|(pos, _)| *pos);
    Ok(Rule {
        constraint: Constraint::and(body.into_iter().map(|(_, c)| c)),
        ..r.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slang::canonical;
    use crate::syntax::parse;

    fn lowered(src: &str, s: JoinStrategy) -> Program {
        lower_join(&parse(src).unwrap(), s).unwrap()
    }

    fn same(a: &Program, b: &str) {
        let b = desugar(&parse(b).unwrap()).unwrap();
        assert_eq!(canonical(&desugar(a).unwrap()), canonical(&b), "\n{a}\nvs\n{}", crate::syntax::print(&b));
    }

    const BINARY: &str = "Q(a,b,c) := R(a,b),S(b',c),(b=b')";
    const TRIANGLE: &str = "Q(x, a, b) := R(x, a), S(x, b), T(x)";
    const DIAMOND: &str = "Q(a,b,x1,x2,x3) := R1(a,b,x1), R2(a,x2), R3(b,x3)";

    #[test]
    fn binary_joins() {
        same(&lowered(BINARY, JoinStrategy::Nlj), BINARY);
        same(
            &lowered(BINARY, JoinStrategy::Hash),
            "Rh(b)(a) := R(a,b)\nSh(b)(c) := S(b,c)\nQ(a,b,c) := Rh(b)(a),Sh(b)(c)",
        );
        same(
            &lowered(BINARY, JoinStrategy::SortMerge),
            "Ro(b)(a) := R(a,b), order(b)\nSo(b)(c) := S(b,c), order(b)\nQ(a,b,c) := Ro(b)(a), So(b)(c)",
        );
    }

    #[test]
    fn trie_joins() {
        same(
            &lowered(TRIANGLE, JoinStrategy::Generic),
            "Rh(x)(a) := R(x, a)\nSh(x)(b) := S(x, b)\n\
             Q(x,a,b) := Rh(x), (Rx:=Rh(x)), (Sx:=Sh(x)), T(x), Rx(a), Sx(b)",
        );
        same(
            &lowered(TRIANGLE, JoinStrategy::Free),
            "Sh(x)(b) := S(x, b)\nQ(x,a,b) := R(x, a), (Sx := Sh(x)), T(x), Sx(b)",
        );
        same(
            &lowered(DIAMOND, JoinStrategy::Diamond),
            "R2h(a)(x2) := R2(a, x2)\nR3h(b)(x3) := R3(b, x3)\n\
             Q(a,b,x1,x2,x3) := R1(a,b,x1), (R2a:=R2h(a)), (R3b:=R3h(b)), R2a(x2), R3b(x3)",
        );
    }

    #[test]
    fn diamond_needs_three_relations() {
        let e = lower_join(&parse(BINARY).unwrap(), JoinStrategy::Diamond).unwrap_err();
        assert_eq!(e[0].code, Code::StrategyInapplicable);
    }

    #[test]
    fn builds_are_shared_and_names_fresh() {
        let src = "Rh(z) := R(z, z)\nQ(a,c) := R(a,b), S(b,c)\nP(a,c) := R(a,b), S(b,c), a < c";
        let p = lowered(src, JoinStrategy::Hash);
        let heads: Vec<&str> = p.rules.iter().map(|r| r.head.relation.as_str()).collect();
        assert_eq!(heads, ["Rh", "Rh2", "Sh", "Q", "P"]);
        let prefixed = LowerJoin {
            strategy: JoinStrategy::Hash,
            prefix: "j_".into(),
        }
        .apply(&parse(BINARY).unwrap())
        .unwrap();
        assert_eq!(prefixed.rules[0].head.relation, "j_Rh");
    }

    #[test]
    fn lowering_outputs_lift_back() {
        for (src, strategies) in [
            (BINARY, &JoinStrategy::ALL[..5]),
            (TRIANGLE, &JoinStrategy::ALL[..5]),
            (DIAMOND, &JoinStrategy::ALL[..]),
        ] {
            let logical = lift(&parse(src).unwrap()).unwrap();
            for s in strategies {
                let low = lowered(src, *s);
                assert!(require(&low, "physical-join").is_ok(), "{s}");
                let back = lift(&low).unwrap();
                assert_eq!(canonical(&back), canonical(&logical), "{s}:\n{back}");
            }
        }
    }

    #[test]
    fn lift_rejects_unknown_bindings() {
        let p = parse("Q(a) := (Rx := Foo(a)), Rx(a)").unwrap();
        assert_eq!(lift(&p).unwrap_err()[0].code, Code::Lift);
    }
}
