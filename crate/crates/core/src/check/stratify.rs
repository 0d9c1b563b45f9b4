//! Dependency graph over head relations and its partition into strata.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::EdgeRef;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::store::Semiring;

use super::schema::Schemas;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Positive,
    Negative,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dependency {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    pub rule: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub relations: Vec<String>,
    /// Rule indices in textual order.
    pub rules: Vec<usize>,
    pub recursive: bool,
}

/// Stratum 0 holds the stored relations and has no rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratification {
    pub strata: Vec<Stratum>,
    pub edges: Vec<Dependency>,
}

/// Relations a rule reads, with the kind of dependency each read induces.
pub fn dependencies(rule: &Rule) -> Vec<(String, EdgeKind)> {
    let aggregate_head = matches!(&rule.expr, Some(Expr::Call(n, _)) if AGGREGATE_NAMES.contains(&n.as_str()));
    let relvars = relation_variables(&rule.constraint);
    let mut out = Vec::new();
    let positive = if aggregate_head { EdgeKind::Aggregate } else { EdgeKind::Positive };
    let mut push = |name: &str, kind: EdgeKind| {
        if !relvars.contains(name) {
            out.push((name.to_string(), kind));
        }
    };
    fn exprs_reads(e: &Expr, kind: EdgeKind, push: &mut dyn FnMut(&str, EdgeKind)) {
        for a in e.accesses() {
            push(&a.relation, kind);
        }
    }
    fn go(c: &Constraint, kind: EdgeKind, head: &str, push: &mut dyn FnMut(&str, EdgeKind)) {
        match c {
            Constraint::And(ps) | Constraint::Or(ps) => ps.iter().for_each(|p| go(p, kind, head, push)),
            Constraint::Group(c) => go(c, kind, head, push),
            Constraint::Not(c) => go(c, EdgeKind::Negative, head, push),
            Constraint::Atom(a) => {
                push(&a.relation, kind);
                a.flat_args().for_each(|e| exprs_reads(e, kind, push));
            }
            Constraint::Nested(r) => {
                r.head.flat_args().for_each(|e| exprs_reads(e, kind, push));
                r.expr.iter().for_each(|e| exprs_reads(e, kind, push));
                go(&r.constraint, kind, head, push);
            }
            Constraint::Cei(call) => {
                if call.name == "card" {
                    // card on the head relation annotates the output.
                    if let Some(rel) = call.relation_arg().filter(|r| *r != head) {
                        push(rel, EdgeKind::Aggregate);
                    }
                }
            }
            other => {
                for e in other.exprs() {
                    exprs_reads(e, kind, push);
                }
            }
        }
    }
    for e in rule.head.flat_args().chain(rule.expr.iter()) {
        exprs_reads(e, positive, &mut push);
    }
    go(&rule.constraint, positive, &rule.head.relation, &mut push);
    out
}

pub fn stratify(p: &Program, schemas: &Schemas) -> Result<Stratification, Vec<Diagnostic>> {
    let mut graph: DiGraph<String, EdgeKind> = DiGraph::new();
    let mut node: BTreeMap<String, NodeIndex> = BTreeMap::new();
    let mut first_rule: BTreeMap<String, usize> = BTreeMap::new();
    for (i, r) in p.rules.iter().enumerate() {
        let h = &r.head.relation;
        first_rule.entry(h.clone()).or_insert(i);
        if !node.contains_key(h) {
            node.insert(h.clone(), graph.add_node(h.clone()));
        }
    }
    let mut edges = Vec::new();
    for (i, r) in p.rules.iter().enumerate() {
        let to = &r.head.relation;
        for (from, kind) in dependencies(r) {
            let Some(&src) = node.get(&from) else { continue };
            if r.action.is_imperative() && &from == to {
                continue;
            }
            graph.add_edge(src, node[to], kind);
            edges.push(Dependency {
                from,
                to: to.clone(),
                kind,
                rule: i,
            });
        }
    }

    let mut errors = Vec::new();
    let sccs = tarjan_scc(&graph);
    let mut comp_of = vec![0usize; graph.node_count()];
    for (k, scc) in sccs.iter().enumerate() {
        for n in scc {
            comp_of[n.index()] = k;
        }
    }
    let mut recursive = vec![false; sccs.len()];
    for (k, scc) in sccs.iter().enumerate() {
        let members: BTreeSet<NodeIndex> = scc.iter().copied().collect();
        let internal: Vec<_> = graph
            .edge_references()
            .filter(|e| members.contains(&e.source()) && members.contains(&e.target()))
            .collect();
        recursive[k] = !internal.is_empty();
        let mut names: Vec<String> = scc.iter().map(|n| graph[*n].clone()).collect();
        names.sort_by_key(|n| first_rule[n]);
        let cycle = || {
            let mut c = names.clone();
            c.push(names[0].clone());
            c.join(" -> ")
        };
        if let Some(bad) = internal.iter().find(|e| *e.weight() != EdgeKind::Positive) {
            let what = if *bad.weight() == EdgeKind::Negative { "negation" } else { "aggregation" };
            let rule = edges
                .iter()
                .find(|d| d.kind == *bad.weight() && d.from == graph[bad.source()] && d.to == graph[bad.target()])
                .map(|d| d.rule);
            let mut d = Diagnostic::error(
                Code::Unstratifiable,
                format!("{what} inside a recursive cycle: {}", cycle()),
            );
            if let Some(r) = rule {
                d = d.with_rule(r).at(p.rules[r].loc.line, p.rules[r].loc.col);
            }
            errors.push(d);
        } else if recursive[k] {
            if let Some(n) = names.iter().find(|n| schemas.get(*n).is_some_and(|s| s.semiring == Semiring::Real)) {
                let r = first_rule[n];
                errors.push(
                    Diagnostic::error(
                        Code::RealRecursion,
                        format!("recursion through real-valued relation {n}: {}", cycle()),
                    )
                    .with_rule(r)
                    .at(p.rules[r].loc.line, p.rules[r].loc.col),
                );
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    // Topological order of components, ties broken by smallest rule index.
    let n = sccs.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in graph.edge_references() {
        let (a, b) = (comp_of[e.source().index()], comp_of[e.target().index()]);
        if a != b && succ[a].insert(b) {
            indegree[b] += 1;
        }
    }
    let key = |k: usize| sccs[k].iter().map(|n| first_rule[&graph[*n]]).min().unwrap_or(usize::MAX);
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).filter(|k| indegree[*k] == 0).map(|k| Reverse((key(k), k))).collect();
    let mut strata = vec![Stratum {
        relations: schemas
            .iter()
            .filter(|(name, _)| !node.contains_key(*name))
            .map(|(name, _)| name.clone())
            .collect(),
        rules: Vec::new(),
        recursive: false,
    }];
    while let Some(Reverse((_, k))) = ready.pop() {
        let mut relations: Vec<String> = sccs[k].iter().map(|n| graph[*n].clone()).collect();
        relations.sort_by_key(|r| first_rule[r]);
        let rules = p
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| relations.contains(&r.head.relation))
            .map(|(i, _)| i)
            .collect();
        strata.push(Stratum {
            relations,
            rules,
            recursive: recursive[k],
        });
        for &b in &succ[k] {
            indegree[b] -= 1;
            if indegree[b] == 0 {
                ready.push(Reverse((key(b), b)));
            }
        }
    }
    Ok(Stratification { strata, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::schema::infer_schemas;
    use crate::store::{Database, Relation};
    use crate::syntax::parse;

    fn strata(src: &str, edb: &[(&str, usize)]) -> Result<Stratification, Vec<Diagnostic>> {
        let mut db = Database::new();
        for (n, a) in edb {
            db.insert(*n, Relation::flat(Semiring::Bool, *a));
        }
        let p = desugar(&parse(src).unwrap()).unwrap();
        let (schemas, _) = infer_schemas(&p, &db);
        stratify(&p, &schemas)
    }

    #[test]
    fn transitive_closure_is_one_recursive_stratum() {
        let s = strata("T(x,y) := E(x,y)\nT(x,y) := E(x,z), T(z,y)", &[("E", 2)]).unwrap();
        assert_eq!(s.strata.len(), 2);
        assert!(s.strata[1].recursive);
        assert_eq!(s.strata[1].rules, vec![0, 1]);
    }

    #[test]
    fn negative_cycle_is_rejected() {
        let e = strata("P(x) := Q(x), not(P(x))", &[("Q", 1)]).unwrap_err();
        assert_eq!(e[0].code, Code::Unstratifiable);
        assert!(e[0].message.contains("P -> P"), "{}", e[0].message);
    }

    #[test]
    fn aggregate_cycle_is_rejected() {
        let e = strata("C(x) := sum(v) if C(x), v = 1", &[]).unwrap_err();
        assert_eq!(e[0].code, Code::Unstratifiable);
    }

    #[test]
    fn real_recursion_is_rejected() {
        let e = strata("X(i) := v if X(i), v = 1.0\nX(i) := v if B(i), v = 2.0", &[("B", 1)]).unwrap_err();
        assert_eq!(e[0].code, Code::RealRecursion);
    }

    #[test]
    fn strata_follow_dependencies() {
        let src = "C(x) := B(x)\nB(x) := A(x)\nD(x) := A(x), not(C(x))";
        let s = strata(src, &[("A", 1)]).unwrap();
        let order: Vec<&str> = s.strata[1..].iter().map(|s| s.relations[0].as_str()).collect();
        assert_eq!(order, ["B", "C", "D"]);
    }
}
