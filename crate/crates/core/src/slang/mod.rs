//! Slangs: sub-languages carved out of the core syntax by predicates, and
//! the passes that move programs between them.

mod join;
mod tensor;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};

pub use join::{lift, lower_join, JoinStrategy, LowerJoin};
pub use tensor::{csr_prefix, lower_tensor, Encoding, LowerTensor, TensorFormat};


/// Constraint forms a slang may admit. CEIs are listed by name separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    Conjunction,
    Disjunction,
    Negation,
    Atom,
    NestedRule,
    Comparison,
}

impl Form {
    fn of(c: &Constraint) -> Option<Form> {
        Some(match c {
            Constraint::And(_) => Form::Conjunction,
            Constraint::Or(_) => Form::Disjunction,
            Constraint::Not(_) => Form::Negation,
            Constraint::Atom(_) => Form::Atom,
            Constraint::Nested(_) => Form::NestedRule,
            Constraint::Cmp(..) => Form::Comparison,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Form::Conjunction => "conjunction",
            Form::Disjunction => "disjunction",
            Form::Negation => "negation",
            Form::Atom => "relation atom",
            Form::NestedRule => "nested rule",
            Form::Comparison => "comparison",
        }
    }
}

/// Expression forms; calls are admitted by EEI name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExprForm {
    Access,
    Variable,
    Wildcard,
    Literal,
    Add,
    Sub,
    Mul,
    Div,
    Negation,
}

impl ExprForm {
    fn of(e: &Expr) -> Option<ExprForm> {
        Some(match e {
            Expr::Access(_) => ExprForm::Access,
            Expr::Var(_) => ExprForm::Variable,
            Expr::Wildcard => ExprForm::Wildcard,
            Expr::Lit(_) => ExprForm::Literal,
            Expr::Binary(_, BinOp::Add, _) => ExprForm::Add,
            Expr::Binary(_, BinOp::Sub, _) => ExprForm::Sub,
            Expr::Binary(_, BinOp::Mul, _) => ExprForm::Mul,
            Expr::Binary(_, BinOp::Div, _) => ExprForm::Div,
            Expr::Neg(_) => ExprForm::Negation,
            Expr::Call(..) => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            ExprForm::Access => "value access",
            ExprForm::Variable => "variable",
            ExprForm::Wildcard => "wildcard",
            ExprForm::Literal => "literal",
            ExprForm::Add => "+",
            ExprForm::Sub => "-",
            ExprForm::Mul => "*",
            ExprForm::Div => "/",
            ExprForm::Negation => "unary minus",
        }
    }
}

/// Whole-rule predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structural {
    /// Only `:=` rules.
    Declarative,
    /// Heads and atoms take a single argument list.
    FlatAccesses,
    /// Heads carry no value expression.
    SetHeads,
    /// Heads carry a value expression.
    ValuedHeads,
    /// Head arguments are plain variables.
    VariableHeads,
    /// An aggregate may only be the whole head expression, over a variable.
    AggregateAtHeadRoot,
    /// `card` in a body may only cap the head relation with a literal.
    CardCapsHead,
    /// `order` lists head variables only.
    OrderOnHeadVariables,
    /// Every relation accessed as a value has a `card` declaration in the rule.
    ShapedAccesses,
}

impl Structural {
    fn name(self) -> &'static str {
        match self {
            Structural::Declarative => "declarative rules only",
            Structural::FlatAccesses => "single argument list per access",
            Structural::SetHeads => "heads without value expressions",
            Structural::ValuedHeads => "heads with value expressions",
            Structural::VariableHeads => "head arguments are variables",
            Structural::AggregateAtHeadRoot => "aggregates only as the head expression",
            Structural::CardCapsHead => "card only as a literal cap on the head",
            Structural::OrderOnHeadVariables => "order only over head variables",
            Structural::ShapedAccesses => "every accessed non-scalar tensor has a card declaration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlangSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub constraints: Vec<Form>,
    pub ceis: Vec<&'static str>,
    pub expressions: Vec<ExprForm>,
    pub eeis: Vec<&'static str>,
    pub structural: Vec<Structural>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: usize,
    pub construct: String,
    pub message: String,
}

impl Violation {
    pub fn to_diagnostic(&self, slang: &str, p: &Program) -> Diagnostic {
        let mut d = Diagnostic::error(
            Code::SlangViolation,
            format!("{} in {slang}: {}", self.message, self.construct),
        )
        .with_rule(self.rule);
        if let Some(r) = p.rules.get(self.rule) {
            d = d.at(r.loc.line, r.loc.col);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Validation {
    pub slang: &'static str,
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_member(&self) -> bool {
        self.violations.is_empty()
    }
}

use ExprForm as E;
use Form as F;
use Structural as S;

/// The shipped slangs.
pub fn catalog() -> Vec<SlangSpec> {
    let all_exprs = vec![
        E::Access,
        E::Variable,
        E::Wildcard,
        E::Literal,
        E::Add,
        E::Sub,
        E::Mul,
        E::Div,
        E::Negation,
    ];
    let arith = vec![E::Access, E::Variable, E::Literal, E::Add, E::Sub, E::Mul, E::Div, E::Negation];
    vec![
        SlangSpec {
            name: "logical-declarative",
            summary: "the whole core language",
            constraints: vec![F::Conjunction, F::Disjunction, F::Negation, F::Atom, F::NestedRule, F::Comparison],
            ceis: CEI_NAMES.to_vec(),
            expressions: all_exprs.clone(),
            eeis: EEI_NAMES.to_vec(),
            structural: vec![],
        },
        SlangSpec {
            name: "logical-join",
            summary: "flat conjunctive queries over sets",
            constraints: vec![F::Conjunction, F::Atom, F::Comparison],
            ceis: vec![],
            expressions: vec![E::Variable, E::Wildcard, E::Literal],
            eeis: vec![],
            structural: vec![S::Declarative, S::FlatAccesses, S::SetHeads, S::VariableHeads],
        },
        SlangSpec {
            name: "physical-join",
            summary: "join plans over hash tries, sorted tries and sub-relation bindings",
            constraints: vec![F::Conjunction, F::Atom, F::NestedRule, F::Comparison],
            ceis: vec!["order"],
            expressions: vec![E::Variable, E::Wildcard, E::Literal],
            eeis: vec![],
            structural: vec![S::Declarative, S::SetHeads],
        },
        SlangSpec {
            name: "dense-tensor",
            summary: "index arithmetic over card-declared tensors",
            constraints: vec![F::Conjunction, F::Comparison],
            ceis: vec!["card"],
            expressions: arith.clone(),
            eeis: vec!["sin", "cos", "relu"],
            structural: vec![S::Declarative, S::ValuedHeads, S::ShapedAccesses],
        },
        SlangSpec {
            name: "sparse-tensor",
            summary: "tensors stored as coordinate lists or compressed rows",
            constraints: vec![F::Conjunction, F::Atom, F::Comparison],
            ceis: vec!["card"],
            expressions: arith,
            eeis: vec!["sin", "cos", "relu"],
            structural: vec![S::Declarative],
        },
        SlangSpec {
            name: "sql-core",
            summary: "select-project-join with grouping, ordering and limits",
            constraints: vec![F::Conjunction, F::Atom, F::Comparison],
            ceis: vec!["order", "card"],
            expressions: vec![E::Variable, E::Literal],
            eeis: vec!["sum", "avg", "min", "max"],
            structural: vec![
                S::Declarative,
                S::FlatAccesses,
                S::VariableHeads,
                S::AggregateAtHeadRoot,
                S::CardCapsHead,
                S::OrderOnHeadVariables,
            ],
        },
        SlangSpec {
            name: "einsum-core",
            summary: "sums of products over card-declared tensors",
            constraints: vec![F::Conjunction, F::Comparison],
            ceis: vec!["card"],
            expressions: vec![E::Access, E::Variable, E::Literal, E::Add, E::Mul],
            eeis: vec![],
            structural: vec![S::Declarative, S::ValuedHeads, S::VariableHeads, S::ShapedAccesses],
        },
    ]
}

pub fn slang(name: &str) -> Option<SlangSpec> {
    catalog().into_iter().find(|s| s.name == name)
}

fn list<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    if xs.is_empty() {
        "none".into()
    } else {
        xs.iter().map(f).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for SlangSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {}", self.name, self.summary)?;
        writeln!(f, "  constraints: {}", list(&self.constraints, |c| c.name().into()))?;
        writeln!(f, "  cei: {}", list(&self.ceis, |c| c.to_string()))?;
        writeln!(f, "  expressions: {}", list(&self.expressions, |e| e.name().into()))?;
        writeln!(f, "  eei: {}", list(&self.eeis, |e| e.to_string()))?;
        write!(f, "  rules: {}", list(&self.structural, |s| s.name().into()))
    }
}

struct Validator<'s> {
    spec: &'s SlangSpec,
    rule: usize,
    out: Vec<Violation>,
    seen: BTreeSet<(usize, String)>,
}

impl Validator<'_> {
    fn report(&mut self, construct: String, message: String) {
        if self.seen.insert((self.rule, message.clone())) {
            self.out.push(Violation {
                rule: self.rule,
                construct,
                message,
            });
        }
    }

    fn expr(&mut self, e: &Expr) {
        e.walk(&mut |x| match x {
            Expr::Call(name, _) => {
                if !self.spec.eeis.contains(&name.as_str()) {
                    self.report(x.to_string(), format!("{name} not allowed"));
                }
            }
            _ => {
                let form = ExprForm::of(x).unwrap();
                if !self.spec.expressions.contains(&form) {
                    self.report(x.to_string(), format!("{} not allowed", form.name()));
                }
                if let Expr::Access(a) = x {
                    if self.spec.structural.contains(&S::FlatAccesses) && a.args.len() > 1 {
                        self.report(a.to_string(), "nested access not allowed".into());
                    }
                }
            }
        });
    }

    fn access(&mut self, a: &Access) {
        if self.spec.structural.contains(&S::FlatAccesses) && a.args.len() != 1 {
            self.report(a.to_string(), "nested access not allowed".into());
        }
        a.flat_args().for_each(|e| self.expr(e));
    }

    fn constraint(&mut self, c: &Constraint) {
        match c {
            Constraint::Group(inner) => return self.constraint(inner),
            Constraint::Cei(call) => {
                if !self.spec.ceis.contains(&call.name.as_str()) {
                    self.report(c.to_string(), format!("{} not allowed", call.name));
                }
                call.value_args().into_iter().for_each(|e| self.expr(e));
                return;
            }
            Constraint::In(..) | Constraint::Chain(..) | Constraint::Match(..) | Constraint::Typed(..) => {
                self.report(c.to_string(), "sugar not allowed".into());
                return;
            }
            _ => {}
        }
        let form = Form::of(c).unwrap();
        // A single conjunct needs no conjunction form.
        if !self.spec.constraints.contains(&form) {
            self.report(c.to_string(), format!("{} not allowed", form.name()));
        }
        match c {
            Constraint::And(ps) | Constraint::Or(ps) => ps.iter().for_each(|p| self.constraint(p)),
            Constraint::Not(inner) => self.constraint(inner),
            Constraint::Atom(a) => self.access(a),
            Constraint::Nested(r) => {
                r.head.flat_args().for_each(|e| self.expr(e));
                r.expr.iter().for_each(|e| self.expr(e));
                self.constraint(&r.constraint);
            }
            Constraint::Cmp(l, _, r) => {
                self.expr(l);
                self.expr(r);
            }
            _ => unreachable!(),
        }
    }

    fn structural(&mut self, r: &Rule) {
        let head_vars: BTreeSet<String> = r.head.flat_args().flat_map(|e| e.vars()).collect();
        for s in &self.spec.structural {
            let fail = match s {
                S::Declarative => r.action != Action::Assign,
                S::FlatAccesses => r.head.args.len() != 1,
                S::SetHeads => r.expr.is_some(),
                S::ValuedHeads => r.expr.is_none(),
                S::VariableHeads => r.head.flat_args().any(|e| e.as_var().is_none()),
                S::AggregateAtHeadRoot => {
                    let mut nested = false;
                    let root_ok = match &r.expr {
                        Some(Expr::Call(n, args)) if AGGREGATE_NAMES.contains(&n.as_str()) => {
                            args.len() == 1 && args[0].as_var().is_some()
                        }
                        _ => true,
                    };
                    let mut check = |e: &Expr, skip_root: bool| {
                        let mut first = skip_root;
                        e.walk(&mut |x| {
                            if let Expr::Call(n, _) = x {
                                if AGGREGATE_NAMES.contains(&n.as_str()) && !std::mem::take(&mut first) {
                                    nested = true;
                                }
                            }
                            first = false;
                        });
                    };
                    if let Some(e) = &r.expr {
                        check(e, true);
                    }
                    for e in r.constraint.exprs() {
                        check(e, false);
                    }
                    !root_ok || nested
                }
                S::CardCapsHead => r.constraint.conjuncts().iter().any(|c| match c {
                    Constraint::Cei(call) if call.name == "card" => {
                        let ok = call.relation_arg() == Some(r.head.relation.as_str())
                            && matches!(call.value_args().as_slice(), [Expr::Lit(_)]);
                        !ok
                    }
                    _ => false,
                }),
                S::OrderOnHeadVariables => r.constraint.conjuncts().iter().any(|c| match c {
                    Constraint::Cei(call) if call.name == "order" => call
                        .args
                        .iter()
                        .flatten()
                        .any(|e| e.as_var().is_none_or(|v| !head_vars.contains(v))),
                    _ => false,
                }),
                S::ShapedAccesses => {
                    let declared: BTreeSet<&str> = r
                        .constraint
                        .conjuncts()
                        .iter()
                        .filter_map(|c| match c {
                            Constraint::Cei(call) if call.name == "card" => call.relation_arg(),
                            _ => None,
                        })
                        .collect();
                    let mut missing = false;
                    let mut look = |e: &Expr| {
                        for a in e.accesses() {
                            // Scalars need no shape.
                            missing |= a.arity() > 0 && !declared.contains(a.relation.as_str());
                        }
                    };
                    r.expr.iter().for_each(&mut look);
                    r.constraint.exprs().into_iter().for_each(look);
                    missing
                }
            };
            if fail {
                self.report(r.head.to_string(), format!("rule violates: {}", s.name()));
            }
        }
    }
}

/// Check every rule of `p` against `spec`. Sugar is removed first.
pub fn validate(p: &Program, spec: &SlangSpec) -> Validation {
    let core = desugar(p);
    let program = core.as_ref().unwrap_or(p);
    let mut v = Validator {
        spec,
        rule: 0,
        out: Vec::new(),
        seen: BTreeSet::new(),
    };
    for (i, r) in program.rules.iter().enumerate() {
        v.rule = i;
        v.access(&r.head);
        if let Some(e) = &r.expr {
            v.expr(e);
        }
        v.constraint(&r.constraint);
        v.structural(r);
    }
    Validation {
        slang: spec.name,
        violations: v.out,
    }
}

/// Validate against a catalog slang by name, as a diagnostic list.
pub fn require(p: &Program, slang_name: &str) -> Result<(), Vec<Diagnostic>> {
    let spec = slang(slang_name).expect("catalog slang");
    let v = validate(p, &spec);
    if v.is_member() {
        Ok(())
    } else {
        Err(v.violations.iter().map(|x| x.to_diagnostic(spec.name, p)).collect())
    }
}

/// Rename variables in order of first occurrence so that programs equal up
/// to variable naming compare equal.
pub fn canonical(p: &Program) -> Program {
    let rules = p
        .rules
        .iter()
        .map(|r| {
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
            r.head.flat_args().for_each(&mut note);
            r.expr.iter().for_each(&mut note);
            r.constraint.exprs().into_iter().for_each(note);
            let relvars = relation_variables(&r.constraint);
            let map: BTreeMap<String, String> = order
                .into_iter()
                .filter(|v| !relvars.contains(v))
                .enumerate()
                .map(|(i, v)| (v, format!("v{i}")))
                .collect();
            r.rename(&map)
        })
        .collect();
    Program {
        declarations: p.declarations.clone(),
        rules,
    }
}

/// Fresh-name source that avoids every name already in use.
pub(crate) struct Names {
    pub(crate) taken: BTreeSet<String>,
}

impl Names {
    pub(crate) fn of_program(p: &Program) -> Names {
        let mut taken = BTreeSet::new();
        for r in &p.rules {
            taken.insert(r.head.relation.clone());
            taken.extend(free_variables(r));
            r.constraint.walk(&mut |c| match c {
                Constraint::Atom(a) => {
                    taken.insert(a.relation.clone());
                }
                Constraint::Nested(n) => {
                    taken.insert(n.head.relation.clone());
                }
                Constraint::Cei(call) => {
                    if let Some(rel) = call.relation_arg() {
                        taken.insert(rel.to_string());
                    }
                }
                _ => {}
            });
            let mut exprs: Vec<&Expr> = r.constraint.exprs();
            exprs.extend(r.expr.iter());
            for e in exprs {
                for a in e.accesses() {
                    taken.insert(a.relation.clone());
                }
            }
        }
        Names { taken }
    }

    /// `base` itself when free, otherwise `base2`, `base3`, ...
    pub(crate) fn fresh(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        let mut k = 2;
        while self.taken.contains(&name) {
            name = format!("{base}{k}");
            k += 1;
        }
        self.taken.insert(name.clone());
        name
    }

    /// A fresh variable: `base`, `base'`, `base''`, ...
    pub(crate) fn fresh_var(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        while self.taken.contains(&name) {
            name.push('\'');
        }
        self.taken.insert(name.clone());
        name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    fn check(slang_name: &str, src: &str) -> Validation {
        validate(&parse(src).unwrap(), &slang(slang_name).unwrap())
    }

    #[test]
    fn dense_slang_accepts_the_dense_rule() {
        let v = check(
            "dense-tensor",
            "A(i)(j) := B(i)(j)*C(j) if card(B,n,m),card(C,m), card(A,n,m), 0<=i<n, 0<=j<m",
        );
        assert!(v.is_member(), "{:?}", v.violations);
    }

    #[test]
    fn dense_slang_rejects_negation() {
        let v = check(
            "dense-tensor",
            "A(i) := B(i)*2 if card(B,n), 0<=i<n, not(Z(i))",
        );
        assert!(v.violations.iter().any(|x| x.message == "negation not allowed"));
        assert_eq!(v.violations[0].rule, 0);
    }

    #[test]
    fn join_slangs() {
        assert!(check("logical-join", "Q(a,b,c) := R(a,b),S(b',c),(b=b')").is_member());
        assert!(!check("logical-join", "Q(a,b,c) := Rh(b)(a),Sh(b)(c)").is_member());
        assert!(check("physical-join", "Q(a,b,c) := Rh(b)(a),Sh(b)(c)").is_member());
        assert!(check("physical-join", "Ro(b)(a) := R(a,b), order(b)").is_member());
    }

    #[test]
    fn sql_core_shapes() {
        assert!(check("sql-core", "Q(a) := sum(v) if R(a,v)").is_member());
        assert!(check("sql-core", "Q(a,b) := R(a,b), order(a), card(Q,2)").is_member());
        assert!(!check("sql-core", "Q(a) := sum(v)+1 if R(a,v)").is_member());
        assert!(!check("sql-core", "Q(a) := R(a,b), card(R,2)").is_member());
    }

    #[test]
    fn catalog_prints_predicates() {
        let text = slang("einsum-core").unwrap().to_string();
        assert!(text.starts_with("einsum-core: "));
        assert!(text.contains("cei: card"));
        assert_eq!(catalog().len(), 7);
    }

    #[test]
    fn canonical_ignores_variable_names() {
        let a = parse("Q(a,c) := R(a,b), S(b,c)").unwrap();
        let b = parse("Q(x,z) := R(x,y), S(y,z)").unwrap();
        assert_eq!(canonical(&a), canonical(&b));
    }
}
