//! Concrete syntax: a total parser and the matching pretty-printer.
//!
//! `parse(&print(p)) == p` for every well-formed AST `p`, and printing a
//! parsed corpus file changes nothing but whitespace and comments.

mod lexer;
mod parser;
mod printer;

use crate::ast::{Access, Constraint, Expr, Program, Rule};
use crate::diag::{Code, Diagnostic};

pub use parser::KEYWORDS;

/// Parse a whole program. Never panics; every failure is a located diagnostic.
pub fn parse(src: &str) -> Result<Program, Diagnostic> {
    let toks = lexer::lex(src)?;
    parser::Parser::new(toks, src).program()
}

/// Parse text that must contain exactly one rule and nothing else.
pub fn parse_rule(src: &str) -> Result<Rule, Diagnostic> {
    let mut p = parse(src)?;
    if p.rules.len() != 1 || !p.declarations.is_empty() {
        return Err(Diagnostic::error(
            Code::Syntax,
            format!(
                "expected exactly one rule, found {} rules and {} declarations",
                p.rules.len(),
                p.declarations.len()
            ),
        ));
    }
    Ok(p.rules.pop().unwrap())
}

/// Parse a standalone constraint.
pub fn parse_constraint(src: &str) -> Result<Constraint, Diagnostic> {
    let mut p = parse(src)?;
    if p.declarations.len() != 1 || !p.rules.is_empty() {
        return Err(Diagnostic::error(Code::Syntax, "expected exactly one constraint"));
    }
    Ok(p.declarations.pop().unwrap().constraint)
}

/// Declarations first, then rules, one statement per line.
pub fn print(p: &Program) -> String {
    printer::print(p)
}

pub fn print_rule(r: &Rule) -> String {
    printer::rule(r)
}

pub fn print_constraint(c: &Constraint) -> String {
    printer::constraint(c, true)
}

pub fn print_expr(e: &Expr) -> String {
    printer::expr(e)
}

pub fn print_access(a: &Access, sep: &str) -> String {
    printer::access(a, sep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::*;

    fn roundtrip(src: &str) -> String {
        let p = parse(src).unwrap_or_else(|d| panic!("{d}"));
        let out = print(&p);
        assert_eq!(parse(&out).unwrap(), p, "reparse of {out}");
        out
    }

    #[test]
    fn nested_loop_join_structure() {
        let r = parse_rule("Q(a,b,c) := R(a,b),S(b',c),(b=b')").unwrap();
        assert_eq!(r.head, Access::flat("Q", &["a", "b", "c"]));
        assert_eq!(r.action, Action::Assign);
        assert_eq!(
            r.constraint,
            Constraint::And(vec![
                Constraint::Atom(Access::flat("R", &["a", "b"])),
                Constraint::Atom(Access::flat("S", &["b'", "c"])),
                Constraint::group(Constraint::cmp(Expr::var("b"), CmpOp::Eq, Expr::var("b'"))),
            ])
        );
    }

    #[test]
    fn eei_call_in_head_expression() {
        let r = parse_rule("H1(i, k) := relu(v) if v=Z1(i, k)").unwrap();
        assert_eq!(r.expr, Some(Expr::Call("relu".into(), vec![Expr::var("v")])));
    }

    #[test]
    fn empty_input_is_empty_program() {
        assert_eq!(parse("").unwrap(), Program::default());
        assert_eq!(parse("  // nothing\n").unwrap(), Program::default());
        assert_eq!(print(&Program::default()), "");
    }

    #[test]
    fn canonical_spacing() {
        let r = parse_rule("J(i, a, b) := R(i,a),S(i,b)").unwrap();
        assert_eq!(print_rule(&r), "J(i,a,b) := R(i, a), S(i, b)");
    }

    #[test]
    fn precedence_of_arithmetic_and_connectives() {
        let r = parse_rule("Q(x) := R(x), x=1 or S(x), not(T(x))").unwrap();
        assert!(matches!(&r.constraint, Constraint::Or(v) if v.len() == 2));
        assert_eq!(print_expr(&parse_rule("Q(x) := a-(b-c)*d if R(a,b,c,d)").unwrap().expr.unwrap()), "a-(b-c)*d");
        roundtrip("Q(x) := (a+b)*c=d, R(a,b,c,d), x=a-b-c, y=a-(b-c)");
    }

    #[test]
    fn nested_rules_and_relation_variables() {
        let out = roundtrip("Q(x,a,b) := Rh(x), (Rx:=Rh(x)), (Sx:=Sh(x)),\n  T(x), Rx(a), Sx(b)");
        assert_eq!(out, "Q(x,a,b) := Rh(x), (Rx := Rh(x)), (Sx := Sh(x)), T(x), Rx(a), Sx(b)\n");
    }

    #[test]
    fn match_closed_with_semicolon_when_not_last() {
        let out = roundtrip("X(j) := v if match j case 0 -> v=a; case 1 -> v=b;, R(a,b)");
        assert_eq!(out, "X(j) := v if match j case 0 -> v=a case 1 -> v=b;, R(a, b)\n");
    }

    #[test]
    fn negative_literals_and_minus() {
        roundtrip("Q(x) := R(x), x< -3, y=x--3, z=-(3), w=-x*2");
        let e = parse_rule("Q(x) := R(x), x=-3").unwrap();
        assert_eq!(
            e.constraint.conjuncts()[1],
            &Constraint::cmp(Expr::var("x"), CmpOp::Eq, Expr::int(-3))
        );
        assert!(parse("Q(x) := R(x), x=-9223372036854775808").is_ok());
    }

    #[test]
    fn declarations_print_before_rules() {
        let out = roundtrip("Q(a) := R(a,b)\nR(a,b), fdep(a)(b)\ncard(B,2,2)");
        assert!(out.starts_with("R(a, b), fdep(a)(b)\ncard(B, 2, 2)\n"));
    }

    #[test]
    fn reserved_keywords() {
        let d = parse("Q(x) := R(x), while(x)").unwrap_err();
        assert_eq!(d.code, Code::Unimplemented);
        let d = parse("limit(x) := R(x)").unwrap_err();
        assert_eq!(d.code, Code::Unimplemented);
        assert_eq!(parse("Q(if) := R(x)").unwrap_err().code, Code::Syntax);
    }

    #[test]
    fn errors_are_located() {
        let d = parse("Q(x) := R(x)\nS(y) := , T(y)").unwrap_err();
        assert_eq!((d.line, d.column), (2, 9));
        assert_eq!(d.excerpt, "S(y) := , T(y)");
    }

    #[test]
    fn deep_nesting_is_a_diagnostic() {
        let src = format!("Q(x) := {}x=1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(parse(&src).is_err());
        let src = format!("Q(x) := R(x), x={}1", "-".repeat(5000));
        assert!(parse(&src).is_err());
    }

    #[test]
    fn unicode_comparisons() {
        let r = parse_rule("Q(x) := R(x), x ≤ 3, x ≠ 1, x ≥ 0").unwrap();
        assert_eq!(print_rule(&r), "Q(x) := R(x), x<=3, x!=1, x>=0");
    }
}
