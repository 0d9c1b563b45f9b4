use crate::ast::*;
use crate::value::Value;

pub fn print(p: &Program) -> String {
    let mut out = String::new();
    for d in &p.declarations {
        out.push_str(&constraint(&d.constraint, true));
        out.push('\n');
    }
    for r in &p.rules {
        out.push_str(&rule(r));
        out.push('\n');
    }
    out
}

pub fn rule(r: &Rule) -> String {
    let head = access(&r.head, ",");
    let body = constraint(&r.constraint, true);
    match &r.expr {
        Some(e) => format!("{head} {} {} if {body}", r.action.symbol(), expr(e)),
        None => format!("{head} {} {body}", r.action.symbol()),
    }
}

pub fn access(a: &Access, sep: &str) -> String {
    let mut s = a.relation.clone();
    for list in &a.args {
        s.push('(');
        s.push_str(&list.iter().map(expr).collect::<Vec<_>>().join(sep));
        s.push(')');
    }
    s
}

/// `tail` is false when something may follow that an open `match` would
/// otherwise swallow, in which case the match is closed with `;`.
pub fn constraint(c: &Constraint, tail: bool) -> String {
    match c {
        Constraint::And(parts) => {
            let n = parts.len();
            parts
                .iter()
                .enumerate()
                .map(|(i, p)| match p {
                    Constraint::Or(_) => format!("({})", constraint(p, true)),
                    _ => constraint(p, tail && i + 1 == n),
                })
                .collect::<Vec<_>>()
                .join(", ")
        }
        Constraint::Or(parts) => parts
            .iter()
            .map(|p| match p {
                Constraint::Or(_) => format!("({})", constraint(p, true)),
                _ => constraint(p, true),
            })
            .collect::<Vec<_>>()
            .join(" or "),
        Constraint::Not(inner) => format!("not({})", constraint(inner, true)),
        Constraint::Atom(a) => access(a, ", "),
        Constraint::Nested(r) => format!("({})", rule(r)),
        Constraint::Cmp(l, op, r) => comparison(&expr(l), *op, &expr(r)),
        Constraint::Cei(call) => {
            let mut s = call.name.clone();
            for list in &call.args {
                s.push('(');
                s.push_str(&list.iter().map(expr).collect::<Vec<_>>().join(", "));
                s.push(')');
            }
            s
        }
        Constraint::Group(inner) => format!("({})", constraint(inner, true)),
        Constraint::In(e, items) => format!(
            "{} in [{}]",
            expr(e),
            items.iter().map(expr).collect::<Vec<_>>().join(", ")
        ),
        Constraint::Chain(first, rest) => {
            let mut s = expr(first);
            for (op, e) in rest {
                s = comparison(&s, *op, &expr(e));
            }
            s
        }
        Constraint::Match(t, cases) => {
            let mut s = format!("match {}", expr(t));
            let n = cases.len();
            for (i, (pat, body)) in cases.iter().enumerate() {
                let last = i + 1 == n;
                let body = match body {
                    Constraint::Or(_) => format!("({})", constraint(body, true)),
                    _ => constraint(body, last && tail),
                };
                s.push_str(&format!(" case {} -> {body}", expr(pat)));
            }
            if !tail {
                s.push(';');
            }
            s
        }
        Constraint::Typed(v, t) => format!("{v}: {t}"),
    }
}

fn comparison(l: &str, op: CmpOp, r: &str) -> String {
    // `x< -3` must not lex as `x <- 3`.
    let sep = if op == CmpOp::Lt && r.starts_with('-') { " " } else { "" };
    format!("{l}{}{sep}{r}", op.symbol())
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(_, op, _) => op.precedence(),
        _ => 3,
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Access(a) => access(a, ", "),
        Expr::Var(v) => v.clone(),
        Expr::Wildcard => "_".into(),
        Expr::Lit(v) => literal(v),
        Expr::Binary(l, op, r) => {
            let p = op.precedence();
            let ls = expr(l);
            let ls = if precedence(l) < p { format!("({ls})") } else { ls };
            let rs = expr(r);
            let rs = if precedence(r) <= p { format!("({rs})") } else { rs };
            format!("{ls}{}{rs}", op.symbol())
        }
        Expr::Neg(inner) => match **inner {
            Expr::Binary(..) | Expr::Lit(Value::Int(_) | Value::Float(_)) => {
                format!("-({})", expr(inner))
            }
            _ => format!("-{}", expr(inner)),
        },
        Expr::Call(name, args) => format!(
            "{name}({})",
            args.iter().map(expr).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn literal(v: &Value) -> String {
    v.to_string()
}
