//! Expression extensions: scalar functions, arithmetic and aggregates.

use std::cmp::Ordering;

use crate::ast::BinOp;
use crate::check::plan::{Agg, Func};
use crate::diag::{Code, Diagnostic};
use crate::value::Value;

fn num(v: &Value, what: &str) -> Result<f64, Diagnostic> {
    v.as_f64()
        .ok_or_else(|| Diagnostic::error(Code::Runtime, format!("{what} needs a number, got {v}")))
}

pub fn apply_func(f: Func, v: &Value) -> Result<Value, Diagnostic> {
    Ok(match f {
        Func::Sin => Value::Float(num(v, "sin")?.sin()),
        Func::Cos => Value::Float(num(v, "cos")?.cos()),
        Func::Relu => match v {
            Value::Int(i) => Value::Int((*i).max(0)),
            other => Value::Float(num(other, "relu")?.max(0.0)),
        },
    })
}

/// Binary arithmetic. Integer operations are checked; `/` always yields a real.
pub fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value, Diagnostic> {
    let sym = op.symbol();
    if op == BinOp::Div {
        let d = num(b, sym)?;
        if d == 0.0 {
            return Err(Diagnostic::error(Code::DivisionByZero, format!("division by zero in {a} / {b}")));
        }
        return Ok(Value::Float(num(a, sym)? / d));
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            BinOp::Add => x.checked_add(*y),
            BinOp::Sub => x.checked_sub(*y),
            BinOp::Mul => x.checked_mul(*y),
            BinOp::Div => unreachable!(),
        };
        return r
            .map(Value::Int)
            .ok_or_else(|| Diagnostic::error(Code::Runtime, format!("integer overflow in {a} {sym} {b}")));
    }
    let (x, y) = (num(a, sym)?, num(b, sym)?);
    Ok(Value::Float(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => unreachable!(),
    }))
}

pub fn negate(v: &Value) -> Result<Value, Diagnostic> {
    match v {
        Value::Int(i) => i
            .checked_neg()
            .map(Value::Int)
            .ok_or_else(|| Diagnostic::error(Code::Runtime, format!("integer overflow in -{v}"))),
        other => Ok(Value::Float(-num(other, "-")?)),
    }
}

fn cmp(a: &Value, b: &Value) -> Ordering {
    a.compare_loose(b).unwrap_or_else(|| a.cmp(b))
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Fold a group of values. Softmax is per element; see [`softmax`].
pub fn aggregate(agg: Agg, values: &[Value]) -> Result<Value, Diagnostic> {
    if values.is_empty() {
        return match agg {
            Agg::Sum => Ok(Value::Int(0)),
            _ => Err(Diagnostic::error(Code::EmptyAggregate, format!("{agg:?} of an empty group").to_lowercase())),
        };
    }
    Ok(match agg {
        Agg::Sum => {
            let mut acc = Value::Int(0);
            for v in values {
                acc = arith(BinOp::Add, &acc, v)?;
            }
            acc
        }
        Agg::Avg => {
            let mut s = 0.0;
            for v in values {
                s += num(v, "avg")?;
            }
            Value::Float(s / values.len() as f64)
        }
        Agg::Min => values.iter().min_by(|a, b| cmp(a, b)).cloned().unwrap(),
        Agg::Max => values.iter().max_by(|a, b| cmp(a, b)).cloned().unwrap(),
        Agg::Median => {
            let mut v = values.to_vec();
            v.sort_by(cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2].clone()
            } else {
                Value::Float((num(&v[n / 2 - 1], "median")? + num(&v[n / 2], "median")?) / 2.0)
            }
        }
        Agg::Softmax => {
            return Err(Diagnostic::error(Code::Runtime, "softmax yields one value per element".to_string()))
        }
    })
}

/// Evaluate an extension by name: scalar functions take one argument,
/// aggregates take the whole group.
pub fn eval_eei(name: &str, args: &[Value]) -> Result<Value, Diagnostic> {
    let func = match name {
        "sin" => Some(Func::Sin),
        "cos" => Some(Func::Cos),
        "relu" => Some(Func::Relu),
        _ => None,
    };
    if let Some(f) = func {
        let [x] = args else {
            return Err(Diagnostic::error(Code::UnknownEei, format!("`{name}` takes one argument")));
        };
        return apply_func(f, x);
    }
    match Agg::from_name(name) {
        Some(agg) => aggregate(agg, args),
        None => Err(Diagnostic::error(Code::UnknownEei, format!("unknown expression extension `{name}`"))),
    }
}
