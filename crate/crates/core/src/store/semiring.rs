use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::Value;

/// The payload algebra of a relation: sets, bags or tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semiring {
    /// `({false,true}, or, and, false, true)`
    #[serde(alias = "set", alias = "boolean")]
    Bool,
    /// `(ℕ, +, ×, 0, 1)`, saturating at `i64::MAX`
    #[serde(alias = "bag", alias = "natural")]
    Nat,
    /// `(f64, +, ×, 0.0, 1.0)`
    #[serde(alias = "tensor", alias = "float")]
    Real,
}

impl Semiring {
    pub fn zero(self) -> Value {
        match self {
            Semiring::Bool => Value::Bool(false),
            Semiring::Nat => Value::Int(0),
            Semiring::Real => Value::Float(0.0),
        }
    }

    pub fn one(self) -> Value {
        match self {
            Semiring::Bool => Value::Bool(true),
            Semiring::Nat => Value::Int(1),
            Semiring::Real => Value::Float(1.0),
        }
    }

    /// Exact comparison with zero; `-0.0` counts as zero.
    pub fn is_zero(self, v: &Value) -> bool {
        match v {
            Value::Bool(b) => !b,
            Value::Int(i) => *i == 0,
            Value::Float(f) => *f == 0.0,
            Value::Str(_) => false,
        }
    }

    pub fn add(self, a: &Value, b: &Value) -> Value {
        match self {
            Semiring::Bool => Value::Bool(truthy(a) || truthy(b)),
            Semiring::Nat => Value::Int(nat(a).saturating_add(nat(b))),
            Semiring::Real => float(real(a) + real(b)),
        }
    }

    pub fn mul(self, a: &Value, b: &Value) -> Value {
        match self {
            Semiring::Bool => Value::Bool(truthy(a) && truthy(b)),
            Semiring::Nat => Value::Int(nat(a).saturating_mul(nat(b))),
            Semiring::Real => float(real(a) * real(b)),
        }
    }

    /// Convert a computed scalar into this semiring's carrier, if possible.
    pub fn coerce(self, v: &Value) -> Option<Value> {
        match (self, v) {
            (Semiring::Bool, Value::Bool(_)) => Some(v.clone()),
            (Semiring::Bool, Value::Int(i)) => Some(Value::Bool(*i != 0)),
            (Semiring::Nat, Value::Int(i)) if *i >= 0 => Some(v.clone()),
            (Semiring::Nat, Value::Bool(b)) => Some(Value::Int(*b as i64)),
            (Semiring::Nat, Value::Float(f)) if *f >= 0.0 && f.fract() == 0.0 && *f < 9.0e18 => {
                Some(Value::Int(*f as i64))
            }
            (Semiring::Real, Value::Int(i)) => Some(Value::Float(*i as f64)),
            (Semiring::Real, Value::Float(_)) => Some(v.clone()),
            (Semiring::Real, Value::Bool(b)) => Some(Value::Float(*b as u8 as f64)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Semiring::Bool => "bool",
            Semiring::Nat => "nat",
            Semiring::Real => "real",
        }
    }

    /// The relation-level type name used by `type(X, T)`.
    pub fn relation_type(self) -> &'static str {
        match self {
            Semiring::Bool => "set",
            Semiring::Nat => "bag",
            Semiring::Real => "tensor",
        }
    }

    pub fn from_relation_type(t: &str) -> Option<Semiring> {
        match t {
            "set" => Some(Semiring::Bool),
            "bag" => Some(Semiring::Nat),
            "tensor" => Some(Semiring::Real),
            _ => None,
        }
    }
}

impl fmt::Display for Semiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn truthy(v: &Value) -> bool {
    !Semiring::Bool.is_zero(v)
}

fn nat(v: &Value) -> i64 {
    match v {
        Value::Int(i) => (*i).max(0),
        Value::Bool(b) => *b as i64,
        Value::Float(f) => f.max(0.0) as i64,
        Value::Str(_) => 0,
    }
}

// Signed zero collapses to +0 so equal sums compare equal.
fn float(x: f64) -> Value {
    Value::Float(if x == 0.0 { 0.0 } else { x })
}

fn real(v: &Value) -> f64 {
    match v {
        Value::Float(f) => *f,
        Value::Int(i) => *i as f64,
        Value::Bool(b) => *b as u8 as f64,
        Value::Str(_) => f64::NAN,
    }
}
