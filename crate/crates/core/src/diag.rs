//! Diagnostics reported by the parser, checker and evaluator.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Stable machine-readable diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Code {
    Syntax,
    Unimplemented,
    MalformedMatch,
    UnknownCei,
    UnknownEei,
    TypeConflict,
    KindError,
    ArityMismatch,
    UnsafeVariable,
    UnsafeNegation,
    Unstratifiable,
    RealRecursion,
    UndeclaredRelation,
    IntegrityFdep,
    IntegrityPkey,
    IntegrityUnique,
    IntegrityCard,
    IntegrityOrder,
    IntegrityType,
    SoftDeg,
    DivisionByZero,
    Refinement,
    EmptyAggregate,
    NonTermination,
    OverlappingDisjuncts,
    Shape,
    Runtime,
    SlangViolation,
    StrategyInapplicable,
    OutsideSqlCore,
    Einsum,
    Lift,
    Io,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::Syntax => "syntax",
            Code::Unimplemented => "unimplemented",
            Code::MalformedMatch => "malformed-match",
            Code::UnknownCei => "unknown-cei",
            Code::UnknownEei => "unknown-eei",
            Code::TypeConflict => "type-conflict",
            Code::KindError => "kind-error",
            Code::ArityMismatch => "arity-mismatch",
            Code::UnsafeVariable => "unsafe-variable",
            Code::UnsafeNegation => "unsafe-negation",
            Code::Unstratifiable => "unstratifiable",
            Code::RealRecursion => "real-recursion",
            Code::UndeclaredRelation => "undeclared-relation",
            Code::IntegrityFdep => "integrity-fdep",
            Code::IntegrityPkey => "integrity-pkey",
            Code::IntegrityUnique => "integrity-unique",
            Code::IntegrityCard => "integrity-card",
            Code::IntegrityOrder => "integrity-order",
            Code::IntegrityType => "integrity-type",
            Code::SoftDeg => "soft-deg",
            Code::DivisionByZero => "division-by-zero",
            Code::Refinement => "refinement",
            Code::EmptyAggregate => "empty-aggregate",
            Code::NonTermination => "non-termination",
            Code::OverlappingDisjuncts => "overlapping-disjuncts",
            Code::Shape => "shape",
            Code::Runtime => "runtime",
            Code::SlangViolation => "slang-violation",
            Code::StrategyInapplicable => "strategy-inapplicable",
            Code::OutsideSqlCore => "outside-sql-core",
            Code::Einsum => "einsum",
            Code::Lift => "lift",
            Code::Io => "io",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A located message. `line`/`column` are 1-based; 0 means "no position".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub message: String,
    pub rule: Option<usize>,
    pub line: u32,
    #[serde(rename = "col")]
    pub column: u32,
    #[serde(skip)]
    pub excerpt: String,
}

impl Diagnostic {
    pub fn error(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
            rule: None,
            line: 0,
            column: 0,
            excerpt: String::new(),
        }
    }

    pub fn warning(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, message)
        }
    }

    pub fn with_rule(mut self, rule: usize) -> Self {
        self.rule.get_or_insert(rule);
        self
    }

    /// Attach a position unless one is already present.
    pub fn at(mut self, line: u32, column: u32) -> Self {
        if self.line == 0 {
            self.line = line;
            self.column = column;
        }
        self
    }

    pub fn with_excerpt(mut self, excerpt: impl Into<String>) -> Self {
        self.excerpt = excerpt.into();
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// One JSON object per line: `{severity, code, message, rule, line, col}`.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]", self.code)?;
        if self.line > 0 {
            write!(f, " {}:{}", self.line, self.column)?;
        }
        if let Some(r) = self.rule {
            write!(f, " (rule {r})")?;
        }
        write!(f, ": {}", self.message)?;
        if !self.excerpt.is_empty() {
            write!(f, "\n    {}", self.excerpt)?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostic {}

pub type Diagnostics = Vec<Diagnostic>;

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_has_the_documented_fields() {
        let d = Diagnostic::error(Code::UnsafeNegation, "x is not ground")
            .with_rule(2)
            .at(3, 7);
        let v: serde_json::Value = serde_json::from_str(&d.to_json_line()).unwrap();
        assert_eq!(v["severity"], "error");
        assert_eq!(v["code"], "unsafe-negation");
        assert_eq!(v["rule"], 2);
        assert_eq!(v["line"], 3);
        assert_eq!(v["col"], 7);
        assert_eq!(v["message"], "x is not ground");
    }
}
