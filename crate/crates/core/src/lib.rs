//! Hojabr: a declarative intermediate language over higher-order,
//! semiring-annotated relations.

pub mod ast;
pub mod check;
pub mod diag;
pub mod eval;
pub mod frontend;
pub mod slang;
pub mod store;
pub mod syntax;
pub mod value;

pub use ast::{Access, Action, BinOp, CmpOp, Constraint, Declaration, Expr, Program, Rule};
pub use diag::{Code, Diagnostic, Severity};
pub use syntax::{parse, print};
pub use value::{Tuple, Value};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/relations.md")]
    struct Relations;
    #[doc = include_str!("../../../book/src/rules.md")]
    struct Rules;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/checks.md")]
    struct Checks;
    #[doc = include_str!("../../../book/src/slangs.md")]
    struct Slangs;
    #[doc = include_str!("../../../book/src/frontends.md")]
    struct Frontends;
}
