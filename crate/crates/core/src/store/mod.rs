//! Higher-order semiring relations, their layouts, and the database that
//! holds them.

mod database;
mod io;
mod relation;
mod semiring;

pub use database::Database;
pub use io::{load_manifest, read_csv, read_dense_json, Csr, Manifest, ManifestEntry};
pub use relation::{Layout, Relation};
pub use semiring::Semiring;

pub(crate) use relation::show as show_key;

use thiserror::Error;

use crate::diag::{Code, Diagnostic};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("arity mismatch: expected {expected} key columns, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("{0}")]
    Shape(String),
    #[error("value {value} is not in the {semiring} semiring")]
    Carrier { value: String, semiring: Semiring },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<StoreError> for Diagnostic {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::Arity { .. } => Code::ArityMismatch,
            StoreError::Shape(_) => Code::Shape,
            StoreError::Carrier { .. } => Code::TypeConflict,
            StoreError::Io { .. } | StoreError::Csv(_) | StoreError::Json(_) => Code::Io,
        };
        Diagnostic::error(code, e.to_string())
    }
}
