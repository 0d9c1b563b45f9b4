//! Translators between external query languages and Hojabr.

pub mod einsum;
pub mod sql;

pub use einsum::{einsum_to_hojabr, hojabr_to_einsum, parse_einsum, EinsumExpr};
pub use sql::{hojabr_to_sql, parse_sql, sql_to_hojabr, SqlQuery, SqlSchema};
