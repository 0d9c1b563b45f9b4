//! Static analysis: schemas, types, binding plans, stratification and
//! integrity of stored data.

pub mod integrity;
pub mod plan;
pub mod schema;
pub mod stratify;
pub mod types;

pub use integrity::{check_integrity, Violation};
pub use plan::{plan_rule, RulePlan, Step};
pub use schema::{infer_schemas, RelSchema, Schemas};
pub use stratify::{stratify, Stratification, Stratum};
pub use types::{infer_types, ScalarType, TypeEnv};

use crate::ast::{desugar, Constraint, Program};
use crate::diag::{has_errors, Diagnostic};
use crate::store::Database;

/// A program that passed every static check, with the artifacts needed to run it.
#[derive(Debug, Clone)]
pub struct Checked {
    /// The desugared program.
    pub program: Program,
    pub schemas: Schemas,
    pub types: TypeEnv,
    pub plans: Vec<RulePlan>,
    pub strata: Stratification,
    /// Warnings raised along the way.
    pub diagnostics: Vec<Diagnostic>,
}

/// All declarations in force: the program's and those attached to the data.
pub fn declarations(p: &Program, db: &Database) -> Vec<Constraint> {
    p.declarations
        .iter()
        .map(|d| d.constraint.clone())
        .chain(db.declarations.iter().cloned())
        .collect()
}

/// Run every static check. In strict mode hard integrity violations are errors.
pub fn check_program(p: &Program, db: &Database, strict: bool) -> Result<Checked, Vec<Diagnostic>> {
    let program = desugar(p).map_err(|d| vec![d])?;
    let (schemas, mut diags) = infer_schemas(&program, db);
    let (types, type_diags) = infer_types(&program, &schemas, db);
    diags.extend(type_diags);
    if has_errors(&diags) {
        return Err(diags);
    }
    let mut plans = Vec::new();
    for (i, r) in program.rules.iter().enumerate() {
        match plan_rule(r, i, &schemas, db.params()) {
            Ok(plan) => plans.push(plan),
            Err(d) => diags.push(d),
        }
    }
    let strata = match stratify(&program, &schemas) {
        Ok(s) => Some(s),
        Err(ds) => {
            diags.extend(ds);
            None
        }
    };
    for v in check_integrity(db, &declarations(&program, db)) {
        diags.push(v.to_diagnostic(strict));
    }
    match strata {
        Some(strata) if !has_errors(&diags) => Ok(Checked {
            program,
            schemas,
            types,
            plans,
            strata,
            diagnostics: diags,
        }),
        _ => Err(diags),
    }
}
