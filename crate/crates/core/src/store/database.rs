use std::collections::BTreeMap;
use std::sync::Arc;

use super::relation::Relation;
use crate::ast::Constraint;
use crate::value::Value;

/// Named relations, scalar parameters (such as a CSR row count `n`) and the
/// constraints declared alongside the data.
///
/// Relations are shared snapshots: evaluation replaces an entry rather than
/// mutating a published relation.
#[derive(Debug, Clone, Default)]
pub struct Database {
    relations: BTreeMap<String, Arc<Relation>>,
    params: BTreeMap<String, Value>,
    pub declarations: Vec<Constraint>,
}

impl Database {
    pub fn new() -> Self {
        Database::default()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Relation>> {
        self.relations.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, rel: Relation) {
        self.relations.insert(name.into(), Arc::new(rel));
    }

    pub fn insert_shared(&mut self, name: impl Into<String>, rel: Arc<Relation>) {
        self.relations.insert(name.into(), rel);
    }

    pub fn remove(&mut self, name: &str) -> Option<Arc<Relation>> {
        self.relations.remove(name)
    }

    /// Relation names in ascending order.
    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.relations.keys()
    }

    pub fn relations(&self) -> impl Iterator<Item = (&String, &Arc<Relation>)> {
        self.relations.iter()
    }

    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.get(name)
    }

    pub fn set_param(&mut self, name: impl Into<String>, v: Value) {
        self.params.insert(name.into(), v);
    }

    pub fn params(&self) -> &BTreeMap<String, Value> {
        &self.params
    }
}
