use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::semiring::Semiring;
use super::StoreError;
use crate::value::{Tuple, Value};

/// Physical organisation of a relation.
///
/// Hash and trie layouts share one ordered-map representation (a prefix range
/// scan is the trie descent); the tag records the declared intent. Ordered
/// layouts change full-scan order, dense layouts change storage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Hash,
    Trie,
    /// Full scans ascend on these flat column positions, then on the whole key.
    Ordered(Vec<usize>),
    /// Row-major `f64` array; shape from `card`.
    Dense,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Hash => f.write_str("hash"),
            Layout::Trie => f.write_str("trie"),
            Layout::Dense => f.write_str("dense"),
            Layout::Ordered(cols) => {
                let c: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
                write!(f, "ordered({})", c.join(","))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Sparse(BTreeMap<Tuple, Value>),
    Dense { shape: Vec<usize>, data: Vec<f64> },
}

/// A higher-order relation: key tuples split into levels, each full key
/// mapped to a non-zero payload of the relation's semiring.
#[derive(Debug, Clone)]
pub struct Relation {
    semiring: Semiring,
    levels: Vec<usize>,
    layout: Layout,
    storage: Storage,
    declared_shape: Option<Vec<usize>>,
    columns: Option<Vec<String>>,
}

impl Relation {
    pub fn new(semiring: Semiring, levels: Vec<usize>) -> Self {
        Relation {
            semiring,
            levels: if levels.is_empty() { vec![0] } else { levels },
            layout: Layout::Hash,
            storage: Storage::Sparse(BTreeMap::new()),
            declared_shape: None,
            columns: None,
        }
    }

    /// A flat relation with one level of `arity` columns.
    pub fn flat(semiring: Semiring, arity: usize) -> Self {
        Relation::new(semiring, vec![arity])
    }

    pub fn set_of(arity: usize, tuples: impl IntoIterator<Item = Tuple>) -> Self {
        let mut r = Relation::flat(Semiring::Bool, arity);
        for t in tuples {
            r.merge(t, Value::Bool(true)).expect("set insert");
        }
        r
    }

    /// A dense real tensor, one level per dimension.
    pub fn dense(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, StoreError> {
        let levels = if shape.is_empty() { vec![0] } else { vec![1; shape.len()] };
        Relation::dense_with_levels(shape, data, levels)
    }

    pub fn dense_with_levels(
        shape: Vec<usize>,
        data: Vec<f64>,
        levels: Vec<usize>,
    ) -> Result<Self, StoreError> {
        let cells: usize = shape.iter().product();
        if data.len() != cells {
            return Err(StoreError::Shape(format!(
                "shape {shape:?} needs {cells} values, got {}",
                data.len()
            )));
        }
        if levels.iter().sum::<usize>() != shape.len() {
            return Err(StoreError::Arity {
                expected: shape.len(),
                found: levels.iter().sum(),
            });
        }
        Ok(Relation {
            semiring: Semiring::Real,
            levels,
            layout: Layout::Dense,
            storage: Storage::Dense {
                shape: shape.clone(),
                data,
            },
            declared_shape: Some(shape),
            columns: None,
        })
    }

    pub fn semiring(&self) -> Semiring {
        self.semiring
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn arity(&self) -> usize {
        self.levels.iter().sum()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn columns(&self) -> Option<&[String]> {
        self.columns.as_deref()
    }

    pub fn with_columns(mut self, cols: Vec<String>) -> Self {
        self.columns = Some(cols);
        self
    }

    /// The dense shape, or a declared one.
    pub fn shape(&self) -> Option<&[usize]> {
        match &self.storage {
            Storage::Dense { shape, .. } => Some(shape),
            Storage::Sparse(_) => self.declared_shape.as_deref(),
        }
    }

    pub fn declare_shape(&mut self, shape: Vec<usize>) {
        self.declared_shape = Some(shape);
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    /// How many levels `nargs` flat arguments cover, if they end on a level
    /// boundary.
    pub fn levels_covered(&self, nargs: usize) -> Option<usize> {
        let mut acc = 0;
        if nargs == 0 {
            return Some(0);
        }
        for (i, l) in self.levels.iter().enumerate() {
            acc += l;
            if acc == nargs {
                return Some(i + 1);
            }
            if acc > nargs {
                return None;
            }
        }
        None
    }

    /// Number of non-zero entries.
    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Sparse(m) => m.len(),
            Storage::Dense { data, .. } => data.iter().filter(|v| **v != 0.0).count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dense_offset(shape: &[usize], key: &[Value]) -> Option<usize> {
        if key.len() != shape.len() {
            return None;
        }
        let mut off = 0usize;
        for (k, n) in key.iter().zip(shape) {
            let Value::Int(i) = k else { return None };
            if *i < 0 || *i as usize >= *n {
                return None;
            }
            off = off * n + *i as usize;
        }
        Some(off)
    }

    /// Payload at a full key; the semiring zero when absent.
    pub fn get(&self, key: &[Value]) -> Value {
        match &self.storage {
            Storage::Sparse(m) => m.get(key).cloned().unwrap_or_else(|| self.semiring.zero()),
            Storage::Dense { shape, data } => match Relation::dense_offset(shape, key) {
                Some(o) => Value::Float(data[o]),
                None => self.semiring.zero(),
            },
        }
    }

    pub fn contains(&self, key: &[Value]) -> bool {
        !self.semiring.is_zero(&self.get(key))
    }

    fn check_key(&self, key: &[Value]) -> Result<(), StoreError> {
        if key.len() != self.arity() {
            return Err(StoreError::Arity {
                expected: self.arity(),
                found: key.len(),
            });
        }
        Ok(())
    }

    fn carrier(&self, v: &Value) -> Result<Value, StoreError> {
        self.semiring.coerce(v).ok_or_else(|| StoreError::Carrier {
            value: v.to_string(),
            semiring: self.semiring,
        })
    }

    /// `key ↦ add(old, value)`, dropping the entry if the sum is zero.
    pub fn merge(&mut self, key: Tuple, value: Value) -> Result<(), StoreError> {
        self.check_key(&key)?;
        let value = self.carrier(&value)?;
        let semiring = self.semiring;
        match &mut self.storage {
            Storage::Sparse(m) => {
                let new = match m.get(&key) {
                    Some(old) => semiring.add(old, &value),
                    None => value,
                };
                if semiring.is_zero(&new) {
                    m.remove(&key);
                } else {
                    m.insert(key, new);
                }
            }
            Storage::Dense { shape, data } => {
                let o = Relation::dense_offset(shape, &key).ok_or_else(|| {
                    StoreError::Shape(format!("key {} outside shape {shape:?}", show(&key)))
                })?;
                data[o] += value.as_f64().unwrap_or(0.0);
            }
        }
        Ok(())
    }

    /// Overwrite the payload at `key` (zero removes it).
    pub fn set(&mut self, key: Tuple, value: Value) -> Result<(), StoreError> {
        self.check_key(&key)?;
        let value = self.carrier(&value)?;
        let zero = self.semiring.is_zero(&value);
        match &mut self.storage {
            Storage::Sparse(m) => {
                if zero {
                    m.remove(&key);
                } else {
                    m.insert(key, value);
                }
            }
            Storage::Dense { shape, data } => {
                let o = Relation::dense_offset(shape, &key).ok_or_else(|| {
                    StoreError::Shape(format!("key {} outside shape {shape:?}", show(&key)))
                })?;
                data[o] = value.as_f64().unwrap_or(0.0);
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, key: &[Value]) {
        match &mut self.storage {
            Storage::Sparse(m) => {
                m.remove(key);
            }
            Storage::Dense { shape, data } => {
                if let Some(o) = Relation::dense_offset(shape, key) {
                    data[o] = 0.0;
                }
            }
        }
    }

    /// Visit entries whose key starts with `prefix`, in key order.
    ///
    /// With `dense_iteration`, dense relations also yield explicit zeros.
    pub fn scan_prefix<E>(
        &self,
        prefix: &[Value],
        dense_iteration: bool,
        f: &mut dyn FnMut(&[Value], &Value) -> Result<(), E>,
    ) -> Result<(), E> {
        match &self.storage {
            Storage::Sparse(m) => {
                if prefix.is_empty() {
                    for (k, v) in m {
                        f(k, v)?;
                    }
                } else {
                    for (k, v) in m.range(prefix.to_vec()..) {
                        if !k.starts_with(prefix) {
                            break;
                        }
                        f(k, v)?;
                    }
                }
                Ok(())
            }
            Storage::Dense { shape, data } => {
                if prefix.len() > shape.len() {
                    return Ok(());
                }
                let mut base = 0usize;
                for (k, n) in prefix.iter().zip(shape) {
                    let Value::Int(i) = k else { return Ok(()) };
                    if *i < 0 || *i as usize >= *n {
                        return Ok(());
                    }
                    base = base * n + *i as usize;
                }
                let rest = &shape[prefix.len()..];
                let block: usize = rest.iter().product();
                let mut key: Tuple = prefix.to_vec();
                key.extend(rest.iter().map(|_| Value::Int(0)));
                for j in 0..block {
                    let x = data[base * block + j];
                    if x == 0.0 && !dense_iteration {
                        continue;
                    }
                    let mut r = j;
                    for d in (0..rest.len()).rev() {
                        key[prefix.len() + d] = Value::Int((r % rest[d]) as i64);
                        r /= rest[d];
                    }
                    f(&key, &Value::Float(x))?;
                }
                Ok(())
            }
        }
    }

    /// True when some non-zero entry starts with `prefix`.
    pub fn has_prefix(&self, prefix: &[Value]) -> bool {
        let mut found = false;
        let _ = self.scan_prefix::<()>(prefix, false, &mut |_, _| {
            found = true;
            Err(())
        });
        found
    }

    /// Number of non-zero entries under `prefix`.
    pub fn count_prefix(&self, prefix: &[Value]) -> usize {
        let mut n = 0;
        let _ = self.scan_prefix::<()>(prefix, false, &mut |_, _| {
            n += 1;
            Ok(())
        });
        n
    }

    /// All non-zero entries in layout order.
    pub fn entries(&self) -> Vec<(Tuple, Value)> {
        let mut out = Vec::with_capacity(self.len());
        let _ = self.scan_prefix::<()>(&[], false, &mut |k, v| {
            out.push((k.to_vec(), v.clone()));
            Ok(())
        });
        if let Layout::Ordered(cols) = &self.layout {
            out.sort_by(|(a, _), (b, _)| {
                let ka: Vec<&Value> = cols.iter().filter_map(|c| a.get(*c)).collect();
                let kb: Vec<&Value> = cols.iter().filter_map(|c| b.get(*c)).collect();
                ka.cmp(&kb).then_with(|| a.cmp(b))
            });
        }
        out
    }

    /// The logical content: key ↦ payload, independent of layout.
    pub fn to_map(&self) -> BTreeMap<Tuple, Value> {
        self.entries().into_iter().collect()
    }

    /// Logical equality (same semiring-level content), layout ignored.
    pub fn same_content(&self, other: &Relation) -> bool {
        self.to_map() == other.to_map()
    }

    /// An empty relation with the same schema, shape and layout.
    pub fn empty_like(&self) -> Relation {
        let storage = match &self.storage {
            Storage::Sparse(_) => Storage::Sparse(BTreeMap::new()),
            Storage::Dense { shape, data } => Storage::Dense {
                shape: shape.clone(),
                data: vec![0.0; data.len()],
            },
        };
        Relation {
            storage,
            ..self.clone_schema()
        }
    }

    fn clone_schema(&self) -> Relation {
        Relation {
            semiring: self.semiring,
            levels: self.levels.clone(),
            layout: self.layout.clone(),
            storage: Storage::Sparse(BTreeMap::new()),
            declared_shape: self.declared_shape.clone(),
            columns: self.columns.clone(),
        }
    }

    /// Reorder columns by `perm` (new column `i` is old column `perm[i]`)
    /// and split the key into `levels`.
    pub fn regroup(&self, perm: &[usize], levels: Vec<usize>) -> Result<Relation, StoreError> {
        if perm.len() != self.arity() || levels.iter().sum::<usize>() != perm.len() {
            return Err(StoreError::Arity {
                expected: self.arity(),
                found: perm.len(),
            });
        }
        let mut out = Relation::new(self.semiring, levels);
        for (k, v) in self.entries() {
            out.merge(perm.iter().map(|&i| k[i].clone()).collect(), v)?;
        }
        out.columns = self
            .columns
            .as_ref()
            .map(|c| perm.iter().map(|&i| c[i].clone()).collect());
        Ok(out)
    }

    /// The same logical relation in another layout.
    pub fn build_layout(&self, target: Layout) -> Result<Relation, StoreError> {
        match target {
            Layout::Dense => {
                if self.semiring != Semiring::Real && !self.is_empty() {
                    return Err(StoreError::Shape(format!(
                        "dense layout needs the real semiring, relation is {}",
                        self.semiring
                    )));
                }
                let shape = self
                    .shape()
                    .map(<[usize]>::to_vec)
                    .ok_or_else(|| StoreError::Shape("dense layout needs a declared shape".into()))?;
                if shape.len() != self.arity() {
                    return Err(StoreError::Shape(format!(
                        "shape {shape:?} does not match arity {}",
                        self.arity()
                    )));
                }
                let cells = shape.iter().product();
                let mut out =
                    Relation::dense_with_levels(shape, vec![0.0; cells], self.levels.clone())?;
                out.columns = self.columns.clone();
                for (k, v) in self.entries() {
                    out.set(k, v)?;
                }
                Ok(out)
            }
            other => {
                let mut out = self.clone_schema();
                let mut map = BTreeMap::new();
                for (k, v) in self.entries() {
                    map.insert(k, v);
                }
                out.storage = Storage::Sparse(map);
                out.layout = other;
                Ok(out)
            }
        }
    }

    /// Keep only the first `k` entries in layout order.
    pub fn truncate(&mut self, k: usize) {
        let keep: Vec<(Tuple, Value)> = self.entries().into_iter().take(k).collect();
        let mut fresh = self.empty_like();
        for (key, v) in keep {
            let _ = fresh.set(key, v);
        }
        *self = fresh;
    }

    /// Rebuild as a relation over another semiring, dropping entries that
    /// cannot be represented.
    pub fn with_semiring(&self, semiring: Semiring) -> Result<Relation, StoreError> {
        let mut out = Relation::new(semiring, self.levels.clone());
        out.columns = self.columns.clone();
        out.declared_shape = self.declared_shape.clone();
        for (k, v) in self.entries() {
            out.merge(k, v)?;
        }
        Ok(out)
    }
}

impl PartialEq for Relation {
    fn eq(&self, other: &Self) -> bool {
        self.semiring == other.semiring && self.levels == other.levels && self.same_content(other)
    }
}

pub(crate) fn show(key: &[Value]) -> String {
    let parts: Vec<String> = key.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(","))
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.entries().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", show(k))?;
            if self.semiring != Semiring::Bool {
                write!(f, "->{v}")?;
            }
        }
        write!(f, "}}")
    }
}
