use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Database, Layout, Relation, Semiring, StoreError};
use crate::value::Value;

/// Parse CSV text with a header row. A trailing `__val` column holds the
/// payload; without it every row is a set member.
pub fn read_csv(
    text: &str,
    semiring: Option<Semiring>,
    levels: Option<Vec<usize>>,
) -> Result<Relation, StoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let valued = header.last().is_some_and(|h| h == "__val");
    let arity = header.len() - valued as usize;
    let semiring = semiring.unwrap_or(if valued { Semiring::Real } else { Semiring::Bool });
    let levels = levels.unwrap_or_else(|| vec![arity]);
    let mut rel = Relation::new(semiring, levels).with_columns(header[..arity].to_vec());
    for row in rdr.records() {
        let row = row?;
        let key: Vec<Value> = row.iter().take(arity).map(Value::parse_cell).collect();
        let val = if valued {
            Value::parse_cell(row.get(arity).unwrap_or("0"))
        } else {
            Value::Bool(true)
        };
        rel.merge(key, val)?;
    }
    Ok(rel)
}

#[derive(Debug, Deserialize)]
struct DenseJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Parse `{"shape": [...], "data": [...row-major...]}`.
pub fn read_dense_json(text: &str, levels: Option<Vec<usize>>) -> Result<Relation, StoreError> {
    let d: DenseJson = serde_json::from_str(text)?;
    match levels {
        Some(l) => Relation::dense_with_levels(d.shape, d.data, l),
        None => Relation::dense(d.shape, d.data),
    }
}

/// Compressed sparse rows: row `i` owns positions `P[i]..P[i+1]` of the
/// column indices `I` and values `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    pub n: usize,
    #[serde(rename = "P")]
    pub p: Vec<usize>,
    #[serde(rename = "I")]
    pub i: Vec<usize>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
}

impl Csr {
    /// Compress a row-major `rows × cols` matrix, skipping zeros.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Csr {
        let mut csr = Csr {
            n: rows,
            p: vec![0],
            i: Vec::new(),
            v: Vec::new(),
        };
        for r in 0..rows {
            for c in 0..cols {
                let x = data[r * cols + c];
                if x != 0.0 {
                    csr.i.push(c);
                    csr.v.push(x);
                }
            }
            csr.p.push(csr.i.len());
        }
        csr
    }

    fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Shape(format!("malformed CSR: {m}")));
        if self.p.len() != self.n + 1 {
            return bad(format!("P has {} entries for n={}", self.p.len(), self.n));
        }
        if self.i.len() != self.v.len() {
            return bad("I and V differ in length".into());
        }
        if self.p.windows(2).any(|w| w[0] > w[1]) || self.p.last() != Some(&self.i.len()) {
            return bad("P is not a monotone prefix array over I".into());
        }
        Ok(())
    }

    /// Decode into the nested real relation `M(i)(j)`.
    pub fn to_relation(&self) -> Result<Relation, StoreError> {
        self.validate()?;
        let mut rel = Relation::new(Semiring::Real, vec![1, 1]);
        for row in 0..self.n {
            for pos in self.p[row]..self.p[row + 1] {
                rel.merge(
                    vec![Value::Int(row as i64), Value::Int(self.i[pos] as i64)],
                    Value::Float(self.v[pos]),
                )?;
            }
        }
        Ok(rel)
    }

    /// Store the arrays as relations `P`, `I` (bags of positions) and `V`
    /// (reals), plus the parameter `n`, each name prefixed by `prefix`.
    pub fn install(&self, db: &mut Database, prefix: &str) -> Result<(), StoreError> {
        self.validate()?;
        let array = |xs: &[usize]| -> Result<Relation, StoreError> {
            let mut r = Relation::flat(Semiring::Nat, 1);
            for (k, x) in xs.iter().enumerate() {
                r.merge(vec![Value::Int(k as i64)], Value::Int(*x as i64))?;
            }
            Ok(r)
        };
        db.insert(format!("{prefix}P"), array(&self.p)?);
        db.insert(format!("{prefix}I"), array(&self.i)?);
        let mut v = Relation::flat(Semiring::Real, 1);
        for (k, x) in self.v.iter().enumerate() {
            v.merge(vec![Value::Int(k as i64)], Value::Float(*x))?;
        }
        db.insert(format!("{prefix}V"), v);
        db.set_param(format!("{prefix}n"), Value::Int(self.n as i64));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    DenseJson,
    CsrJson,
    /// A scalar parameter given inline by `value`.
    Param,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub levels: Option<Vec<usize>>,
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

/// One relation (or parameter) of a data manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default)]
    pub path: Option<String>,
    pub format: Format,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default)]
    pub semiring: Option<Semiring>,
    #[serde(default)]
    pub layout: Option<Layout>,
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    /// For `csr-json`: also store the decoded matrix under the entry name.
    #[serde(default)]
    pub decode: bool,
    /// For `csr-json`: prefix for the `n`, `P`, `I`, `V` names.
    #[serde(default)]
    pub prefix: String,
    /// For `param`.
    #[serde(default)]
    pub value: Option<Value>,
}

/// `name → entry`, paths relative to the manifest file.
pub type Manifest = BTreeMap<String, ManifestEntry>;

fn read_file(path: &Path) -> Result<String, StoreError> {
    std::fs::read_to_string(path).map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load every entry of a JSON manifest into a fresh database.
pub fn load_manifest(path: &Path) -> Result<Database, StoreError> {
    let manifest: Manifest = serde_json::from_str(&read_file(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut db = Database::new();
    for (name, entry) in &manifest {
        let file = || -> Result<String, StoreError> {
            let p = entry.path.as_ref().ok_or_else(|| StoreError::Io {
                path: name.clone(),
                message: "entry has no path".into(),
            })?;
            read_file(&base.join(p))
        };
        let wrap = |e: StoreError| StoreError::Io {
            path: name.clone(),
            message: e.to_string(),
        };
        let mut rel = match entry.format {
            Format::Param => {
                let v = entry.value.clone().ok_or_else(|| StoreError::Io {
                    path: name.clone(),
                    message: "param entry has no value".into(),
                })?;
                db.set_param(name.clone(), v);
                continue;
            }
            Format::CsrJson => {
                let csr: Csr = serde_json::from_str(&file()?)?;
                csr.install(&mut db, &entry.prefix).map_err(wrap)?;
                if !entry.decode {
                    continue;
                }
                csr.to_relation().map_err(wrap)?
            }
            Format::Csv => read_csv(&file()?, entry.semiring, entry.schema.levels.clone()).map_err(wrap)?,
            Format::DenseJson => read_dense_json(&file()?, entry.schema.levels.clone()).map_err(wrap)?,
        };
        if let Some(cols) = &entry.schema.columns {
            rel = rel.with_columns(cols.clone());
        }
        if let Some(shape) = &entry.shape {
            rel.declare_shape(shape.clone());
        }
        if let Some(layout) = &entry.layout {
            rel = rel.build_layout(layout.clone()).map_err(wrap)?;
        }
        db.insert(name.clone(), rel);
    }
    Ok(db)
}
