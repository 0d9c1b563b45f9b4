//! Generators and reference oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hojabr::ast::*;
use hojabr::frontend::sql::{Operand, SelectItem, SqlQuery, SqlSchema};
use hojabr::store::{Database, Relation, Semiring};
use hojabr::Value;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Every `.hjb` file under `corpus/<sub>`, sorted.
pub fn corpus_files(sub: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(corpus_dir().join(sub))
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "hjb"))
        .collect();
    out.sort();
    out
}

/// The data manifest paired with a corpus program, if any.
pub fn manifest_for(program: &Path) -> Option<PathBuf> {
    let m = program.with_extension("data.json");
    m.exists().then_some(m)
}

// ------------------------------------------------------------ data

pub type Table = Vec<Vec<i64>>;

pub fn random_table(r: &mut ChaCha8Rng, arity: usize, max_rows: usize, max_key: i64) -> Table {
    let rows = r.gen_range(0..=max_rows);
    let set: BTreeSet<Vec<i64>> = (0..rows)
        .map(|_| (0..arity).map(|_| r.gen_range(0..=max_key)).collect())
        .collect();
    set.into_iter().collect()
}

pub fn set_relation(t: &Table, arity: usize) -> Relation {
    Relation::set_of(arity, t.iter().map(|row| row.iter().map(|x| Value::Int(*x)).collect()))
}

pub fn int_rows(rel: &Relation) -> BTreeSet<Vec<i64>> {
    rel.entries()
        .into_iter()
        .map(|(k, _)| k.iter().map(|v| v.as_i64().expect("integer key")).collect())
        .collect()
}

/// Nested-loop evaluation of `head :- atoms` with plain variables.
pub fn brute_force_join(
    atoms: &[(&str, Vec<&str>)],
    head: &[&str],
    data: &BTreeMap<String, Table>,
) -> BTreeSet<Vec<i64>> {
    fn go(
        k: usize,
        atoms: &[(&str, Vec<&str>)],
        head: &[&str],
        data: &BTreeMap<String, Table>,
        env: &mut BTreeMap<String, i64>,
        out: &mut BTreeSet<Vec<i64>>,
    ) {
        if k == atoms.len() {
            out.insert(head.iter().map(|v| env[*v]).collect());
            return;
        }
        let (rel, vars) = &atoms[k];
        for row in &data[*rel] {
            let mut bound = Vec::new();
            let ok = vars.iter().zip(row).all(|(v, x)| match env.get(*v) {
                Some(y) => y == x,
                None => {
                    env.insert(v.to_string(), *x);
                    bound.push(v.to_string());
                    true
                }
            });
            if ok {
                go(k + 1, atoms, head, data, env, out);
            }
            for v in bound {
                env.remove(&v);
            }
        }
    }
    let mut out = BTreeSet::new();
    go(0, atoms, head, data, &mut BTreeMap::new(), &mut out);
    out
}

/// Reflexive-free transitive closure by Warshall's algorithm.
pub fn warshall(n: usize, edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    let mut m = vec![vec![false; n]; n];
    for &(a, b) in edges {
        m[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for (i, row) in m.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if x {
                out.insert((i, j));
            }
        }
    }
    out
}

pub fn dense_mv(rows: usize, cols: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..rows).map(|i| (0..cols).map(|j| m[i * cols + j] * v[j]).sum()).collect()
}

// ----------------------------------------------------- SQL oracle

pub type SqlTables = BTreeMap<String, (Vec<String>, Vec<Vec<Value>>)>;

pub fn sql_database(tables: &SqlTables) -> Database {
    let mut db = Database::new();
    for (name, (cols, rows)) in tables {
        let rel = Relation::set_of(cols.len(), rows.iter().cloned()).with_columns(cols.clone());
        db.insert(name.clone(), rel);
    }
    db
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlRows {
    /// Distinct projected rows, in result order.
    Plain(Vec<Vec<Value>>),
    /// Group key to aggregate.
    Grouped(BTreeMap<Vec<Value>, f64>),
}

/// Direct interpretation: nested loops over FROM, filters, then
/// projection with duplicate removal or grouping.
pub fn sql_oracle(q: &SqlQuery, tables: &SqlTables) -> SqlRows {
    let mut bindings: Vec<BTreeMap<(String, String), Value>> = vec![BTreeMap::new()];
    for t in &q.from {
        let (cols, rows) = &tables[&t.table];
        let mut next = Vec::new();
        for b in &bindings {
            for row in rows {
                let mut b = b.clone();
                for (c, v) in cols.iter().zip(row) {
                    b.insert((t.name().to_string(), c.clone()), v.clone());
                }
                next.push(b);
            }
        }
        bindings = next;
    }
    let col = |b: &BTreeMap<(String, String), Value>, c: &hojabr::frontend::sql::ColumnRef| -> Value {
        b.iter()
            .find(|((t, name), _)| *name == c.column && c.table.as_ref().is_none_or(|x| x == t))
            .map(|(_, v)| v.clone())
            .expect("column resolves")
    };
    let operand = |b: &BTreeMap<(String, String), Value>, o: &Operand| match o {
        Operand::Column(c) => col(b, c),
        Operand::Lit(v) => v.clone(),
    };
    bindings.retain(|b| {
        q.filter.iter().all(|p| {
            let (l, r) = (operand(b, &p.lhs), operand(b, &p.rhs));
            l.compare_loose(&r).is_some_and(|o| p.op.holds(o))
        })
    });
    let keys: Vec<&hojabr::frontend::sql::ColumnRef> = q
        .select
        .iter()
        .filter_map(|s| match s {
            SelectItem::Column(c) => Some(c),
            _ => None,
        })
        .collect();
    let agg = q.select.iter().find_map(|s| match s {
        SelectItem::Aggregate(a, c) => Some((a.as_str(), c)),
        _ => None,
    });
    match agg {
        None => {
            let mut rows: Vec<Vec<Value>> = bindings
                .iter()
                .map(|b| keys.iter().map(|c| col(b, c)).collect())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if !q.order_by.is_empty() {
                let pos: Vec<usize> = q
                    .order_by
                    .iter()
                    .map(|o| keys.iter().position(|k| k.column == o.column).expect("ordered column is selected"))
                    .collect();
                rows.sort_by(|x, y| {
                    let kx: Vec<&Value> = pos.iter().map(|&p| &x[p]).collect();
                    let ky: Vec<&Value> = pos.iter().map(|&p| &y[p]).collect();
                    kx.cmp(&ky).then_with(|| x.cmp(y))
                });
            }
            if let Some(n) = q.limit {
                rows.truncate(n as usize);
            }
            SqlRows::Plain(rows)
        }
        Some((name, target)) => {
            let mut groups: BTreeMap<Vec<Value>, Vec<f64>> = BTreeMap::new();
            for b in &bindings {
                let key: Vec<Value> = keys.iter().map(|c| col(b, c)).collect();
                groups.entry(key).or_default().push(col(b, target).as_f64().expect("numeric"));
            }
            let mut out: BTreeMap<Vec<Value>, f64> = groups
                .into_iter()
                .map(|(k, xs)| {
                    let v = match name {
                        "SUM" => xs.iter().sum(),
                        "AVG" => xs.iter().sum::<f64>() / xs.len() as f64,
                        "MIN" => xs.iter().copied().fold(f64::INFINITY, f64::min),
                        "MAX" => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        other => panic!("aggregate {other}"),
                    };
                    (k, v)
                })
                .collect();
            if let Some(n) = q.limit {
                // Grouped results are ordered by their key.
                out = out.into_iter().take(n as usize).collect();
            }
            SqlRows::Grouped(out)
        }
    }
}

// ------------------------------------------------ frontend corpora

pub fn sql_schema() -> SqlSchema {
    let text = std::fs::read_to_string(corpus_dir().join("sql/schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn sql_corpus() -> Vec<String> {
    let text = std::fs::read_to_string(corpus_dir().join("sql/queries.sql")).unwrap();
    text.split(';').map(str::trim).filter(|q| !q.is_empty()).map(String::from).collect()
}

pub fn einsum_corpus() -> Vec<String> {
    let text = std::fs::read_to_string(corpus_dir().join("einsum/exprs.ein")).unwrap();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn random_sql_tables(seed: u64) -> SqlTables {
    let mut r = rng(seed);
    let mut tables = SqlTables::new();
    for (name, cols) in sql_schema() {
        // Base tables are sets, as in the store.
        let rows: BTreeSet<Vec<Value>> = (0..r.gen_range(0..=8))
            .map(|_| {
                cols.iter()
                    .map(|c| match c.as_str() {
                        // Positive measures: an aggregate of zero is elided from the store.
                        "v" | "w" => Value::Float(r.gen_range(1i64..=20) as f64 / 8.0),
                        _ => Value::Int(r.gen_range(0..5)),
                    })
                    .collect()
            })
            .collect();
        tables.insert(name, (cols, rows.into_iter().collect()));
    }
    tables
}

/// The translated program's answer in the oracle's shape.
pub fn hojabr_rows(q: &SqlQuery, rel: &Relation) -> SqlRows {
    let aggregated = q.select.iter().any(|s| matches!(s, SelectItem::Aggregate(..)));
    if aggregated {
        SqlRows::Grouped(rel.entries().into_iter().map(|(k, v)| (k, v.as_f64().unwrap())).collect())
    } else {
        let mut rows: Vec<Vec<Value>> = rel.entries().into_iter().map(|(k, _)| k).collect();
        if q.order_by.is_empty() {
            rows.sort();
        }
        SqlRows::Plain(rows)
    }
}

pub fn agree(want: &SqlRows, got: &SqlRows) -> bool {
    match (want, got) {
        (SqlRows::Plain(a), SqlRows::Plain(b)) => a == b,
        (SqlRows::Grouped(a), SqlRows::Grouped(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && (va - vb).abs() <= 1e-9)
        }
        _ => false,
    }
}

// -------------------------------------------------------- semirings

pub fn semiring_value(s: Semiring) -> BoxedStrategy<Value> {
    match s {
        Semiring::Bool => any::<bool>().prop_map(Value::Bool).boxed(),
        Semiring::Nat => (0i64..1000).prop_map(Value::Int).boxed(),
        // Quarters keep sums and products exact.
        Semiring::Real => (-400i64..400).prop_map(|k| Value::Float(k as f64 / 4.0)).boxed(),
    }
}

pub fn semiring_triple() -> impl Strategy<Value = (Semiring, Value, Value, Value)> {
    proptest::sample::select(vec![Semiring::Bool, Semiring::Nat, Semiring::Real]).prop_flat_map(|s| {
        let v = semiring_value(s);
        (Just(s), v.clone(), v.clone(), v)
    })
}

pub fn semiring_laws_hold(s: Semiring, a: &Value, b: &Value, c: &Value) -> Result<(), TestCaseError> {
    let (zero, one) = (s.zero(), s.one());
    prop_assert_eq!(s.add(a, b), s.add(b, a));
    prop_assert_eq!(s.add(&s.add(a, b), c), s.add(a, &s.add(b, c)));
    prop_assert_eq!(s.mul(&s.mul(a, b), c), s.mul(a, &s.mul(b, c)));
    prop_assert_eq!(s.mul(a, b), s.mul(b, a));
    prop_assert_eq!(&s.add(a, &zero), a);
    prop_assert_eq!(&s.mul(a, &one), a);
    prop_assert!(s.is_zero(&s.mul(a, &zero)));
    prop_assert_eq!(s.mul(a, &s.add(b, c)), s.add(&s.mul(a, b), &s.mul(a, c)));
    Ok(())
}

// ------------------------------------------------- AST generation

const VARS: &[&str] = &["x", "y", "z", "a", "b", "i", "j", "n", "v", "b'", "x1", "w_2"];
const RELS: &[&str] = &["R", "S", "T", "Rh", "B_CSR", "E", "W1"];
const EEIS: &[&str] = &["sum", "max", "relu", "softmax", "sin"];
const CEIS: &[&str] = &["card", "order", "fdep", "pkey", "deg", "unique"];

fn pick(xs: &'static [&'static str]) -> impl Strategy<Value = String> {
    proptest::sample::select(xs).prop_map(str::to_string)
}

fn literal() -> impl Strategy<Value = Value> {
    prop_oneof![
        (-50i64..50).prop_map(Value::Int),
        (-40i64..40).prop_filter("non-zero", |k| *k != 0).prop_map(|k| Value::Float(k as f64 / 4.0)),
        "[a-z ]{0,4}".prop_map(Value::Str),
        any::<bool>().prop_map(Value::Bool),
    ]
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    proptest::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

pub fn arb_expr() -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        4 => pick(VARS).prop_map(Expr::Var),
        1 => Just(Expr::Wildcard),
        2 => literal().prop_map(Expr::Lit),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            (inner.clone(), proptest::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]), inner.clone())
                .prop_map(|(l, op, r)| Expr::binary(l, op, r)),
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (pick(EEIS), proptest::collection::vec(inner.clone(), 1..3)).prop_map(|(f, a)| Expr::Call(f, a)),
            arb_access(inner).prop_map(Expr::Access),
        ]
    })
    .boxed()
}

fn arb_access(e: impl Strategy<Value = Expr> + Clone) -> impl Strategy<Value = Access> {
    (pick(RELS), proptest::collection::vec(proptest::collection::vec(e, 0..3), 1..3))
        .prop_map(|(r, args)| Access::new(r, args))
}

fn arb_head() -> impl Strategy<Value = Access> {
    let arg = prop_oneof![4 => pick(VARS).prop_map(Expr::Var), 1 => (0i64..9).prop_map(Expr::int)];
    (pick(RELS), proptest::collection::vec(proptest::collection::vec(arg, 0..3), 1..3))
        .prop_map(|(r, args)| Access::new(r, args))
}

/// Constraints that are neither conjunctions nor disjunctions.
fn arb_simple() -> impl Strategy<Value = Constraint> {
    prop_oneof![
        4 => arb_access(arb_expr()).prop_map(Constraint::Atom),
        3 => (arb_expr(), cmp_op(), arb_expr()).prop_map(|(l, op, r)| Constraint::Cmp(l, op, r)),
        1 => (arb_expr(), proptest::collection::vec((cmp_op(), arb_expr()), 2..4))
            .prop_map(|(l, rest)| Constraint::Chain(l, rest)),
        1 => (arb_expr(), proptest::collection::vec(arb_expr(), 0..3)).prop_map(|(e, xs)| Constraint::In(e, xs)),
        1 => (pick(CEIS), proptest::collection::vec(proptest::collection::vec(arb_expr(), 1..3), 1..3))
            .prop_map(|(n, args)| Constraint::cei(&n, args)),
        1 => (pick(VARS), pick(&["int", "real", "string"])).prop_map(|(v, t)| Constraint::Typed(v, t)),
    ]
}

fn conj(parts: Vec<Constraint>) -> Constraint {
    if parts.len() == 1 {
        parts.into_iter().next().unwrap()
    } else {
        Constraint::And(parts)
    }
}

pub fn arb_constraint() -> impl Strategy<Value = Constraint> {
    arb_simple().prop_recursive(3, 24, 4, |inner| {
        // Items that may stand inside a conjunction.
        let item = prop_oneof![
            3 => inner.clone(),
            1 => inner.clone().prop_map(Constraint::group),
            1 => inner.clone().prop_map(Constraint::not),
            1 => (arb_expr(), proptest::collection::vec((arb_expr(), arb_simple()), 1..3))
                .prop_map(|(t, cases)| Constraint::Match(t, cases)),
            1 => (arb_head(), inner.clone()).prop_map(|(h, c)| {
                Constraint::Nested(Box::new(Rule::new(h, None, c, Action::Assign)))
            }),
        ]
        .prop_map(|c| match c {
            Constraint::And(_) | Constraint::Or(_) => Constraint::group(c),
            c => c,
        });
        let and = proptest::collection::vec(item, 1..4).prop_map(conj);
        prop_oneof![
            3 => and.clone(),
            1 => proptest::collection::vec(and, 2..4).prop_map(Constraint::Or),
        ]
    })
}

pub fn arb_rule() -> impl Strategy<Value = Rule> {
    let action = proptest::sample::select(vec![Action::Assign, Action::Append, Action::Remove, Action::Replace]);
    (arb_head(), proptest::option::of(arb_expr()), arb_constraint(), action)
        .prop_map(|(h, e, c, a)| Rule::new(h, e, c, a))
}

pub fn arb_program() -> impl Strategy<Value = Program> {
    proptest::collection::vec(arb_rule(), 1..5).prop_map(Program::new)
}
