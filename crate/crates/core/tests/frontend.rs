mod common;

use common::*;
use hojabr::eval::{run_program, EvalConfig};
use hojabr::frontend::sql::{SqlQuery, SqlSchema};
use hojabr::frontend::*;
use hojabr::slang::{canonical, require};
use hojabr::store::{Database, Relation};
use hojabr::{parse, Code, Program, Value};
use std::collections::BTreeMap;

fn run(p: &Program, db: Database) -> Database {
    match run_program(p, db, &EvalConfig::default()) {
        Ok((db, _)) => db,
        Err(e) => panic!("{e:?}\n{p}"),
    }
}

#[test]
fn matrix_vector_product_from_numpy_spec() {
    let e = EinsumExpr::from_numpy("ij,j->i", &[&[2, 2], &[2]]).unwrap();
    let p = einsum_to_hojabr(&e).unwrap();
    let mut db = Database::new();
    db.insert("B", Relation::dense(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    db.insert("C", Relation::dense(vec![2], vec![5.0, 6.0]).unwrap());
    let db = run(&p, db);
    let a = db.get("A").unwrap();
    assert_eq!(a.get(&[Value::Int(0)]).as_f64(), Some(17.0));
    assert_eq!(a.get(&[Value::Int(1)]).as_f64(), Some(39.0));
}

#[test]
fn broadcast_keeps_both_indices_curried() {
    let e = EinsumExpr::from_numpy("ij,j->ij", &[&[2, 2], &[2]]).unwrap();
    let p = einsum_to_hojabr(&e).unwrap();
    assert_eq!(p.rules[0].head.args.len(), 2, "{p}");
    let mut db = Database::new();
    db.insert("B", Relation::dense(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    db.insert("C", Relation::dense(vec![2], vec![5.0, 6.0]).unwrap());
    let db = run(&p, db);
    let got: Vec<f64> = db.get("A").unwrap().entries().iter().map(|(_, v)| v.as_f64().unwrap()).collect();
    assert_eq!(got, vec![5.0, 12.0, 15.0, 24.0]);
}

#[test]
fn einsum_corpus_round_trips() {
    let lines = einsum_corpus();
    assert!(lines.len() >= 20);
    for line in lines {
        let e = parse_einsum(&line).unwrap();
        let p = einsum_to_hojabr(&e).unwrap();
        require(&p, "einsum-core").unwrap_or_else(|d| panic!("{line}: {d:?}"));
        let back = hojabr_to_einsum(&p).unwrap();
        assert_eq!(back.to_string(), line);
        // Also stable through the Hojabr text.
        let reparsed = parse(&p.to_string()).unwrap();
        assert_eq!(canonical(&einsum_to_hojabr(&hojabr_to_einsum(&reparsed).unwrap()).unwrap()), canonical(&p));
    }
}

#[test]
fn sql_corpus_round_trips() {
    let s = sql_schema();
    let queries = sql_corpus();
    assert!(queries.len() >= 20);
    for q in queries {
        let parsed = parse_sql(&q).unwrap();
        let p = sql_to_hojabr(&parsed, &s, "Q").unwrap();
        require(&p, "sql-core").unwrap_or_else(|d| panic!("{q}: {d:?}"));
        let back: SqlQuery = hojabr_to_sql(&p, &s).unwrap();
        let again = sql_to_hojabr(&parse_sql(&back.to_string()).unwrap(), &s, "Q").unwrap();
        assert_eq!(canonical(&again), canonical(&p), "{q}\n{back}");
    }
}

#[test]
fn sql_outside_the_core_is_rejected() {
    for q in [
        "SELECT * FROM R",
        "SELECT DISTINCT a FROM R",
        "SELECT a FROM R UNION SELECT a FROM S",
        "SELECT count(a) FROM R",
    ] {
        assert_eq!(parse_sql(q).unwrap_err().code, Code::OutsideSqlCore, "{q}");
    }
    let p = parse("Q(x) := R(x, y), not(S(y, x))").unwrap();
    let e = hojabr_to_sql(&p, &sql_schema()).unwrap_err();
    assert_eq!(e[0].code, Code::OutsideSqlCore);
}

#[test]
fn einsum_rejects_mismatched_shapes() {
    assert_eq!(parse_einsum("A[i] = B[ij] * C[j] ; B:2x3 C:2").unwrap_err().code, Code::Einsum);
    assert_eq!(parse_einsum("A[i] = B[ij] * C[j] ; B:2x2").unwrap_err().code, Code::Einsum);
}

#[test]
fn sql_translation_matches_the_oracle() {
    let s = sql_schema();
    let queries: Vec<SqlQuery> = sql_corpus().iter().map(|q| parse_sql(q).unwrap()).collect();
    for seed in 0..50 {
        let tables = random_sql_tables(seed);
        for q in &queries {
            let p = sql_to_hojabr(q, &s, "Q").unwrap();
            let db = run(&p, sql_database(&tables));
            let got = hojabr_rows(q, db.get("Q").unwrap());
            let want = sql_oracle(q, &tables);
            assert!(agree(&want, &got), "seed {seed}: {q}\nwant {want:?}\ngot {got:?}");
        }
    }
}

#[test]
fn schema_names_become_columns() {
    let s: SqlSchema = BTreeMap::from([("R".to_string(), vec!["a".to_string(), "b".to_string()])]);
    let q = parse_sql("SELECT b FROM R WHERE a >= 2").unwrap();
    let p = sql_to_hojabr(&q, &s, "Out").unwrap();
    assert_eq!(p.rules[0].head.relation, "Out");
    let mut db = Database::new();
    db.insert(
        "R",
        Relation::set_of(2, [[2, 7], [1, 8], [3, 9]].map(|r| r.map(Value::Int).to_vec())),
    );
    let db = run(&p, db);
    assert_eq!(int_rows(db.get("Out").unwrap()), [vec![7], vec![9]].into());
}

#[test]
fn zero_aggregates_are_not_stored() {
    let s = sql_schema();
    let q = parse_sql("SELECT a, sum(v) FROM T GROUP BY a").unwrap();
    let p = sql_to_hojabr(&q, &s, "Q").unwrap();
    let mut db = Database::new();
    let rows = [(1, 2.5), (1, -2.5), (2, 1.0)].map(|(a, v)| vec![Value::Int(a), Value::Float(v)]);
    db.insert("T", Relation::set_of(2, rows).with_columns(vec!["a".into(), "v".into()]));
    let db = run(&p, db);
    let q = db.get("Q").unwrap();
    assert_eq!(q.len(), 1);
    assert_eq!(q.get(&[Value::Int(1)]).as_f64(), Some(0.0));
}
