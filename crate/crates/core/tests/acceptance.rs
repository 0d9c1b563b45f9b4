//! Acceptance suite: one PASS/FAIL line per criterion, each under a
//! wall-clock budget. Runs as a plain binary so the report reads in order.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use hojabr::check::check_program;
use hojabr::eval::{run_program, EvalConfig, Mode, RunReport};
use hojabr::frontend::*;
use hojabr::slang::{canonical, lower_join, require, JoinStrategy, LowerTensor, TensorFormat};
use hojabr::store::{load_manifest, Database, Relation};
use hojabr::{parse, print, Code, Program, Value};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

/// Name, time budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn program_at(path: &Path) -> Result<Program, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn data_for(path: &Path) -> Result<Database, String> {
    match manifest_for(path) {
        Some(m) => load_manifest(&m).map_err(|e| format!("{}: {e}", m.display())),
        None => Ok(Database::new()),
    }
}

fn eval(p: &Program, db: Database, mode: Mode) -> Result<(Database, RunReport), String> {
    let cfg = EvalConfig {
        mode,
        ..EvalConfig::default()
    };
    run_program(p, db, &cfg).map_err(|e| format!("{e:?}\n{p}"))
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn corpus_fidelity() -> Outcome {
    let files = corpus_files("reference");
    for f in &files {
        let p = program_at(f)?;
        let db = data_for(f)?;
        let checked = check_program(&p, &db, false).map_err(|d| format!("{}: {d:?}", f.display()))?;
        if let Some(d) = checked.diagnostics.iter().find(|d| d.is_error()) {
            return Err(format!("{}: {d}", f.display()));
        }
        eval(&p, db, Mode::SemiNaive).map_err(|e| format!("{}: {e}", f.display()))?;
    }
    Ok(format!("{} programs", files.len()))
}

const JOIN_QUERIES: &[(&str, &[(&str, usize)])] = &[
    ("Q(a,b,c) := R(a,b), S(b,c)", &[("R", 2), ("S", 2)]),
    ("Q(x,a,b) := R(x,a), S(x,b), T(x)", &[("R", 2), ("S", 2), ("T", 1)]),
    ("Q(a,b,c) := R(a,b), S(b,c), T(c,a)", &[("R", 2), ("S", 2), ("T", 2)]),
    ("Q(a,d) := R(a,b), S(b,c), T(c,d)", &[("R", 2), ("S", 2), ("T", 2)]),
];

/// Atoms of a flat conjunctive query, for the brute-force oracle.
fn atoms_of(src: &str) -> (Vec<(String, Vec<String>)>, Vec<String>) {
    let split = |s: &str| -> (String, Vec<String>) {
        let (name, rest) = s.split_once('(').unwrap();
        let args = rest.trim_end_matches(')').split(',').map(|a| a.trim().to_string()).collect();
        (name.trim().to_string(), args)
    };
    let (head, body) = src.split_once(":=").unwrap();
    let atoms = body.split("),").map(|a| split(a.trim())).collect();
    (atoms, split(head.trim()).1)
}

fn join_equivalence() -> Outcome {
    let mut checked = 0;
    for seed in 0..100 {
        let mut r = rng(seed);
        for (src, arities) in JOIN_QUERIES {
            let mut db = Database::new();
            let mut data = BTreeMap::new();
            for (name, n) in *arities {
                let t = random_table(&mut r, *n, 50, 20);
                db.insert(*name, set_relation(&t, *n));
                data.insert(name.to_string(), t);
            }
            let (atoms, head) = atoms_of(src);
            let atoms: Vec<(&str, Vec<&str>)> = atoms
                .iter()
                .map(|(n, vs)| (n.as_str(), vs.iter().map(String::as_str).collect()))
                .collect();
            let head: Vec<&str> = head.iter().map(String::as_str).collect();
            let want = brute_force_join(&atoms, &head, &data);
            let p = parse(src).unwrap();
            for s in JoinStrategy::ALL {
                let lowered = match lower_join(&p, s) {
                    Ok(l) => l,
                    Err(d) if d.iter().all(|x| x.code == Code::StrategyInapplicable) && atoms.len() < 3 => continue,
                    Err(d) => return Err(format!("{s} on {src}: {d:?}")),
                };
                let (out, _) = eval(&lowered, db.clone(), Mode::SemiNaive)?;
                if int_rows(out.get("Q").unwrap()) != want {
                    return Err(format!("seed {seed}, {s} on {src}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} lowered runs"))
}

fn work_reduction() -> Outcome {
    let p = parse("Q(x,a,b) := R(x,a), S(x,b), T(x)").unwrap();
    let nlj = lower_join(&p, JoinStrategy::Nlj).map_err(|d| format!("{d:?}"))?;
    let generic = lower_join(&p, JoinStrategy::Generic).map_err(|d| format!("{d:?}"))?;
    let mut seen = Vec::new();
    for k in [8i64, 16, 32] {
        // Heavy x = 0 is absent from T; a light x = 1 keeps the answer non-empty.
        let mut rows: Vec<Vec<i64>> = (1..=k).map(|a| vec![0, a]).collect();
        rows.push(vec![1, 1]);
        let mut db = Database::new();
        db.insert("R", set_relation(&rows, 2));
        db.insert("S", set_relation(&rows, 2));
        db.insert("T", set_relation(&vec![vec![1]], 1));
        let (a, ra) = eval(&nlj, db.clone(), Mode::SemiNaive)?;
        let (b, rb) = eval(&generic, db, Mode::SemiNaive)?;
        if int_rows(a.get("Q").unwrap()) != int_rows(b.get("Q").unwrap()) {
            return Err(format!("k={k}: results differ"));
        }
        let (g, n) = (rb.enumerations(), ra.enumerations());
        if g >= n {
            return Err(format!("k={k}: generic {g} >= nlj {n}"));
        }
        seen.push(format!("k={k}: {g}<{n}"));
    }
    Ok(seen.join(", "))
}

const MV: &str = "A(i) := b*c if b=B(i)(j), c=C(j), card(B,{n},{m}), card(C,{m}), 0<=i<{n}, 0<=j<{m}";

fn tensor_formats() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, m) = (r.gen_range(1..=8usize), r.gen_range(1..=8usize));
        let mut mat: Vec<f64> = (0..n * m).map(|_| r.gen_range(-4.0..4.0)).collect();
        let mut cells: Vec<usize> = (0..n * m).collect();
        cells.shuffle(&mut r);
        let zeros = (n * m * 3).div_ceil(10) + r.gen_range(0..=n * m / 3);
        for &c in cells.iter().take(zeros) {
            mat[c] = 0.0;
        }
        let vec: Vec<f64> = (0..m).map(|_| r.gen_range(-4.0..4.0)).collect();
        let want = dense_mv(n, m, &mat, &vec);
        let p = parse(&MV.replace("{n}", &n.to_string()).replace("{m}", &m.to_string())).unwrap();
        for format in TensorFormat::ALL {
            let lower = LowerTensor {
                tensors: vec!["B".into()],
                prefix: String::new(),
            };
            let (lowered, encodings) = lower.apply(&p, format).map_err(|d| format!("{format}: {d:?}"))?;
            let mut db = Database::new();
            db.insert("B", Relation::dense(vec![n, m], mat.clone()).unwrap());
            db.insert("C", Relation::dense(vec![m], vec.clone()).unwrap());
            for e in &encodings {
                e.install(&mut db).map_err(|d| d.to_string())?;
            }
            let (out, _) = eval(&lowered, db, Mode::SemiNaive)?;
            let a = out.get("A").unwrap();
            for (i, w) in want.iter().enumerate() {
                let got = a.get(&[Value::Int(i as i64)]).as_f64().unwrap_or(0.0);
                let d = (got - w).abs();
                if d > 1e-9 {
                    return Err(format!("{format} {n}x{m} row {i}: {got} vs {w}"));
                }
                worst = worst.max(d);
            }
        }
    }
    Ok(format!("max |delta| {worst:.1e}"))
}

const TC: &str = "T(x,y) := E(x,y)\nT(x,y) := E(x,z), T(z,y)";

fn closure(edges: &[(usize, usize)], mode: Mode) -> Result<(BTreeSet<(usize, usize)>, u64), String> {
    let rows: Vec<Vec<i64>> = edges.iter().map(|&(a, b)| vec![a as i64, b as i64]).collect();
    let mut db = Database::new();
    db.insert("E", set_relation(&rows, 2));
    let (out, rep) = eval(&parse(TC).unwrap(), db, mode)?;
    let pairs = int_rows(out.get("T").unwrap())
        .into_iter()
        .map(|r| (r[0] as usize, r[1] as usize))
        .collect();
    Ok((pairs, rep.derivations()))
}

fn fixpoint() -> Outcome {
    let mut r = rng(5);
    for g in 0..100 {
        let n = r.gen_range(1..=12usize);
        let p = r.gen_range(0.05..0.4);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|_| r.gen_bool(p))
            .collect();
        let want = warshall(n, &edges);
        let (naive, dn) = closure(&edges, Mode::Naive)?;
        let (semi, ds) = closure(&edges, Mode::SemiNaive)?;
        if naive != want || semi != want {
            return Err(format!("graph {g}: closure differs from the oracle"));
        }
        if ds > dn {
            return Err(format!("graph {g}: semi-naive {ds} > naive {dn} derivations"));
        }
    }
    for len in 4..=12 {
        let chain: Vec<(usize, usize)> = (0..len).map(|k| (k, k + 1)).collect();
        let (_, dn) = closure(&chain, Mode::Naive)?;
        let (_, ds) = closure(&chain, Mode::SemiNaive)?;
        if ds >= dn {
            return Err(format!("chain {len}: semi-naive {ds} >= naive {dn}"));
        }
    }
    Ok("100 graphs, chains 4..=12".into())
}

/// Source text with comments and whitespace removed.
fn bare(src: &str) -> String {
    let mut out = String::new();
    let mut depth = 0;
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' => depth += 1,
            '}' if depth > 0 => depth -= 1,
            _ if depth > 0 => {}
            '/' if chars.peek() == Some(&'/') => {
                while chars.next_if(|&c| c != '\n').is_some() {}
            }
            c if c.is_whitespace() => {}
            c => out.push(c),
        }
    }
    out
}

fn parser_round_trip() -> Outcome {
    runner(500)
        .run(&arb_program(), |p| {
            let text = print(&p);
            let back = parse(&text).map_err(|e| proptest::test_runner::TestCaseError::fail(format!("{e}\n{text}")))?;
            proptest::prop_assert_eq!(back, p, "{}", text);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let mut files = 0;
    for sub in ["reference", "programs", "fixtures"] {
        for f in corpus_files(sub) {
            let src = fs::read_to_string(&f).unwrap();
            let printed = print(&program_at(&f)?);
            if bare(&printed) != bare(&src) {
                return Err(format!("{} changes under print(parse(_))\n{printed}", f.display()));
            }
            files += 1;
        }
    }
    Ok(format!("500 ASTs, {files} corpus files"))
}

fn frontends() -> Outcome {
    let lines = einsum_corpus();
    for line in &lines {
        let p = parse_einsum(line).and_then(|e| einsum_to_hojabr(&e)).map_err(|d| format!("{line}: {d}"))?;
        require(&p, "einsum-core").map_err(|d| format!("{line}: {d:?}"))?;
        let back = hojabr_to_einsum(&p).map_err(|d| format!("{line}: {d:?}"))?;
        if back.to_string() != *line {
            return Err(format!("einsum `{line}` came back as `{back}`"));
        }
    }
    let schema = sql_schema();
    let queries = sql_corpus();
    let mut parsed = Vec::new();
    for q in &queries {
        let sq = parse_sql(q).map_err(|d| format!("{q}: {d}"))?;
        let p = sql_to_hojabr(&sq, &schema, "Q").map_err(|d| format!("{q}: {d}"))?;
        require(&p, "sql-core").map_err(|d| format!("{q}: {d:?}"))?;
        let back = hojabr_to_sql(&p, &schema).map_err(|d| format!("{q}: {d:?}"))?;
        let again = parse_sql(&back.to_string())
            .and_then(|b| sql_to_hojabr(&b, &schema, "Q"))
            .map_err(|d| format!("{back}: {d}"))?;
        if canonical(&again) != canonical(&p) {
            return Err(format!("sql `{q}` came back as `{back}`"));
        }
        parsed.push((sq, p));
    }
    for seed in 0..50 {
        let tables = random_sql_tables(seed);
        for (q, p) in &parsed {
            let (db, _) = eval(p, sql_database(&tables), Mode::SemiNaive)?;
            let got = hojabr_rows(q, db.get("Q").unwrap());
            let want = sql_oracle(q, &tables);
            if !agree(&want, &got) {
                return Err(format!("seed {seed}: {q}\nwant {want:?}\ngot {got:?}"));
            }
        }
    }
    Ok(format!("{} einsum, {} sql, 50 databases", lines.len(), queries.len()))
}

const FIXTURES: &[(&str, Code, bool)] = &[
    ("unsafe_negation", Code::UnsafeNegation, false),
    ("unstratifiable", Code::Unstratifiable, false),
    ("type_conflict", Code::TypeConflict, false),
    // Integrity violations warn by default and fail in strict mode.
    ("integrity_fdep", Code::IntegrityFdep, true),
    ("integrity_pkey", Code::IntegrityPkey, true),
    ("integrity_unique", Code::IntegrityUnique, true),
];

fn static_checks() -> Outcome {
    let dir = corpus_dir().join("fixtures");
    for (stem, code, data_level) in FIXTURES {
        let f = dir.join(format!("{stem}.hjb"));
        let p = program_at(&f)?;
        let db = data_for(&f)?;
        let diags = |strict| match check_program(&p, &db, strict) {
            Ok(c) => c.diagnostics,
            Err(d) => d,
        };
        let lenient = diags(false);
        let strict = diags(true);
        let has = |ds: &[hojabr::Diagnostic], error: bool| ds.iter().any(|d| d.code == *code && d.is_error() == error);
        let ok = if *data_level {
            has(&lenient, false) && has(&strict, true)
        } else {
            has(&lenient, true)
        };
        if !ok {
            return Err(format!("{stem}: expected {code:?}, got {lenient:?}"));
        }
    }
    for f in corpus_files("reference") {
        let p = program_at(&f)?;
        let db = data_for(&f)?;
        match check_program(&p, &db, false) {
            Ok(c) if !c.diagnostics.iter().any(|d| d.is_error()) => {}
            Ok(c) => return Err(format!("{}: {:?}", f.display(), c.diagnostics)),
            Err(d) => return Err(format!("{}: {d:?}", f.display())),
        }
    }
    Ok(format!("{} fixtures", FIXTURES.len()))
}

fn semiring_laws() -> Outcome {
    runner(1000)
        .run(&semiring_triple(), |(s, a, b, c)| semiring_laws_hold(s, &a, &b, &c))
        .map_err(|e| e.to_string())?;
    Ok("1000 cases".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("reference corpus parses, checks and runs", 5, corpus_fidelity),
        ("join lowerings match brute force", 30, join_equivalence),
        ("generic join enumerates less than nested loops on skew", 10, work_reduction),
        ("dense, coo and csr matrix-vector agree", 10, tensor_formats),
        ("transitive closure matches warshall in both modes", 20, fixpoint),
        ("parser round trip", 10, parser_round_trip),
        ("sql and einsum frontends round trip and agree", 30, frontends),
        ("fixtures raise their diagnostics", 5, static_checks),
        ("semiring laws", 5, semiring_laws),
    ];
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let within = took < Duration::from_secs(*budget);
        let (tag, detail) = match (&result, within) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the {budget}s budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {} {tag} {name} ({:.2}s, budget {budget}s): {detail}", k + 1, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
