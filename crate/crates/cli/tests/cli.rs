use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

fn hojabr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hojabr")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_csv() {
    let nn = corpus("reference/nn.hjb");
    let data = corpus("reference/nn.data.json");
    let o = hojabr(&["run", path(&nn), "--data", path(&data), "--relation", "Y"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("# Y\n"), "{out}");
    assert!(out.lines().any(|l| l == "0,3.0"), "{out}");
}

#[test]
fn run_writes_json_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let reach = corpus("programs/reach.hjb");
    let data = corpus("programs/reach.data.json");
    let o = hojabr(&[
        "run",
        path(&reach),
        "--data",
        path(&data),
        "--output",
        "json",
        "--mode",
        "naive",
        "--report",
        path(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(doc.get("T").is_some() && doc.get("Stuck").is_some());
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(rep.is_object());
}

#[test]
fn hash_lowering_of_the_nested_loop_join() {
    let o = hojabr(&["lower", path(&corpus("reference/join_nlj.hjb")), "--strategy", "hash"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "Rh(b)(a) := R(a, b)\nSh(b)(c) := S(b, c)\nQ(a,b,c) := Rh(b)(a), Sh(b)(c)\n"
    );
}

#[test]
fn lift_undoes_lowering() {
    let dir = tempfile::tempdir().unwrap();
    let lowered = dir.path().join("lowered.hjb");
    let o = hojabr(&["lower", path(&corpus("reference/join_nlj.hjb")), "--strategy", "generic"]);
    std::fs::write(&lowered, stdout(&o)).unwrap();
    let o = hojabr(&["lift", path(&lowered)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Q(a,b,c) := R(a, b), S(b, c)\n");
}

#[test]
fn integrity_violations_fail_only_when_strict() {
    let f = corpus("fixtures/integrity_fdep.hjb");
    let data = corpus("fixtures/integrity_fdep.data.json");
    let lenient = hojabr(&["check", path(&f), "--data", path(&data)]);
    assert_eq!(lenient.status.code(), Some(0));
    assert!(stderr(&lenient).contains("integrity-fdep"));
    let strict = hojabr(&["check", path(&f), "--data", path(&data), "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn static_errors_exit_one_with_json_lines() {
    let f = corpus("fixtures/unsafe_negation.hjb");
    let data = corpus("fixtures/unsafe_negation.data.json");
    let o = hojabr(&["--json", "check", path(&f), "--data", path(&data)]);
    assert_eq!(o.status.code(), Some(1));
    let diags: Vec<serde_json::Value> = stderr(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(
        diags.iter().any(|d| d["code"] == "unsafe-negation" && d["severity"] == "error"),
        "{diags:?}"
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(hojabr(&["run"]).status.code(), Some(2));
    assert_eq!(hojabr(&["lower", "x.hjb", "--strategy", "bogus"]).status.code(), Some(2));
}

#[test]
fn sql_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let schema = corpus("sql/schema.json");
    let q = dir.path().join("q.sql");
    std::fs::write(&q, "SELECT R.a, S.c FROM R, S WHERE R.b = S.b").unwrap();
    let o = hojabr(&["sql", path(&q), "--to-hojabr", "--schema", path(&schema)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let h = dir.path().join("q.hjb");
    std::fs::write(&h, stdout(&o)).unwrap();
    let o = hojabr(&["sql", path(&h), "--from-hojabr", "--schema", path(&schema)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "SELECT R.a, S.c FROM R, S WHERE R.b = S.b;\n");
}

#[test]
fn einsum_corpus_survives_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus("einsum/exprs.ein");
    let o = hojabr(&["einsum", path(&src), "--to-hojabr"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let h = dir.path().join("e.hjb");
    std::fs::write(&h, stdout(&o)).unwrap();
    let o = hojabr(&["einsum", path(&h), "--from-hojabr"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), std::fs::read_to_string(src).unwrap());
}

#[test]
fn missing_files_are_io_errors() {
    let o = hojabr(&["fmt", "/nonexistent/prog.hjb"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("io"), "{}", stderr(&o));
}
