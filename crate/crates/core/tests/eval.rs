use hojabr::eval::{dump, run_program, EvalConfig, Mode};
use hojabr::store::{read_csv, Csr, Database, Relation, Semiring};
use hojabr::{parse, Code, Value};

fn csv(db: &mut Database, name: &str, text: &str) {
    db.insert(name, read_csv(text, None, None).unwrap());
}

fn dense(db: &mut Database, name: &str, shape: &[usize], data: &[f64]) {
    db.insert(name, Relation::dense(shape.to_vec(), data.to_vec()).unwrap());
}

fn run(src: &str, db: Database) -> Database {
    run_with(src, db, &EvalConfig::default())
}

fn run_with(src: &str, db: Database, cfg: &EvalConfig) -> Database {
    let p = parse(src).unwrap();
    match run_program(&p, db, cfg) {
        Ok((db, _)) => db,
        Err(e) => panic!("{e:?}"),
    }
}

fn real(db: &Database, name: &str, key: &[i64]) -> f64 {
    let k: Vec<Value> = key.iter().map(|x| Value::Int(*x)).collect();
    db.get(name).unwrap().get(&k).as_f64().unwrap_or(0.0)
}

const NN: &str = "\
J(i,a,b) := R(i, a), S(i, b)
X(i, j) := v if J(i,a,b), match j case 0 -> v=a case 1 -> v=b
Z1(i, k) := x*w+b if x=X(i,j), w=W1(j,k), b=B1(k)
H1(i, k) := relu(v) if v=Z1(i, k)
Y(i) := x*w+b if x=H1(i,j), w=W2(j), b=B2()
";

#[test]
fn two_layer_network() {
    let mut db = Database::new();
    csv(&mut db, "R", "i,a\n0,1.0\n");
    csv(&mut db, "S", "i,b\n0,2.0\n");
    dense(&mut db, "W1", &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    dense(&mut db, "B1", &[2], &[0.0, 0.0]);
    dense(&mut db, "W2", &[2], &[1.0, 1.0]);
    dense(&mut db, "B2", &[], &[0.0]);
    let p = parse(NN).unwrap();
    let (db, report) = run_program(&p, db, &EvalConfig::default()).unwrap();
    assert_eq!(real(&db, "Y", &[0]), 3.0);
    assert_eq!(report.iterations.len(), 6);
}

#[test]
fn dense_broadcast_keeps_j() {
    let mut db = Database::new();
    dense(&mut db, "B", &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    dense(&mut db, "C", &[2], &[5.0, 6.0]);
    let db = run(
        "A(i)(j) := B(i)(j)*C(j) if card(B,n,m),card(C,m), card(A,n,m), 0<=i<n, 0<=j<m",
        db,
    );
    let a = db.get("A").unwrap();
    assert!(a.is_dense());
    assert_eq!(
        [real(&db, "A", &[0, 0]), real(&db, "A", &[0, 1]), real(&db, "A", &[1, 0]), real(&db, "A", &[1, 1])],
        [5.0, 12.0, 15.0, 24.0]
    );
}

#[test]
fn sum_and_max_over_a_vector() {
    let mut db = Database::new();
    csv(&mut db, "X", "i,__val\n0,2\n1,3\n");
    let db = run("S() := v if v=X(i)\nM() := max(v) if v=X(i)", db);
    assert_eq!(real(&db, "S", &[]), 5.0);
    assert_eq!(real(&db, "M", &[]), 3.0);
}

#[test]
fn generic_join_over_tries() {
    let mut db = Database::new();
    csv(&mut db, "R", "x,a\n1,1\n1,2\n");
    csv(&mut db, "S", "x,b\n1,9\n");
    csv(&mut db, "T", "x\n1\n2\n");
    let db = run(
        "Rh(x)(a) := R(x, a)\nSh(x)(b) := S(x, b)\n\
         Q(x,a,b) := Rh(x), (Rx:=Rh(x)), (Sx:=Sh(x)), T(x), Rx(a), Sx(b)",
        db,
    );
    assert_eq!(db.get("Q").unwrap().to_string(), "{(1,1,9), (1,2,9)}");
}

#[test]
fn transitive_closure_in_both_modes() {
    let tc = "T(x,y) := E(x,y)\nT(x,y) := E(x,z), T(z,y)";
    for mode in [Mode::Naive, Mode::SemiNaive] {
        let mut db = Database::new();
        csv(&mut db, "E", "x,y\n1,2\n2,3\n");
        let cfg = EvalConfig { mode, ..EvalConfig::default() };
        let db = run_with(tc, db, &cfg);
        assert_eq!(db.get("T").unwrap().to_string(), "{(1,2), (1,3), (2,3)}");
    }
}

#[test]
fn semi_naive_derives_less_on_a_chain() {
    let tc = "T(x,y) := E(x,y)\nT(x,y) := E(x,z), T(z,y)";
    let chain: String = (0..6).map(|i| format!("{},{}\n", i, i + 1)).collect();
    let derivations = |mode| {
        let mut db = Database::new();
        csv(&mut db, "E", &format!("x,y\n{chain}"));
        let p = parse(tc).unwrap();
        let (_, r) = run_program(&p, db, &EvalConfig { mode, ..EvalConfig::default() }).unwrap();
        r.derivations()
    };
    assert!(derivations(Mode::SemiNaive) < derivations(Mode::Naive));
}

#[test]
fn empty_edges_reach_fixpoint_at_once() {
    let mut db = Database::new();
    db.insert("E", Relation::flat(Semiring::Bool, 2));
    let p = parse("T(x,y) := E(x,y)\nT(x,y) := E(x,z), T(z,y)").unwrap();
    let (db, r) = run_program(&p, db, &EvalConfig::default()).unwrap();
    assert!(db.get("T").unwrap().is_empty());
    assert_eq!(r.iterations[1], 1);
}

#[test]
fn iteration_cap_is_reported() {
    let mut db = Database::new();
    csv(&mut db, "Z", "x\n0\n");
    let p = parse("N(x) := Z(x)\nN(y) := N(x), y = x + 1").unwrap();
    let cfg = EvalConfig {
        max_iterations: 20,
        ..EvalConfig::default()
    };
    let err = run_program(&p, db, &cfg).unwrap_err();
    assert_eq!(err[0].code, Code::NonTermination);
}

#[test]
fn csr_decode() {
    let mut db = Database::new();
    let csr = Csr {
        n: 2,
        p: vec![0, 1, 2],
        i: vec![1, 0],
        v: vec![3.0, 4.0],
    };
    csr.install(&mut db, "").unwrap();
    let db = run(
        "B_CSR(i)(j) := V(p) if (0<=i<n),(p1=P(i)), (p2=P(i+1)), (p1<=p<p2), (j=I(p))",
        db,
    );
    assert_eq!(db.get("B_CSR").unwrap().len(), 2);
    assert_eq!(real(&db, "B_CSR", &[0, 1]), 3.0);
    assert_eq!(real(&db, "B_CSR", &[1, 0]), 4.0);
}

#[test]
fn structured_convolution_matches_toeplitz() {
    let mut db = Database::new();
    dense(&mut db, "B_O", &[3, 1], &[1.0, 2.0, 3.0]);
    dense(&mut db, "C", &[1], &[1.0]);
    let db = run(
        "B_R(i,j)(i',j') := card(B_O,n,_),(1<=j<=i), (i<j+n), (j<n),(j'=0),(i'=i-j)\n\
         B(i)(j) := b if b=B_O(i)(j) or B_R(i,j)(i',j'), b=B_O(i')(j')\n\
         A(i)(j) := b*c if b=B(i)(j), c=C(j)",
        db,
    );
    // Column j of the Toeplitz matrix is the kernel shifted down by j rows.
    let kernel = [1.0, 2.0, 3.0];
    let (n, m) = (3usize, 1usize);
    let c = [1.0];
    for i in 0..n + m - 1 {
        for j in 0..m {
            let t = if i >= j && i - j < n { kernel[i - j] } else { 0.0 };
            assert_eq!(real(&db, "A", &[i as i64, j as i64]), t * c[j], "A({i})({j})");
        }
    }
}

#[test]
fn imperative_actions() {
    let mut db = Database::new();
    csv(&mut db, "E", "x\n1\n2\n3\n");
    let db = run(
        "K(x) := E(x)\nK(x) -= E(x), x = 2\nK(x) += E(x), y = x + 10, x = 1\nL(x) <- E(x), x > 2",
        db,
    );
    assert_eq!(db.get("K").unwrap().to_string(), "{(1), (3)}");
    assert_eq!(db.get("L").unwrap().to_string(), "{(3)}");
}

#[test]
fn ordered_head_with_top_k() {
    let mut db = Database::new();
    csv(&mut db, "R", "a,b\n3,1\n1,2\n2,3\n");
    let db = run("Q(a,b) := R(a,b), order(a), card(Q,2)", db);
    assert_eq!(db.get("Q").unwrap().to_string(), "{(1,2), (2,3)}");
}

#[test]
fn softmax_groups_by_leading_keys() {
    let mut db = Database::new();
    csv(&mut db, "X", "i,j,__val\n0,0,1\n0,1,1\n1,0,5\n");
    let db = run("P(i,j) := softmax(v) if v=X(i,j)", db);
    assert!((real(&db, "P", &[0, 0]) - 0.5).abs() < 1e-12);
    assert!((real(&db, "P", &[1, 0]) - 1.0).abs() < 1e-12);
}

#[test]
fn dump_is_sorted_by_name() {
    let mut db = Database::new();
    csv(&mut db, "B", "x\n2\n1\n");
    csv(&mut db, "A", "x\n1\n");
    assert_eq!(dump(&db), "A = {(1)}\nB = {(1), (2)}\n");
}
