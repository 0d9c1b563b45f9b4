mod common;

use common::*;
use hojabr::eval::{run_program, EvalConfig};
use hojabr::slang::{lift, lower_join, JoinStrategy};
use hojabr::store::Database;
use hojabr::{parse, print};
use proptest::prelude::*;
use std::collections::BTreeMap;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn print_then_parse_is_identity(p in arb_program()) {
        let text = print(&p);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p, "{}", text);
    }

    #[test]
    fn semiring_laws((s, a, b, c) in semiring_triple()) {
        semiring_laws_hold(s, &a, &b, &c)?;
    }
}

const JOINS: &[&str] = &[
    "Q(a,b,c) := R(a,b), S(b,c)",
    "Q(x,a,b) := R(x,a), S(x,b), T(x)",
    "Q(a,b,c) := R(a,b), S(b,c), T(c,a)",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn join_lowerings_preserve_results(seed in any::<u64>(), which in 0..JOINS.len()) {
        let mut r = rng(seed);
        let p = parse(JOINS[which]).unwrap();
        let mut db = Database::new();
        let arity: BTreeMap<&str, usize> = [("R", 2), ("S", 2), ("T", if which == 1 { 1 } else { 2 })].into();
        for (name, n) in &arity {
            db.insert(*name, set_relation(&random_table(&mut r, *n, 12, 4), *n));
        }
        let (base, _) = run_program(&p, db.clone(), &EvalConfig::default()).unwrap();
        let want = int_rows(base.get("Q").unwrap());
        for s in JoinStrategy::ALL {
            let Ok(lowered) = lower_join(&p, s) else { continue };
            let (out, _) = run_program(&lowered, db.clone(), &EvalConfig::default())
                .map_err(|e| TestCaseError::fail(format!("{s}: {e:?}\n{lowered}")))?;
            prop_assert_eq!(int_rows(out.get("Q").unwrap()), want.clone(), "{}", s);
            prop_assert_eq!(lift(&lowered).unwrap(), lift(&p).unwrap());
        }
    }
}
