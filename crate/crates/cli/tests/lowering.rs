//! Lowering policy: strict mode, alias resolution, error reporting.

use obliq_cli::driver::Driver;
use obliq_cli::queries::PlainDb;
use obliq_cli::sql::parse;

fn toy_db() -> PlainDb {
    let mut db = PlainDb::new();
    db.insert(
        "r".to_string(),
        (
            vec!["id".to_string(), "k".to_string()],
            vec![vec![1, 2], vec![3, 4]],
        ),
    );
    db
}

fn expect_err(r: anyhow::Result<obliq_cli::lower::Lowered>) -> anyhow::Error {
    match r {
        Ok(_) => panic!("expected a lowering error"),
        Err(e) => e,
    }
}

#[test]
fn strict_mode_rejects_raw_base_columns() {
    let driver = Driver::default();
    let err = expect_err(driver.lower_sql("SELECT id FROM r WHERE k = 1", &toy_db(), true));
    assert!(err.to_string().contains("strict mode"), "{err}");
    // the same query is accepted without strict mode
    driver
        .lower_sql("SELECT id FROM r WHERE k = 1", &toy_db(), false)
        .unwrap();
}

#[test]
fn strict_mode_accepts_aggregates_and_distinct() {
    let driver = Driver::default();
    driver
        .lower_sql("SELECT DISTINCT id FROM r", &toy_db(), true)
        .unwrap();
    driver
        .lower_sql("SELECT k, COUNT(*) FROM r GROUP BY k", &toy_db(), true)
        .unwrap();
    driver
        .lower_sql("SELECT MIN(k) FROM r", &toy_db(), true)
        .unwrap();
}

#[test]
fn unknown_names_are_reported() {
    let driver = Driver::default();
    let err = expect_err(driver.lower_sql("SELECT DISTINCT nope FROM r", &toy_db(), true));
    assert!(err.to_string().contains("nope"), "{err}");
    let err = expect_err(driver.lower_sql("SELECT DISTINCT id FROM missing", &toy_db(), true));
    assert!(err.to_string().contains("missing"), "{err}");
}

#[test]
fn select_star_is_rejected_as_unsupported() {
    match parse("SELECT * FROM r") {
        Err(obliq_cli::sql::SqlError::Unsupported(_)) => {}
        other => panic!("expected unsupported, got {other:?}"),
    }
}

#[test]
fn group_by_having_over_count_lowered() {
    let driver = Driver::default();
    let lowered = driver
        .lower_sql(
            "SELECT k FROM r GROUP BY k HAVING COUNT(*) > 1",
            &toy_db(),
            true,
        )
        .unwrap();
    let json = lowered.plan.fingerprint();
    assert!(json.contains("GroupBy"));
    assert!(json.contains("a_g"));
}

#[test]
fn three_way_join_routes_atoms_to_the_right_join() {
    let mut db = PlainDb::new();
    db.insert(
        "a".to_string(),
        (vec!["x".to_string()], vec![vec![1], vec![2]]),
    );
    db.insert(
        "b".to_string(),
        (vec!["y".to_string()], vec![vec![1], vec![3]]),
    );
    db.insert(
        "c".to_string(),
        (vec!["z".to_string()], vec![vec![1], vec![2]]),
    );
    let driver = Driver::default();
    let run = driver
        .run_sql(
            "SELECT DISTINCT a.x FROM a, b, c WHERE a.x = b.y AND b.y = c.z",
            &db,
            true,
        )
        .unwrap();
    let oracle = driver
        .oracle_sql(
            "SELECT DISTINCT a.x FROM a, b, c WHERE a.x = b.y AND b.y = c.z",
            &db,
            true,
        )
        .unwrap();
    assert_eq!(
        obliq_core::oracle::normalize(run.outcome.opened.rows.clone()),
        obliq_core::oracle::normalize(oracle)
    );
    assert_eq!(run.outcome.opened.rows, vec![vec![1]]);
}

#[test]
fn filtered_top_k_matches_oracle_without_strict_mode() {
    let mut db = PlainDb::new();
    db.insert(
        "r".to_string(),
        (
            vec!["a".to_string(), "b".to_string()],
            vec![
                vec![5, 1],
                vec![3, 0],
                vec![9, 1],
                vec![1, 1],
                vec![7, 0],
                vec![2, 1],
            ],
        ),
    );
    let driver = Driver::default();
    let sql = "SELECT a FROM r WHERE b = 1 ORDER BY a DESC LIMIT 2";
    let run = driver.run_sql(sql, &db, false).unwrap();
    let oracle = driver.oracle_sql(sql, &db, false).unwrap();
    // top-2 passing rows, in order
    assert_eq!(run.outcome.opened.rows, vec![vec![9], vec![5]]);
    assert_eq!(run.outcome.opened.rows, oracle);
}
