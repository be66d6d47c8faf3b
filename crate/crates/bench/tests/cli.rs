mod common;

use std::path::Path;
use std::process::{Command, Output};

fn segsql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segsql"))
        .args(args)
        .env_remove("SEGSQL_TEST_MISSING_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toy_args<'a>(root: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--dataset", root, "--provenance", "toy"];
    v.extend_from_slice(rest);
    v
}

#[test]
fn partition_listing_is_stable() {
    let root = common::toy_root();
    let root = root.to_str().unwrap();
    let mut args = vec!["partition"];
    args.extend(toy_args(root, &["--condition", "TwoPart", "--seed", "0"]));
    let a = segsql(&args);
    let b = segsql(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("  agent-0    student, department, club\n"));
    assert!(stdout(&a).contains("  agent-1    course, enrollment, instructor\n"));

    let mut args = vec!["partition"];
    args.extend(toy_args(root, &["--condition", "OneAll"]));
    let out = stdout(&segsql(&args));
    assert!(out.contains("agent-0    airline, flight, aircraft, airport, pilot, ticket"));
    assert!(!out.contains("agent-1"));
}

fn four_table_dataset(dir: &Path) {
    let db_dir = dir.join("database/shop");
    std::fs::create_dir_all(&db_dir).unwrap();
    let conn = rusqlite::Connection::open(db_dir.join("shop.sqlite")).unwrap();
    conn.execute_batch("CREATE TABLE a (id INTEGER); CREATE TABLE b (id INTEGER); CREATE TABLE c (id INTEGER); CREATE TABLE d (id INTEGER);")
        .unwrap();
    let tables = serde_json::json!([{
        "db_id": "shop",
        "table_names_original": ["a", "b", "c", "d"],
        "column_names_original": [[-1, "*"], [0, "id"], [1, "id"], [2, "id"], [3, "id"]],
        "column_types": ["text", "number", "number", "number", "number"],
        "primary_keys": [], "foreign_keys": []
    }]);
    std::fs::write(dir.join("tables.json"), tables.to_string()).unwrap();
    std::fs::write(dir.join("dev.json"), "[]").unwrap();
}

#[test]
fn infeasible_split_exits_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    four_table_dataset(dir.path());
    let out = segsql(&["partition", "--dataset", dir.path().to_str().unwrap(), "--agents", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot split 4 tables into 5"));
    let ok = segsql(&["partition", "--dataset", dir.path().to_str().unwrap(), "--agents", "4"]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn exit_codes_separate_config_and_dataset_errors() {
    let root = common::toy_root();
    let root = root.to_str().unwrap();
    assert_eq!(segsql(&["run", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(segsql(&["run"]).status.code(), Some(1));
    let mut args = vec!["run"];
    args.extend(toy_args(root, &["--condition", "TwoPart", "--agents", "3"]));
    assert_eq!(segsql(&args).status.code(), Some(1));
    assert_eq!(segsql(&["run", "--dataset", "/nonexistent/path", "--condition", "OneAll"]).status.code(), Some(2));
    let mut args = vec!["run"];
    args.extend(toy_args(root, &["--question-id", "no-such-question"]));
    assert_eq!(segsql(&args).status.code(), Some(2));
    let mut args = vec!["run"];
    args.extend(toy_args(
        root,
        &["--backend", "remote", "--endpoint", "http://127.0.0.1:9", "--model", "m", "--api-key-env", "SEGSQL_TEST_MISSING_KEY"],
    ));
    let out = segsql(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SEGSQL_TEST_MISSING_KEY"));
    assert_eq!(segsql(&["--help"]).status.code(), Some(0));
}

#[test]
fn question_filter_yields_one_record_and_outputs_are_written() {
    let root = common::toy_root();
    let out_dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run"];
    args.extend(toy_args(
        root.to_str().unwrap(),
        &["--condition", "TwoPart", "--question-id", "music-09", "--out", out_dir.path().to_str().unwrap()],
    ));
    let out = segsql(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("EX 100.00"));
    let records = std::fs::read_to_string(out_dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 1);
    for f in ["report.json", "config.json", "summary.csv"] {
        assert!(out_dir.path().join(f).is_file(), "{f}");
    }
    let records_path = out_dir.path().join("records.jsonl");
    let report_path = out_dir.path().join("report.json");
    let check = segsql(&["report", records_path.to_str().unwrap(), "--check", report_path.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(0));
    assert!(stdout(&check).contains("overall matches the stored report"));
}

#[test]
fn flags_override_the_config_file() {
    let root = common::toy_root();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "dataset": root, "provenance": "toy", "condition": "OnePart", "seed": 3,
        "backend": {"kind": "oracle", "recall": 0.9}, "question_ids": ["retail-02"]
    });
    std::fs::write(&config, body.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = segsql(&[
        "run", "--config", config.to_str().unwrap(), "--condition", "TwoAll", "--no-checking",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["condition"], "TwoAll");
    assert_eq!(echo["agents"], 2);
    assert_eq!(echo["seed"], 3);
    assert_eq!(echo["backend"]["recall"], 0.9);
    assert_eq!(echo["ablations"]["checking"], false);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"], echo);

    std::fs::write(&config, r#"{"not_a_field": 1}"#).unwrap();
    assert_eq!(segsql(&["run", "--config", config.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn report_on_empty_records_prints_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    std::fs::write(&path, "").unwrap();
    let out = segsql(&["report", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "group,count,ex,em,ves\n");
}

#[test]
fn episode_prints_a_trace_with_rewards() {
    let root = common::toy_root();
    let mut args = vec!["episode"];
    args.extend(toy_args(root.to_str().unwrap(), &["--condition", "TwoPart", "--question-id", "airline-08"]));
    let out = segsql(&args);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["trace"]["termination"], "accepted");
    assert_eq!(doc["rewards"]["r_s"], 1.0);
}
