mod common;

use std::sync::Arc;

use segsql_bench::condition::{make_condition, ConditionError};
use segsql_bench::dataset::{load_dataset, DatasetBundle, Provenance};
use segsql_bench::metrics::ves;
use segsql_bench::report::{group_rows, render_csv, render_text, BenchmarkReport, GroupBy};
use segsql_bench::runner::{run_benchmark, RunSettings};
use segsql_core::agents::{build_backend, BackendSpec, OracleReasoner, Reasoner};
use segsql_core::orchestrator::Condition;

fn oracle() -> Arc<dyn Reasoner> {
    Arc::new(OracleReasoner::new())
}

#[test]
fn conditions_assign_the_expected_private_schemas() {
    let b = common::toy();
    let full = b.schema("music").unwrap();
    let one_all = make_condition(&b, Condition::OneAll, 1, 0).unwrap();
    assert_eq!(one_all.privates["music"], vec![full.clone()]);
    let two_all = make_condition(&b, Condition::TwoAll, 2, 0).unwrap();
    assert_eq!(two_all.privates["music"], vec![full.clone(), full.clone()]);
    let two_part = make_condition(&b, Condition::TwoPart, 2, 0).unwrap();
    let parts = &two_part.privates["music"];
    assert_eq!(parts.iter().map(|p| p.table_count()).collect::<Vec<_>>(), [3, 3]);
    assert!(parts[0].table_names().all(|t| !parts[1].contains_table(t)));
    let one_part = make_condition(&b, Condition::OnePart, 1, 0).unwrap();
    assert_eq!(one_part.privates["music"][0].table_count(), 3);
    assert!(matches!(
        make_condition(&b, Condition::TwoPart, 3, 0),
        Err(ConditionError::AgentCount { expected: 2, .. })
    ));
    assert!(matches!(make_condition(&b, Condition::Custom, 7, 0), Err(ConditionError::Partition { .. })));
    assert_eq!(make_condition(&b, Condition::Custom, 4, 0).unwrap().privates["airline"].len(), 4);
}

#[test]
fn report_agrees_with_its_records() {
    let b = common::toy();
    let bp = make_condition(&b, Condition::OnePart, 1, 0).unwrap();
    let run = run_benchmark(&b, &bp, oracle(), &RunSettings::default()).unwrap();
    let r = &run.report;
    let n = run.records.len() as f64;
    let mean_ex = 100.0 * run.records.iter().filter(|x| x.exec_match).count() as f64 / n;
    assert!((r.overall.ex.unwrap() - mean_ex).abs() < 1e-9);
    let weighted: f64 = r.buckets.values().map(|b| b.ex.unwrap() * b.count as f64).sum::<f64>() / n;
    assert!((weighted - r.overall.ex.unwrap()).abs() < 1e-9);
    assert_eq!(r.overall.ves, Some(ves(&run.records).unwrap()));
    for rec in &run.records {
        assert!(!rec.exec_match || rec.valid);
        assert!(rec.gold_runtime >= 0.0 && rec.pred_runtime >= 0.0);
    }
    let recomputed = BenchmarkReport::from_records(
        &run.records,
        serde_json::from_value(serde_json::json!({
            "condition": r.condition, "n_agents": r.n_agents, "shots": r.shots,
            "seed": r.seed, "timing": r.timing, "config": r.config
        }))
        .unwrap(),
    );
    assert_eq!(&recomputed, r);
}

#[test]
fn empty_bundle_gives_an_explicitly_empty_report() {
    let mut b = common::toy();
    b.questions.clear();
    let bp = make_condition(&b, Condition::TwoPart, 2, 0).unwrap();
    let run = run_benchmark(&b, &bp, oracle(), &RunSettings::default()).unwrap();
    assert!(run.report.empty);
    assert_eq!(run.report.overall.count, 0);
    assert_eq!(run.report.overall.ex, None);
    assert_eq!(run.report.overall.ves, None);
    let rows = group_rows(&run.records, GroupBy::Difficulty);
    assert_eq!(render_text(&rows).lines().count(), 1);
    assert_eq!(render_csv(&rows), "group,count,ex,em,ves\n");
}

#[test]
fn difficulty_table_lists_four_buckets() {
    let b = common::toy();
    let bp = make_condition(&b, Condition::TwoPart, 2, 0).unwrap();
    let run = run_benchmark(&b, &bp, oracle(), &RunSettings::default()).unwrap();
    let rows = group_rows(&run.records, GroupBy::Difficulty);
    let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["easy", "medium", "hard", "extra"]);
    let by_agent = group_rows(&run.records, GroupBy::Agent);
    assert_eq!(by_agent.len(), 1);
    assert_eq!(by_agent[0].0, "Agent-2");
}

#[test]
fn traces_are_written_per_question() {
    let b = common::toy().filter_questions(&["music-07".to_string(), "retail-01".to_string()]);
    let dir = tempfile::tempdir().unwrap();
    let settings = RunSettings {
        trace_dir: Some(dir.path().join("traces")),
        ..RunSettings::default()
    };
    let bp = make_condition(&b, Condition::TwoPart, 2, 0).unwrap();
    let run = run_benchmark(&b, &bp, oracle(), &settings).unwrap();
    assert_eq!(run.records.len(), 2);
    for id in ["music-07", "retail-01"] {
        let text = std::fs::read_to_string(dir.path().join("traces").join(format!("{id}.json"))).unwrap();
        let trace: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(trace["question_id"], id);
    }
}

#[test]
fn replay_without_a_recording_fails_the_question_but_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("empty.jsonl");
    std::fs::write(&cassette, "").unwrap();
    let backend = build_backend(&BackendSpec::Replay {
        cassette,
        model: "m".into(),
        temperature: 0.0,
    })
    .unwrap();
    let b = common::toy().filter_questions(&["airline-01".to_string()]);
    let bp = make_condition(&b, Condition::TwoPart, 2, 0).unwrap();
    let run = run_benchmark(&b, &bp, backend, &RunSettings::default()).unwrap();
    let rec = &run.records[0];
    assert!(!rec.exec_match && !rec.valid);
    assert!(rec.predicted_sql.is_none());
    assert!(rec.error.as_deref().unwrap().contains("no recorded exchange"), "{:?}", rec.error);
    assert_eq!(run.report.episodes.failed, 1);
}

#[test]
fn a_full_run_leaves_database_files_untouched() {
    let b: DatasetBundle = load_dataset(&common::toy_root(), Provenance::Toy).unwrap();
    let before: Vec<Vec<u8>> = b.databases.values().map(|p| std::fs::read(p).unwrap()).collect();
    let bp = make_condition(&b, Condition::TwoAll, 2, 0).unwrap();
    run_benchmark(&b, &bp, Arc::new(OracleReasoner::with_recall(0.5)), &RunSettings::default()).unwrap();
    let after: Vec<Vec<u8>> = b.databases.values().map(|p| std::fs::read(p).unwrap()).collect();
    assert!(before == after);
}
