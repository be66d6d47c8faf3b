mod common;

use segsql_bench::dataset::{load_dataset, DatasetError, Provenance};
use segsql_core::sql::parse_sql;
use segsql_core::SchemaRef;

#[test]
fn toy_corpus_loads_with_every_reference_resolved() {
    let b = common::toy();
    assert_eq!(b.schemas.len(), 4);
    assert_eq!(b.questions.len(), 48);
    assert!(b.warnings.is_empty(), "{:?}", b.warnings);
    for q in &b.questions {
        assert!(b.schema(&q.db_id).is_some());
        assert!(b.database(&q.db_id).unwrap().is_file());
        assert!(!q.gold_refs.is_empty(), "{}", q.question_id);
    }
}

#[test]
fn two_database_subset_gives_two_schemas_and_twenty_questions() {
    let dir = tempfile::tempdir().unwrap();
    common::toy_subset(dir.path(), &["music", "retail"], 20);
    let b = load_dataset(dir.path(), Provenance::Toy).unwrap();
    assert_eq!(b.schemas.len(), 2);
    assert_eq!(b.questions.len(), 20);
}

#[test]
fn foreign_keys_follow_the_column_index_pairs() {
    let b = common::toy();
    let s = b.schema("university").unwrap();
    // enrollment.student_id -> student.student_id
    assert!(s
        .foreign_keys()
        .iter()
        .any(|fk| fk.from.table_name == "enrollment" && fk.from.column_name == "student_id" && fk.to.table_name == "student"));
    let enrollment = s.table("enrollment").unwrap();
    assert_eq!(enrollment.primary_key(), ["student_id", "course_id"]);
}

#[test]
fn empty_questions_file_gives_an_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    common::toy_subset(dir.path(), &["music"], 0);
    std::fs::write(dir.path().join("dev.json"), "").unwrap();
    let b = load_dataset(dir.path(), Provenance::Toy).unwrap();
    assert!(b.questions.is_empty());
    assert_eq!(b.schemas.len(), 1);
}

#[test]
fn malformed_record_is_reported_with_file_and_index() {
    let dir = tempfile::tempdir().unwrap();
    common::toy_subset(dir.path(), &["music"], 3);
    std::fs::write(
        dir.path().join("dev.json"),
        r#"[{"db_id": "music", "question": "q", "query": "SELECT 1"}, {"db_id": "music"}]"#,
    )
    .unwrap();
    let err = load_dataset(dir.path(), Provenance::Toy).unwrap_err();
    assert!(matches!(err, DatasetError::Malformed { index: Some(1), .. }), "{err}");
    assert!(err.to_string().contains("dev.json record 1"));
}

#[test]
fn missing_layout_and_unknown_database_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), Provenance::SpiderDev), Err(DatasetError::MissingFile { .. })));
    common::toy_subset(dir.path(), &["music"], 1);
    std::fs::write(dir.path().join("dev.json"), r#"[{"db_id": "nowhere", "question": "q", "query": "SELECT 1"}]"#).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Provenance::Toy),
        Err(DatasetError::UnknownDatabase { index: 0, .. })
    ));
}

#[test]
fn bird_layout_reads_evidence_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    common::toy_subset(dir.path(), &["music"], 0);
    std::fs::rename(dir.path().join("tables.json"), dir.path().join("dev_tables.json")).unwrap();
    std::fs::rename(dir.path().join("database"), dir.path().join("dev_databases")).unwrap();
    std::fs::write(
        dir.path().join("dev.json"),
        r#"[{"question_id": 7, "db_id": "music", "question": "Oldest singer?", "evidence": "oldest refers to max(age)",
             "SQL": "SELECT T1.name FROM singer AS T1 ORDER BY T1.age DESC LIMIT 1", "difficulty": "simple"}]"#,
    )
    .unwrap();
    let b = load_dataset(dir.path(), Provenance::BirdDev).unwrap();
    let q = &b.questions[0];
    assert_eq!(q.question_id, "7");
    assert_eq!(q.evidence.as_deref(), Some("oldest refers to max(age)"));
    assert_eq!(q.difficulty_label.map(|d| d.as_str()), Some("simple"));
    assert!(q.gold_refs.contains(&SchemaRef::column("singer", "age")));
    assert!(parse_sql(q.gold_sql.as_deref().unwrap()).is_ok());
}
