use std::sync::Arc;

use proptest::prelude::*;
use segsql_core::agents::{AgentProfile, OracleReasoner, Question};
use segsql_core::orchestrator::{compute_rewards, run_episode, select_working_agent, EpisodeConfig, RewardConfig};
use segsql_core::sql::{canonicalize, parse_sql, semantic_check};
use segsql_core::{
    extract_subschema, merge_schemas, partition_schema, schema_contains, schema_match_score, PartitionMode, Schema,
    SchemaRef, SchemaSelection,
};

const TABLES: [&str; 6] = ["emp", "dept", "proj", "site", "task", "skill"];
const COLUMNS: [&str; 7] = ["id", "name", "age", "city", "dept_id", "budget", "title"];

/// A random sub-schema of one fixed universe, so any two draws merge.
fn arb_schema() -> impl Strategy<Value = Schema> {
    proptest::collection::vec(
        (0..TABLES.len(), proptest::collection::vec(any::<bool>(), COLUMNS.len())),
        0..5,
    )
    .prop_map(|picks| {
        let mut b = Schema::builder("db");
        let mut seen = Vec::new();
        for (t, mask) in picks {
            if seen.contains(&t) {
                continue;
            }
            seen.push(t);
            let mut cols: Vec<&str> = COLUMNS.iter().zip(&mask).filter(|(_, m)| **m).map(|(c, _)| *c).collect();
            if cols.is_empty() {
                cols.push("id");
            }
            b = b.table(TABLES[t], &cols);
            if cols.contains(&"id") {
                b = b.primary_key(&["id"]);
            }
        }
        b.build().unwrap()
    })
}

fn arb_selection(schema: Schema) -> impl Strategy<Value = (Schema, SchemaSelection)> {
    let n = schema.column_count().max(1);
    proptest::collection::vec(any::<bool>(), n).prop_map(move |mask| {
        let mut sel = SchemaSelection::new();
        for (i, r) in schema.column_refs().enumerate() {
            if mask[i % mask.len()] {
                sel.add_column(&r.table_name, &r.column_name);
            } else if i % 3 == 0 {
                sel.add_table(&r.table_name);
            }
        }
        (schema.clone(), sel)
    })
}

fn norm(s: &Schema) -> Schema {
    s.normalized()
}

proptest! {
    #[test]
    fn merge_is_a_semilattice(a in arb_schema(), b in arb_schema(), c in arb_schema()) {
        let m = |x: &Schema, y: &Schema| merge_schemas(x, y).unwrap();
        prop_assert_eq!(norm(&m(&a, &a)), norm(&a));
        prop_assert_eq!(norm(&m(&a, &b)), norm(&m(&b, &a)));
        prop_assert_eq!(norm(&m(&m(&a, &b), &c)), norm(&m(&a, &m(&b, &c))));
        prop_assert_eq!(m(&a, &Schema::empty("db")), a.clone());
        let ab = m(&a, &b);
        for r in a.refs().into_iter().chain(b.refs()) {
            prop_assert!(schema_contains(&ab, &r));
        }
    }

    #[test]
    fn extraction_respects_floor((source, sel) in arb_schema().prop_flat_map(arb_selection), delta in prop::sample::select(vec![0usize, 1, 2, 5])) {
        let out = extract_subschema(&source, &sel, delta).unwrap();
        prop_assert!(out.is_contained_in(&source));
        for e in sel.entries() {
            let size = source.table(&e.table).unwrap().columns().len();
            let got = out.table(&e.table).unwrap().columns().len();
            prop_assert_eq!(got, e.columns.len().max(delta.min(size)));
        }
        prop_assert_eq!(out.table_count(), sel.entries().len());
    }

    #[test]
    fn coverage_is_monotone_under_merge(a in arb_schema(), b in arb_schema(), c in arb_schema()) {
        let refs = c.refs();
        let m = merge_schemas(&a, &b).unwrap();
        let s = schema_match_score(&m, &refs);
        prop_assert!(s >= schema_match_score(&a, &refs) && s >= schema_match_score(&b, &refs));
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn equal_split_partitions(seed in any::<u64>(), parts in 1usize..=4) {
        let full = Schema::builder("db")
            .table("a", &["id"]).table("b", &["id"]).table("c", &["id"]).table("d", &["id"]).table("e", &["id"])
            .build().unwrap();
        let p = partition_schema(&full, parts, PartitionMode::EqualSplit, seed).unwrap();
        prop_assert_eq!(p.len(), parts);
        let mut names: Vec<String> = p.iter().flat_map(|s| s.table_names().map(str::to_string).collect::<Vec<_>>()).collect();
        names.sort();
        prop_assert_eq!(names, vec!["a", "b", "c", "d", "e"]);
        let sizes: Vec<usize> = p.iter().map(Schema::table_count).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(p, partition_schema(&full, parts, PartitionMode::EqualSplit, seed).unwrap());
    }

    #[test]
    fn clean_queries_stay_clean_as_schemas_grow(a in arb_schema(), b in arb_schema()) {
        for t in a.tables() {
            let cols: Vec<&str> = t.columns().iter().map(|c| c.name.as_str()).collect();
            let sql = format!("SELECT {} FROM {}", cols.join(", "), t.name());
            let ast = parse_sql(&sql).unwrap();
            prop_assert!(semantic_check(&ast, &a).is_empty());
            prop_assert!(semantic_check(&ast, &merge_schemas(&a, &b).unwrap()).is_empty());
        }
    }

    #[test]
    fn canonical_form_is_idempotent(
        cols in proptest::collection::vec(prop::sample::select(COLUMNS.to_vec()), 1..4),
        conds in proptest::collection::vec((prop::sample::select(COLUMNS.to_vec()), 0i32..50), 0..4),
        upper in any::<bool>(),
    ) {
        let mut sql = format!("SELECT {} FROM emp AS T1", cols.iter().map(|c| format!("T1.{c}")).collect::<Vec<_>>().join(", "));
        if !conds.is_empty() {
            let w: Vec<String> = conds.iter().map(|(c, v)| format!("T1.{c} > {v}")).collect();
            sql.push_str(&format!(" WHERE {}", w.join(" AND ")));
        }
        if upper {
            sql = sql.to_uppercase();
        }
        let once = canonicalize(&parse_sql(&sql).unwrap());
        prop_assert_eq!(canonicalize(&parse_sql(&once).unwrap()), once);
    }
}

fn demo_schema() -> Schema {
    Schema::builder("db")
        .table("emp", &["id", "name", "age", "dept_id"])
        .primary_key(&["id"])
        .table("dept", &["id", "title", "site_id"])
        .primary_key(&["id"])
        .table("site", &["id", "city"])
        .primary_key(&["id"])
        .table("proj", &["id", "budget", "dept_id"])
        .primary_key(&["id"])
        .foreign_key(("emp", "dept_id"), ("dept", "id"))
        .foreign_key(("dept", "site_id"), ("site", "id"))
        .foreign_key(("proj", "dept_id"), ("dept", "id"))
        .build()
        .unwrap()
}

#[test]
fn oracle_episodes_keep_global_monotone_and_telescope() {
    let full = demo_schema();
    let golds = [
        "SELECT count(*) FROM emp",
        "SELECT T1.name FROM emp AS T1 JOIN dept AS T2 ON T1.dept_id = T2.id WHERE T2.title = 'x'",
        "SELECT T3.city FROM dept AS T1 JOIN site AS T3 ON T1.site_id = T3.id JOIN proj AS T2 ON T2.dept_id = T1.id",
        "SELECT name FROM emp WHERE age > (SELECT avg(age) FROM emp)",
    ];
    let backend = Arc::new(OracleReasoner::with_recall(0.8));
    for seed in 0..60u64 {
        for agents in 1..=3usize {
            let parts = partition_schema(&full, agents, PartitionMode::EqualSplit, seed).unwrap();
            let roster: Vec<AgentProfile> = parts
                .into_iter()
                .enumerate()
                .map(|(i, s)| AgentProfile::new(format!("agent-{i}"), s, backend.clone()))
                .collect();
            let gold = golds[seed as usize % golds.len()];
            let q = Question::new(format!("q{seed}"), "db", "Which employees work on projects?")
                .with_gold(gold, &full)
                .unwrap();
            let cfg = EpisodeConfig {
                seed,
                ..EpisodeConfig::default()
            };
            let trace = run_episode(&q, &roster, &cfg).unwrap();
            assert!(trace.rounds.len() <= cfg.rounds_for(agents));
            for (i, r) in trace.rounds.iter().enumerate() {
                assert!(r.global_before.is_contained_in(&r.global_after));
                assert_eq!(select_working_agent(r.round, agents), i % agents);
            }
            let rep = compute_rewards(&trace, &q.gold_refs, &RewardConfig::default());
            let sum: f64 = rep.je_deltas.iter().sum();
            let end = trace.final_global().map_or(0.0, |g| schema_match_score(g, &q.gold_refs));
            let start = schema_match_score(&Schema::empty("db"), &q.gold_refs);
            assert!((sum - (end - start)).abs() < 1e-12);
            let again = run_episode(&q, &roster, &cfg).unwrap();
            assert_eq!(again, trace);
        }
    }
}

#[test]
fn scheduler_is_fair() {
    for n in 1..6 {
        for k in 1..5 {
            let mut counts = vec![0; n];
            for round in 1..=k * n {
                counts[select_working_agent(round, n)] += 1;
            }
            assert!(counts.iter().all(|&c| c == k));
        }
    }
}

#[test]
fn oracle_completeness_on_known_gold_refs() {
    let full = demo_schema();
    let q = Question::new("q", "db", "Cities of sites with projects")
        .with_gold(
            "SELECT T3.city FROM dept AS T1 JOIN site AS T3 ON T1.site_id = T3.id JOIN proj AS T2 ON T2.dept_id = T1.id",
            &full,
        )
        .unwrap();
    let agent = AgentProfile::new("a", full.clone(), Arc::new(OracleReasoner::new()));
    let ex = segsql_core::agents::act_extract(&agent, &q, &full, 1).unwrap();
    let sub = extract_subschema(&full, &ex.selection, 0).unwrap();
    let c = segsql_core::agents::act_generate(&agent, &q, &sub, segsql_core::agents::Strategy::Direct, 0, 1).unwrap();
    assert_eq!(Some(c.text), q.gold_sql);
    assert!(q.gold_refs.iter().all(|r: &SchemaRef| sub.contains(r)));
}
