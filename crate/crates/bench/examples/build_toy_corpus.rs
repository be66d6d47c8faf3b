//! Rebuilds the toy corpus databases and its tables file from
//! `fixtures/toy/sql/*.sql`.
//!
//! ```text
//! cargo run -p segsql-bench --example build_toy_corpus
//! ```

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::{json, Value};

fn spider_type(declared: &str) -> &'static str {
    let d = declared.to_uppercase();
    if d.contains("INT") || d.contains("REAL") || d.contains("NUM") || d.contains("FLOA") || d.contains("DOUB") {
        "number"
    } else if d.contains("DATE") || d.contains("TIME") {
        "time"
    } else if d.contains("CHAR") || d.contains("TEXT") || d.contains("CLOB") {
        "text"
    } else {
        "others"
    }
}

fn describe(conn: &Connection, db_id: &str) -> rusqlite::Result<Value> {
    let mut stmt = conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY rowid")?;
    let tables: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;

    let mut columns = vec![json!([-1, "*"])];
    let mut readable = vec![json!([-1, "*"])];
    let mut types = vec![json!("text")];
    let mut primary_keys = Vec::new();
    // (table, column) -> global column index
    let mut index = Vec::new();
    for (ti, t) in tables.iter().enumerate() {
        let mut info = conn.prepare(&format!("PRAGMA table_info(\"{t}\")"))?;
        let cols: Vec<(String, String, i64)> = info
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))?
            .collect::<Result<_, _>>()?;
        let mut pk: Vec<(i64, usize)> = Vec::new();
        for (name, ty, pk_pos) in cols {
            let gi = columns.len();
            columns.push(json!([ti, name]));
            readable.push(json!([ti, name.replace('_', " ")]));
            types.push(json!(spider_type(&ty)));
            if pk_pos > 0 {
                pk.push((pk_pos, gi));
            }
            index.push((t.to_lowercase(), name.to_lowercase(), gi));
        }
        pk.sort_unstable();
        match pk.as_slice() {
            [] => {}
            [(_, one)] => primary_keys.push(json!(one)),
            many => primary_keys.push(json!(many.iter().map(|(_, i)| *i).collect::<Vec<_>>())),
        }
    }
    let lookup = |t: &str, c: &str| {
        index
            .iter()
            .find(|(tt, cc, _)| tt == &t.to_lowercase() && cc == &c.to_lowercase())
            .map(|(_, _, i)| *i)
    };
    let mut foreign_keys = Vec::new();
    for t in &tables {
        let mut fk = conn.prepare(&format!("PRAGMA foreign_key_list(\"{t}\")"))?;
        let rows: Vec<(String, String, String)> = fk
            .query_map([], |r| Ok((r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<Result<_, _>>()?;
        for (target, from, to) in rows.into_iter().rev() {
            let (Some(a), Some(b)) = (lookup(t, &from), lookup(&target, &to)) else {
                panic!("{db_id}: foreign key {t}.{from} -> {target}.{to} does not resolve");
            };
            foreign_keys.push(json!([a, b]));
        }
    }
    Ok(json!({
        "db_id": db_id,
        "table_names_original": tables,
        "table_names": tables.iter().map(|t| t.replace('_', " ")).collect::<Vec<_>>(),
        "column_names_original": columns,
        "column_names": readable,
        "column_types": types,
        "primary_keys": primary_keys,
        "foreign_keys": foreign_keys,
    }))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy"));
    let mut scripts: Vec<PathBuf> = std::fs::read_dir(root.join("sql"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    scripts.sort();

    let mut described = Vec::new();
    for script in scripts {
        let db_id = script.file_stem().and_then(|s| s.to_str()).ok_or("bad script name")?.to_string();
        let dir = root.join("database").join(&db_id);
        std::fs::create_dir_all(&dir)?;
        let file = dir.join(format!("{db_id}.sqlite"));
        if file.exists() {
            std::fs::remove_file(&file)?;
        }
        let conn = Connection::open(&file)?;
        conn.execute_batch(&std::fs::read_to_string(&script)?)?;
        described.push(describe(&conn, &db_id)?);
        println!("built {}", file.display());
    }
    let tables = root.join("tables.json");
    std::fs::write(&tables, serde_json::to_string_pretty(&described)? + "\n")?;
    println!("wrote {}", tables.display());
    Ok(())
}
