#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use segsql_bench::dataset::{load_dataset, DatasetBundle, Provenance};

pub fn toy_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

pub fn toy() -> DatasetBundle {
    load_dataset(&toy_root(), Provenance::Toy).expect("toy corpus loads")
}

/// Copies `dbs` of the toy corpus into `dst`, keeping at most `max_questions`
/// of their questions.
pub fn toy_subset(dst: &Path, dbs: &[&str], max_questions: usize) {
    let root = toy_root();
    let tables: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(root.join("tables.json")).unwrap()).unwrap();
    let questions: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(root.join("dev.json")).unwrap()).unwrap();
    let keep = |v: &serde_json::Value| dbs.contains(&v["db_id"].as_str().unwrap());
    let tables: Vec<_> = tables.into_iter().filter(keep).collect();
    let questions: Vec<_> = questions.into_iter().filter(keep).take(max_questions).collect();
    std::fs::write(dst.join("tables.json"), serde_json::to_string(&tables).unwrap()).unwrap();
    std::fs::write(dst.join("dev.json"), serde_json::to_string(&questions).unwrap()).unwrap();
    for db in dbs {
        let dir = dst.join("database").join(db);
        std::fs::create_dir_all(&dir).unwrap();
        let name = format!("{db}.sqlite");
        std::fs::copy(root.join("database").join(db).join(&name), dir.join(&name)).unwrap();
    }
}

fn mock_reply(prompt: &str) -> String {
    let tables: Vec<&str> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("CREATE TABLE "))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    if prompt.starts_with("### Task: schema extraction") {
        let picked: Vec<String> = tables.iter().take(2).map(|t| format!("{t}.*")).collect();
        if picked.is_empty() {
            "none".to_string()
        } else {
            picked.join("\n")
        }
    } else if prompt.starts_with("### Task: SQL checking") {
        if prompt.contains("count(*)") {
            "VERDICT: CORRECT - counts rows".to_string()
        } else {
            "VERDICT: INCORRECT - not a count".to_string()
        }
    } else {
        let table = tables.last().copied().unwrap_or("sqlite_master");
        format!("Here you go.\n```sql\nSELECT count(*) FROM {table}\n```")
    }
}

/// Serves OpenAI-style chat completions on a local port until the process
/// exits. Every request must carry `Bearer <key>`. Returns the base URL.
pub fn spawn_mock_chat_server(key: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut authorized = false;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") && line.trim_end().ends_with(&format!("Bearer {key}")) {
                    authorized = true;
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let (status, payload) = if authorized {
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                let prompt = req["messages"][1]["content"].as_str().unwrap_or_default();
                let reply = serde_json::json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": mock_reply(prompt)}}]
                });
                ("200 OK", reply.to_string())
            } else {
                ("401 Unauthorized", r#"{"error":"bad key"}"#.to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    format!("http://{addr}/v1")
}
