//! Append-only JSON-lines recordings of model exchanges.
//!
//! Each line holds the exchange key, the full request and the raw reply.
//! Replaying looks replies up by key, so a replayed run reproduces the
//! recorded one exactly as long as it asks the same questions in the same
//! words.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::llm::{ChatRequest, ChatTransport, ExchangeKey};
use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    #[serde(flatten)]
    pub key: ExchangeKey,
    pub request: ChatRequest,
    pub response: String,
}

/// Recorded replies indexed by key, plus an optional append handle.
#[derive(Debug)]
pub struct CassetteStore {
    path: PathBuf,
    entries: RwLock<HashMap<ExchangeKey, String>>,
    writer: Option<Mutex<File>>,
}

impl CassetteStore {
    /// Loads an existing cassette for replay; a missing file is an error.
    pub fn open_existing(path: &Path) -> Result<Self, BackendError> {
        if !path.is_file() {
            return Err(BackendError::Cassette(format!("{} does not exist", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(load(path)?),
            writer: None,
        })
    }

    /// Opens (creating if needed) a cassette for recording.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| BackendError::Cassette(format!("{}: {e}", dir.display())))?;
        }
        let entries = if path.is_file() { load(path)? } else { HashMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &ExchangeKey) -> Option<String> {
        self.entries.read().expect("cassette lock").get(key).cloned()
    }

    /// Appends one exchange as a single line.
    pub fn append(&self, entry: &CassetteEntry) -> Result<(), BackendError> {
        let Some(writer) = &self.writer else {
            return Err(BackendError::Cassette(format!("{} is open read-only", self.path.display())));
        };
        let mut line = serde_json::to_string(entry).map_err(|e| BackendError::Cassette(e.to_string()))?;
        line.push('\n');
        {
            let mut file = writer.lock().expect("cassette writer lock");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| BackendError::Cassette(format!("{}: {e}", self.path.display())))?;
        }
        self.entries
            .write()
            .expect("cassette lock")
            .entry(entry.key.clone())
            .or_insert_with(|| entry.response.clone());
        Ok(())
    }
}

fn load(path: &Path) -> Result<HashMap<ExchangeKey, String>, BackendError> {
    let file = File::open(path).map_err(|e| BackendError::Cassette(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Cassette(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line)
            .map_err(|e| BackendError::Cassette(format!("{} line {}: {e}", path.display(), i + 1)))?;
        map.entry(entry.key).or_insert(entry.response);
    }
    Ok(map)
}

/// Answers from a cassette only.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    store: Arc<CassetteStore>,
}

impl ReplayTransport {
    pub fn new(store: Arc<CassetteStore>) -> Self {
        Self { store }
    }
}

impl ChatTransport for ReplayTransport {
    fn send(&self, key: &ExchangeKey, _request: &ChatRequest) -> Result<String, BackendError> {
        self.store
            .lookup(key)
            .ok_or_else(|| BackendError::MissingRecording(key.to_string()))
    }
}

/// Forwards to another transport and appends every successful exchange.
#[derive(Debug, Clone)]
pub struct RecordingTransport {
    inner: Arc<dyn ChatTransport>,
    store: Arc<CassetteStore>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn ChatTransport>, store: Arc<CassetteStore>) -> Self {
        Self { inner, store }
    }
}

impl ChatTransport for RecordingTransport {
    fn send(&self, key: &ExchangeKey, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.inner.send(key, request)?;
        self.store.append(&CassetteEntry {
            key: key.clone(),
            request: request.clone(),
            response: response.clone(),
        })?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::llm::ChatMessage;
    use crate::agents::TaskKind;

    #[derive(Debug)]
    struct Echo;

    impl ChatTransport for Echo {
        fn send(&self, _key: &ExchangeKey, request: &ChatRequest) -> Result<String, BackendError> {
            Ok(format!("echo: {}", request.messages[0].content))
        }
    }

    fn request(text: &str) -> (ExchangeKey, ChatRequest) {
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: text.into(),
            }],
            temperature: 0.0,
        };
        let key = ExchangeKey {
            question_id: "q1".into(),
            agent_id: "agent-0".into(),
            round: 1,
            task_kind: TaskKind::Extract,
            prompt_hash: req.prompt_hash(),
        };
        (key, req)
    }

    fn temp_path(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("segsql-cassette-{}-{name}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir.join("tape.jsonl")
    }

    #[test]
    fn record_then_replay() {
        let path = temp_path("roundtrip");
        let (key, req) = request("hello");
        {
            let store = Arc::new(CassetteStore::open(&path).unwrap());
            let rec = RecordingTransport::new(Arc::new(Echo), store);
            assert_eq!(rec.send(&key, &req).unwrap(), "echo: hello");
        }
        let replay = ReplayTransport::new(Arc::new(CassetteStore::open_existing(&path).unwrap()));
        assert_eq!(replay.send(&key, &req).unwrap(), "echo: hello");
        let (other, req2) = request("bye");
        assert!(matches!(replay.send(&other, &req2), Err(BackendError::MissingRecording(_))));

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let entry: CassetteEntry = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(entry.key, key);
        assert_eq!(entry.request, req);
    }

    #[test]
    fn concurrent_appends_stay_line_atomic() {
        let path = temp_path("concurrent");
        let store = Arc::new(CassetteStore::open(&path).unwrap());
        std::thread::scope(|s| {
            for t in 0..8 {
                let store = store.clone();
                s.spawn(move || {
                    for i in 0..25 {
                        let (mut key, req) = request(&format!("{t}-{i}"));
                        key.round = t * 100 + i;
                        store
                            .append(&CassetteEntry {
                                key,
                                request: req,
                                response: "x".repeat(200),
                            })
                            .unwrap();
                    }
                });
            }
        });
        let reloaded = CassetteStore::open_existing(&path).unwrap();
        assert_eq!(reloaded.len(), 200);
    }

    #[test]
    fn missing_cassette_is_an_error() {
        assert!(CassetteStore::open_existing(Path::new("/nonexistent/tape.jsonl")).is_err());
    }
}
