//! Aggregate reports, recomputed from evaluation records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use segsql_core::sql::Difficulty;

use crate::exec::TimingMode;
use crate::metrics::{percentage, ves, EvalRecord};

pub const DIFFICULTY_RULES: &str = "Buckets come from dataset labels when present. Otherwise the gold SQL \
decides, first match wins: extra = set operation, or a subquery together with a join of 2+ tables; \
hard = 3+ tables in one FROM, or any subquery; easy = at most one table and at most one aggregate; \
medium = everything else.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub ex: Option<f64>,
    pub em: Option<f64>,
    pub ves: Option<f64>,
}

impl Bucket {
    pub fn of(records: &[EvalRecord]) -> Self {
        Self {
            count: records.len(),
            ex: percentage(records, |r| r.exec_match),
            em: percentage(records, |r| r.exact_match),
            ves: ves(records).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub mean_rounds: Option<f64>,
    pub terminations: BTreeMap<String, usize>,
    /// Questions whose record carries an error.
    pub failed: usize,
    pub mean_reward: Option<f64>,
}

/// Run-level metadata carried into the report unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub condition: String,
    pub n_agents: usize,
    pub shots: usize,
    pub seed: u64,
    pub timing: TimingMode,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Set when there were no questions; every score is then absent.
    pub empty: bool,
    pub condition: String,
    pub n_agents: usize,
    pub shots: usize,
    pub seed: u64,
    pub timing: TimingMode,
    pub overall: Bucket,
    pub buckets: BTreeMap<String, Bucket>,
    pub episodes: EpisodeStats,
    pub difficulty_rules: String,
    pub config: Value,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BenchmarkReport {
    pub fn from_records(records: &[EvalRecord], meta: ReportMeta) -> Self {
        let mut by_bucket: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
        for r in records {
            by_bucket.entry(r.difficulty.as_str().to_string()).or_default().push(r.clone());
        }
        let mut terminations = BTreeMap::new();
        for r in records {
            let key = r.termination.map_or("error", |t| t.as_str());
            *terminations.entry(key.to_string()).or_insert(0) += 1;
        }
        Self {
            empty: records.is_empty(),
            condition: meta.condition,
            n_agents: meta.n_agents,
            shots: meta.shots,
            seed: meta.seed,
            timing: meta.timing,
            overall: Bucket::of(records),
            buckets: by_bucket.iter().map(|(k, v)| (k.clone(), Bucket::of(v))).collect(),
            episodes: EpisodeStats {
                mean_rounds: mean(records.iter().map(|r| r.rounds as f64)),
                terminations,
                failed: records.iter().filter(|r| r.error.is_some()).count(),
                mean_reward: mean(records.iter().filter_map(|r| r.rewards.as_ref().map(|w| w.r))),
            },
            difficulty_rules: DIFFICULTY_RULES.to_string(),
            config: meta.config,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Difficulty,
    Condition,
    Agent,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "difficulty" => Ok(GroupBy::Difficulty),
            "condition" => Ok(GroupBy::Condition),
            "agent" | "agents" => Ok(GroupBy::Agent),
            other => Err(format!("cannot group by `{other}` (difficulty, condition, agent)")),
        }
    }
}

/// One row per group. Difficulty tables always list the four Spider buckets
/// (or the three BIRD ones for BIRD-labelled records), in order.
pub fn group_rows(records: &[EvalRecord], by: GroupBy) -> Vec<(String, Bucket)> {
    if records.is_empty() {
        return Vec::new();
    }
    match by {
        GroupBy::Difficulty => {
            let bird = records.iter().any(|r| Difficulty::BIRD.contains(&r.difficulty));
            let spider = records.iter().any(|r| Difficulty::SPIDER.contains(&r.difficulty));
            let mut order: Vec<Difficulty> = Vec::new();
            if spider || !bird {
                order.extend(Difficulty::SPIDER);
            }
            if bird {
                order.extend(Difficulty::BIRD);
            }
            order
                .into_iter()
                .map(|d| {
                    let rows: Vec<EvalRecord> = records.iter().filter(|r| r.difficulty == d).cloned().collect();
                    (d.as_str().to_string(), Bucket::of(&rows))
                })
                .collect()
        }
        GroupBy::Condition | GroupBy::Agent => {
            let mut groups: BTreeMap<(String, usize), Vec<EvalRecord>> = BTreeMap::new();
            for r in records {
                let key = match by {
                    GroupBy::Condition => (r.condition.clone(), 0),
                    _ => (String::new(), r.n_agents),
                };
                groups.entry(key).or_default().push(r.clone());
            }
            groups
                .into_iter()
                .map(|((c, n), rows)| {
                    let label = if by == GroupBy::Condition { c } else { format!("Agent-{n}") };
                    (label, Bucket::of(&rows))
                })
                .collect()
        }
    }
}

const HEADER: [&str; 5] = ["group", "count", "ex", "em", "ves"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub fn render_text(rows: &[(String, Bucket)]) -> String {
    let mut out = format!("{:<14}{:>7}{:>9}{:>9}{:>9}\n", HEADER[0], HEADER[1], HEADER[2], HEADER[3], HEADER[4]);
    for (label, b) in rows {
        let _ = writeln!(
            out,
            "{label:<14}{:>7}{:>9}{:>9}{:>9}",
            b.count,
            cell(b.ex),
            cell(b.em),
            cell(b.ves)
        );
    }
    out
}

pub fn render_csv(rows: &[(String, Bucket)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for (label, b) in rows {
        w.write_record([label.clone(), b.count.to_string(), cell(b.ex), cell(b.em), cell(b.ves)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_records(path: &Path) -> io::Result<Vec<EvalRecord>> {
    let file = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
