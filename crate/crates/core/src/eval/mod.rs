//! Run evaluation against graded relevance judgments.

mod metrics;
mod trec;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;

use thiserror::Error;

pub use metrics::{average_precision, ndcg_at_k, precision_at_k, recall_at_k};
pub use trec::{load_qrels, load_run, write_qrels, write_run, RunWarning};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run contains topics without judgments: {}", .0.join(", "))]
    UnjudgedTopics(Vec<String>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Graded judgments keyed by topic then image id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    topics: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// Returns false if the pair was already judged.
    pub fn insert(&mut self, topic: &str, image_id: &str, grade: u32) -> bool {
        self.topics
            .entry(topic.to_string())
            .or_default()
            .insert(image_id.to_string(), grade)
            .is_none()
    }

    pub fn topics(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u32>)> {
        self.topics.iter()
    }

    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.topics.get(topic)
    }

    pub fn grade(&self, topic: &str, image_id: &str) -> u32 {
        self.topics
            .get(topic)
            .and_then(|g| g.get(image_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }
}

/// Ranked results per topic, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub run_tag: String,
    pub topics: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new(run_tag: impl Into<String>) -> Self {
        Self {
            run_tag: run_tag.into(),
            topics: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TopicMetrics {
    pub ap: f64,
    pub p10: f64,
    pub p100: f64,
    pub r10: f64,
    pub ndcg10: f64,
}

impl TopicMetrics {
    pub const NAMES: [&'static str; 5] = ["MAP", "P@10", "P@100", "R@10", "nDCG@10"];

    pub fn values(&self) -> [f64; 5] {
        [self.ap, self.p10, self.p100, self.r10, self.ndcg10]
    }

    fn add(&mut self, o: &TopicMetrics) {
        self.ap += o.ap;
        self.p10 += o.p10;
        self.p100 += o.p100;
        self.r10 += o.r10;
        self.ndcg10 += o.ndcg10;
    }

    fn scale(&mut self, f: f64) {
        self.ap *= f;
        self.p10 *= f;
        self.p100 *= f;
        self.r10 *= f;
        self.ndcg10 *= f;
    }
}

/// Scores one ranked list. `None` when the topic has no positive grade.
pub fn score_topic<S: AsRef<str>>(ranked: &[S], grades: &BTreeMap<String, u32>) -> Option<TopicMetrics> {
    let relevant: HashSet<String> = grades
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(id, _)| id.clone())
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let graded: HashMap<String, u32> = grades.iter().map(|(k, v)| (k.clone(), *v)).collect();
    Some(TopicMetrics {
        ap: average_precision(ranked, &relevant)?,
        p10: precision_at_k(ranked, &relevant, 10),
        p100: precision_at_k(ranked, &relevant, 100),
        r10: recall_at_k(ranked, &relevant, 10)?,
        ndcg10: ndcg_at_k(ranked, &graded, 10)?,
    })
}

/// Fraction of a topic's relevant images present in `ids`, in any order.
/// `None` when the topic has no positive grade.
pub fn candidate_recall<'a>(ids: impl IntoIterator<Item = &'a str>, grades: &BTreeMap<String, u32>) -> Option<f64> {
    let relevant = grades.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let found: HashSet<&str> = ids
        .into_iter()
        .filter(|id| grades.get(*id).is_some_and(|&g| g > 0))
        .collect();
    Some(found.len() as f64 / relevant as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub run_tag: String,
    pub per_topic: BTreeMap<String, TopicMetrics>,
    pub mean: TopicMetrics,
    /// Judged topics with no positive grade; excluded from the mean.
    pub skipped: Vec<String>,
    /// Judged topics absent from the run; scored as zero.
    pub missing: Vec<String>,
}

/// Evaluates every judged topic. A topic in the run but not in the qrels is
/// an error.
pub fn evaluate_run(run: &RunFile, qrels: &Qrels) -> Result<MetricReport, EvalError> {
    let unjudged: Vec<String> = run
        .topics
        .keys()
        .filter(|t| qrels.topic(t).is_none())
        .cloned()
        .collect();
    if !unjudged.is_empty() {
        return Err(EvalError::UnjudgedTopics(unjudged));
    }
    let mut per_topic = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut missing = Vec::new();
    let empty = Vec::new();
    for (topic, grades) in qrels.topics() {
        let rows = run.topics.get(topic).unwrap_or(&empty);
        let ranked: Vec<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
        match score_topic(&ranked, grades) {
            Some(m) => {
                if !run.topics.contains_key(topic) {
                    missing.push(topic.clone());
                }
                per_topic.insert(topic.clone(), m);
            }
            None => {
                log::warn!("topic {topic} has no relevant images; skipped");
                skipped.push(topic.clone());
            }
        }
    }
    let mut mean = TopicMetrics::default();
    for m in per_topic.values() {
        mean.add(m);
    }
    if !per_topic.is_empty() {
        mean.scale(1.0 / per_topic.len() as f64);
    }
    Ok(MetricReport {
        run_tag: run.run_tag.clone(),
        per_topic,
        mean,
        skipped,
        missing,
    })
}

impl MetricReport {
    /// Fixed-width table: one row per topic and a final `all` row.
    pub fn to_table(&self) -> String {
        let width = self.per_topic.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}", "topic");
        for name in TopicMetrics::NAMES {
            let _ = write!(out, " {name:>8}");
        }
        out.push('\n');
        let mut row = |label: &str, m: &TopicMetrics| {
            let _ = write!(out, "{label:<width$}");
            for v in m.values() {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        };
        for (t, m) in &self.per_topic {
            row(t, m);
        }
        row("all", &self.mean);
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "skipped (no relevant images): {}", self.skipped.join(", "));
        }
        if !self.missing.is_empty() {
            let _ = writeln!(out, "missing from run (scored 0): {}", self.missing.join(", "));
        }
        out
    }

    /// `key=value` lines: `topic.<id>.<metric>`, `mean.<metric>`, `skipped`, `missing`.
    pub fn to_kv(&self) -> String {
        let keys = ["map", "p10", "p100", "r10", "ndcg10"];
        let mut out = String::new();
        let _ = writeln!(out, "run_tag={}", self.run_tag);
        for (t, m) in &self.per_topic {
            for (k, v) in keys.iter().zip(m.values()) {
                let _ = writeln!(out, "topic.{t}.{k}={v:.6}");
            }
        }
        for (k, v) in keys.iter().zip(self.mean.values()) {
            let _ = writeln!(out, "mean.{k}={v:.6}");
        }
        let _ = writeln!(out, "skipped={}", self.skipped.join(","));
        let _ = writeln!(out, "missing={}", self.missing.join(","));
        out
    }
}
