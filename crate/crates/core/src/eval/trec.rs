//! TREC-format run and qrels files.
//!
//! Run lines: `topic_id Q0 image_id rank score run_tag`.
//! Qrels lines: `topic_id 0 image_id grade`.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};

use super::{EvalError, Qrels, RunFile};

#[derive(Debug, Clone, PartialEq)]
pub struct RunWarning {
    pub line: usize,
    pub message: String,
}

pub fn load_qrels<R: BufRead>(input: R) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        if fields.len() != 4 {
            return Err(EvalError::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|_| EvalError::Parse {
            line: line_no,
            message: format!("grade {:?} is not a non-negative integer", fields[3]),
        })?;
        if !qrels.insert(fields[0], fields[2], grade) {
            return Err(EvalError::Parse {
                line: line_no,
                message: format!("duplicate judgment for ({}, {})", fields[0], fields[2]),
            });
        }
    }
    Ok(qrels)
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut w: W) -> io::Result<()> {
    for (topic, grades) in qrels.topics() {
        for (id, grade) in grades {
            writeln!(w, "{topic} 0 {id} {grade}")?;
        }
    }
    Ok(())
}

/// Parses a run. Lines are ordered by their rank field within each topic;
/// a score that rises with rank yields a warning rather than an error.
pub fn load_run<R: BufRead>(input: R) -> Result<(RunFile, Vec<RunWarning>), EvalError> {
    let mut per_topic: BTreeMap<String, Vec<(usize, usize, String, f64)>> = BTreeMap::new();
    let mut tag: Option<String> = None;
    let mut warnings = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::Parse { line: line_no, message };
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| err(format!("invalid rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| err(format!("invalid score {:?}", fields[4])))?;
        match &tag {
            None => tag = Some(fields[5].to_string()),
            Some(t) if t != fields[5] => warnings.push(RunWarning {
                line: line_no,
                message: format!("run tag {:?} differs from {t:?}", fields[5]),
            }),
            Some(_) => {}
        }
        per_topic
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, line_no, fields[2].to_string(), score));
    }

    let mut run = RunFile::new(tag.unwrap_or_default());
    for (topic, mut rows) in per_topic {
        rows.sort_by_key(|(rank, line, _, _)| (*rank, *line));
        let mut seen = HashSet::new();
        for (i, (rank, line, id, _)) in rows.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(EvalError::Parse {
                    line: *line,
                    message: format!("image {id} appears twice for topic {topic}"),
                });
            }
            if i > 0 && rows[i - 1].0 == *rank {
                return Err(EvalError::Parse {
                    line: *line,
                    message: format!("rank {rank} repeated for topic {topic}"),
                });
            }
        }
        for w in rows.windows(2) {
            if w[1].3 > w[0].3 {
                warnings.push(RunWarning {
                    line: w[1].1,
                    message: format!(
                        "topic {topic}: score {} at rank {} exceeds score {} at rank {}",
                        w[1].3, w[1].0, w[0].3, w[0].0
                    ),
                });
            }
        }
        run.topics
            .insert(topic, rows.into_iter().map(|(_, _, id, score)| (id, score)).collect());
    }
    for w in &warnings {
        log::warn!("run line {}: {}", w.line, w.message);
    }
    Ok((run, warnings))
}

/// Writes topics in id order, ranks from 1, scores with six decimals.
pub fn write_run<W: Write>(run: &RunFile, mut w: W) -> io::Result<()> {
    for (topic, rows) in &run.topics {
        for (i, (id, score)) in rows.iter().enumerate() {
            writeln!(w, "{topic} Q0 {id} {} {score:.6} {}", i + 1, run.run_tag)?;
        }
    }
    Ok(())
}
