use std::collections::HashMap;
use std::io::{self, Write};

use super::{sort_candidates, ScoredCandidate};

/// Ranked, de-duplicated candidates for one topic.
///
/// Merging keeps the best score seen per id together with the provenance
/// that produced it. Ties keep the earlier entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub topic_id: String,
    candidates: Vec<ScoredCandidate>,
    /// Cumulative pool size after each expansion round.
    pub round_history: Vec<usize>,
}

impl CandidatePool {
    pub fn new(topic_id: impl Into<String>) -> Self {
        Self {
            topic_id: topic_id.into(),
            candidates: Vec::new(),
            round_history: Vec::new(),
        }
    }

    pub fn from_candidates(topic_id: impl Into<String>, candidates: impl IntoIterator<Item = ScoredCandidate>) -> Self {
        let mut pool = Self::new(topic_id);
        pool.merge(candidates);
        pool
    }

    pub fn merge(&mut self, incoming: impl IntoIterator<Item = ScoredCandidate>) {
        let mut index: HashMap<String, usize> = self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.image_id.clone(), i))
            .collect();
        for c in incoming {
            match index.get(&c.image_id) {
                Some(&i) => {
                    if c.score > self.candidates[i].score {
                        self.candidates[i] = c;
                    }
                }
                None => {
                    index.insert(c.image_id.clone(), self.candidates.len());
                    self.candidates.push(c);
                }
            }
        }
        sort_candidates(&mut self.candidates);
    }

    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.candidates.iter().any(|c| c.image_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.image_id.as_str())
    }
}

/// `topic_id<TAB>image_id<TAB>provenance` for every pool member.
pub fn write_provenance<W: Write>(pools: &[CandidatePool], mut w: W) -> io::Result<()> {
    for p in pools {
        for c in p.candidates() {
            writeln!(w, "{}\t{}\t{}", p.topic_id, c.image_id, c.provenance)?;
        }
    }
    Ok(())
}
