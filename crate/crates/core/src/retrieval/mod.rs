//! First-stage ranking and candidate expansion.
//!
//! All rankings share one total order: score descending, then image id
//! ascending.

mod expansion;
mod pool;
mod temporal;

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{dot, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::events::Event;

pub use expansion::{expand_query, extend_with_event_rounds, multi_round_retrieve, ExpansionParams};
pub use pool::{write_provenance, CandidatePool};
pub use temporal::{temporal_expand, TemporalOptions};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("query has dimension {query}, store has {store}")]
    DimensionMismatch { query: usize, store: usize },
    #[error("image {0:?} is not in the corpus")]
    UnknownImage(String),
    #[error("image {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Which stage first contributed a candidate's (best) score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    FirstStage,
    TemporalExpansion,
    EventExpansion { round: u32 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::FirstStage => f.write_str("first_stage"),
            Provenance::TemporalExpansion => f.write_str("temporal_expansion"),
            Provenance::EventExpansion { round } => write!(f, "event_expansion_round_{round}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub image_id: String,
    pub score: f64,
    pub provenance: Provenance,
}

/// Score descending, id ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub(crate) fn sort_candidates(c: &mut [ScoredCandidate]) {
    c.sort_by(|a, b| rank_order(a.score, &a.image_id, b.score, &b.image_id));
}

fn check_dim(query: &EmbeddingVector, store: &EmbeddingStore) -> Result<(), RetrievalError> {
    if query.dim() != store.dim() {
        return Err(RetrievalError::DimensionMismatch {
            query: query.dim(),
            store: store.dim(),
        });
    }
    Ok(())
}

/// Scores the given ids against `query` in parallel and returns them ranked.
pub fn score_ids(
    query: &EmbeddingVector,
    ids: &[&str],
    store: &EmbeddingStore,
    provenance: Provenance,
) -> Result<Vec<ScoredCandidate>, RetrievalError> {
    check_dim(query, store)?;
    let q = query.as_slice();
    let mut scored = ids
        .par_iter()
        .map(|id| {
            let v = store
                .get(id)
                .ok_or_else(|| RetrievalError::MissingEmbedding(id.to_string()))?;
            Ok(ScoredCandidate {
                image_id: id.to_string(),
                score: dot(q, v.as_slice()),
                provenance,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    sort_candidates(&mut scored);
    Ok(scored)
}

/// Top-`k` store entries by cosine similarity to `query_vec`.
pub fn rank_images(
    query_vec: &EmbeddingVector,
    store: &EmbeddingStore,
    k: usize,
) -> Result<Vec<ScoredCandidate>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidParameter("k must be positive".into()));
    }
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let ids: Vec<&str> = store.iter().map(|(id, _)| id).collect();
    let mut ranked = score_ids(query_vec, &ids, store, Provenance::FirstStage)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// Top-`k` events by similarity of their centroid to `query_vec`.
pub fn top_events<'e>(
    query_vec: &EmbeddingVector,
    events: &'e [Event],
    k: usize,
) -> Result<Vec<&'e Event>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidParameter("k must be positive".into()));
    }
    let mut scored = events
        .iter()
        .map(|e| {
            if e.centroid.dim() != query_vec.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    query: query_vec.dim(),
                    store: e.centroid.dim(),
                });
            }
            Ok((dot(query_vec.as_slice(), e.centroid.as_slice()), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|(sa, a), (sb, b)| rank_order(*sa, &a.event_id, *sb, &b.event_id));
    Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
}
