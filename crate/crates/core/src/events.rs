//! Per-day visual event segmentation.
//!
//! A new event starts whenever two chronologically adjacent images on the
//! same day fall below the similarity threshold `tau`.

use std::io::{self, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::embedding::{cosine_similarity, normalize_f64, EmbeddingError, EmbeddingStore, EmbeddingVector};

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("image {0:?} does not have a unit-norm embedding")]
    NotNormalized(String),
    #[error("cannot compute the centroid of an empty event")]
    EmptyCentroid,
    #[error("member vectors average to zero; centroid is undefined")]
    DegenerateCentroid,
    #[error("image {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: String,
    pub day: NaiveDate,
    pub members: Vec<String>,
    pub centroid: EmbeddingVector,
}

pub fn event_id(day: NaiveDate, ordinal: usize) -> String {
    format!("{}#{ordinal:04}", day.format("%Y%m%d"))
}

/// Normalized mean of member vectors.
pub fn event_centroid(member_vectors: &[&EmbeddingVector]) -> Result<EmbeddingVector, EventError> {
    let first = member_vectors.first().ok_or(EventError::EmptyCentroid)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for v in member_vectors {
        if v.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            }
            .into());
        }
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += f64::from(x);
        }
    }
    let n = member_vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    // Mean norm below float resolution is treated as cancellation.
    if acc.iter().map(|a| a * a).sum::<f64>().sqrt() < 1e-12 {
        return Err(EventError::DegenerateCentroid);
    }
    normalize_f64(acc).map_err(EventError::from)
}

/// Greedy left-to-right slicing of one day's images.
pub fn segment_day(
    day: NaiveDate,
    day_images: &[(&str, &EmbeddingVector)],
    tau: f64,
) -> Result<Vec<Event>, EventError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(EventError::InvalidTau(tau));
    }
    if let Some((id, _)) = day_images.iter().find(|(_, v)| !v.is_unit()) {
        return Err(EventError::NotNormalized(id.to_string()));
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    for i in 1..day_images.len() {
        if cosine_similarity(day_images[i - 1].1, day_images[i].1)? < tau {
            bounds.push((start, i));
            start = i;
        }
    }
    if !day_images.is_empty() {
        bounds.push((start, day_images.len()));
    }
    bounds
        .into_iter()
        .enumerate()
        .map(|(ordinal, (lo, hi))| {
            let slice = &day_images[lo..hi];
            let vectors: Vec<&EmbeddingVector> = slice.iter().map(|(_, v)| *v).collect();
            Ok(Event {
                event_id: event_id(day, ordinal),
                day,
                members: slice.iter().map(|(id, _)| id.to_string()).collect(),
                centroid: event_centroid(&vectors)?,
            })
        })
        .collect()
}

/// Segments every day of the corpus. Days are processed in parallel and the
/// result is in chronological order.
pub fn segment_corpus(manifest: &CorpusManifest, store: &EmbeddingStore, tau: f64) -> Result<Vec<Event>, EventError> {
    let days = manifest.days();
    let per_day: Vec<Vec<Event>> = days
        .par_iter()
        .map(|(day, records)| {
            let images = records
                .iter()
                .map(|r| {
                    store
                        .get(&r.id)
                        .map(|v| (r.id.as_str(), v))
                        .ok_or_else(|| EventError::MissingEmbedding(r.id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            segment_day(*day, &images, tau)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_day.into_iter().flatten().collect())
}

/// `event_id<TAB>day<TAB>first_id<TAB>last_id<TAB>member_count` per event.
pub fn write_event_table<W: Write>(events: &[Event], mut w: W) -> io::Result<()> {
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            e.event_id,
            e.day.format("%Y-%m-%d"),
            e.members.first().map_or("", String::as_str),
            e.members.last().map_or("", String::as_str),
            e.members.len()
        )?;
    }
    Ok(())
}
