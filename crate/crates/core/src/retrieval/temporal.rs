use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{NaiveDate, Timelike};

use super::{RetrievalError, ScoredCandidate};
use crate::corpus::{CorpusManifest, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalOptions {
    /// Images taken on each side of the anchor.
    pub window: usize,
    /// Clip the window to the anchor's day instead of the corpus bounds.
    pub clip_to_day: bool,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        Self {
            window: 80,
            clip_to_day: false,
        }
    }
}

/// Expands candidates with the corpus neighbourhood of the densest capture hour.
///
/// Candidates are bucketed by (day, hour); the fullest bucket (earliest on
/// ties) supplies the anchor, its earliest candidate. Every corpus image
/// within `window` sequence positions of the anchor is added to the
/// original candidate ids.
pub fn temporal_expand(
    candidates: &[ScoredCandidate],
    corpus: &CorpusManifest,
    options: TemporalOptions,
) -> Result<BTreeSet<String>, RetrievalError> {
    if options.window == 0 {
        return Err(RetrievalError::InvalidParameter("window must be positive".into()));
    }
    if candidates.is_empty() {
        return Ok(BTreeSet::new());
    }
    let by_id: HashMap<&str, &ImageRecord> = corpus.images.iter().map(|r| (r.id.as_str(), r)).collect();
    let records = candidates
        .iter()
        .map(|c| {
            by_id
                .get(c.image_id.as_str())
                .copied()
                .ok_or_else(|| RetrievalError::UnknownImage(c.image_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut buckets: BTreeMap<(NaiveDate, u32), Vec<&ImageRecord>> = BTreeMap::new();
    for r in &records {
        buckets.entry((r.day, r.capture_time.hour())).or_default().push(r);
    }
    let peak_count = buckets.values().map(Vec::len).max().unwrap_or(0);
    let peak = buckets
        .values()
        .find(|b| b.len() == peak_count)
        .expect("at least one bucket");
    let anchor = peak
        .iter()
        .min_by_key(|r| (r.capture_time, r.sequence_index))
        .expect("peak bucket is non-empty");

    let (lo_bound, hi_bound) = if options.clip_to_day {
        let same_day = |r: &&ImageRecord| r.day == anchor.day;
        let first = corpus.images.iter().find(same_day).map_or(0, |r| r.sequence_index);
        let last = corpus
            .images
            .iter()
            .rev()
            .find(same_day)
            .map_or(0, |r| r.sequence_index);
        (first, last)
    } else {
        (0, corpus.len() - 1)
    };
    let lo = anchor.sequence_index.saturating_sub(options.window).max(lo_bound);
    let hi = anchor.sequence_index.saturating_add(options.window).min(hi_bound);

    let mut out: BTreeSet<String> = candidates.iter().map(|c| c.image_id.clone()).collect();
    out.extend(corpus.images[lo..=hi].iter().map(|r| r.id.clone()));
    Ok(out)
}
