//! Rank-based retrieval metrics. Binary metrics treat grade > 0 as relevant.

use std::collections::{HashMap, HashSet};

fn hits_in_prefix<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count()
}

/// `|relevant ∩ top-k| / k`; the denominator stays `k` for short lists.
pub fn precision_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    hits_in_prefix(ranked, relevant, k) as f64 / k as f64
}

/// `|relevant ∩ top-k| / |relevant|`, or `None` when nothing is relevant.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits_in_prefix(ranked, relevant, k) as f64 / relevant.len() as f64)
}

/// Mean of precision at each relevant rank over `|relevant|`.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| f64::from(g) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k with linear gain and `1/log2(rank+1)` discount, over the ideal DCG@k.
/// `None` when no grade is positive.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], grades: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    let actual = dcg(ranked
        .iter()
        .take(k)
        .map(|id| grades.get(id.as_ref()).copied().unwrap_or(0)));
    Some(actual / idcg)
}
