//! Event-based multi-round query expansion.

use super::{score_ids, top_events, CandidatePool, Provenance, RetrievalError, ScoredCandidate};
use crate::embedding::{normalize_f64, EmbeddingStore, EmbeddingVector};
use crate::events::Event;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionParams {
    pub rounds: u32,
    pub k_events: usize,
    /// Feedback images summed into the next query.
    pub m: usize,
    pub k_images: usize,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            rounds: 3,
            k_events: 100,
            m: 5,
            k_images: 1000,
        }
    }
}

/// `normalize(q + v_1 + ... + v_min(m, n))`, unweighted.
pub fn expand_query(
    query_vec: &EmbeddingVector,
    feedback: &[&EmbeddingVector],
    m: usize,
) -> Result<EmbeddingVector, RetrievalError> {
    let used = &feedback[..m.min(feedback.len())];
    if used.is_empty() {
        return Ok(query_vec.clone());
    }
    let mut acc: Vec<f64> = query_vec.as_slice().iter().map(|&x| f64::from(x)).collect();
    for v in used {
        if v.dim() != acc.len() {
            return Err(RetrievalError::DimensionMismatch {
                query: acc.len(),
                store: v.dim(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += f64::from(x);
        }
    }
    Ok(normalize_f64(acc)?)
}

/// Repeats event retrieval with pseudo-relevance feedback.
///
/// Each round ranks events by centroid similarity to the current query,
/// scores every image of the top `k_events` events, adds the best `k_images`
/// to the pool, and folds the top `m` images into the next query. The pool
/// only ever grows; `round_history` records its size after every round.
pub fn multi_round_retrieve(
    topic_id: &str,
    query_vec: &EmbeddingVector,
    store: &EmbeddingStore,
    events: &[Event],
    params: ExpansionParams,
) -> Result<CandidatePool, RetrievalError> {
    let mut pool = CandidatePool::new(topic_id);
    extend_with_event_rounds(&mut pool, query_vec, store, events, params)?;
    Ok(pool)
}

/// Runs the rounds of [`multi_round_retrieve`] on top of an existing pool.
/// Returns the final expanded query.
pub fn extend_with_event_rounds(
    pool: &mut CandidatePool,
    query_vec: &EmbeddingVector,
    store: &EmbeddingStore,
    events: &[Event],
    params: ExpansionParams,
) -> Result<EmbeddingVector, RetrievalError> {
    if params.rounds == 0 {
        return Err(RetrievalError::InvalidParameter("rounds must be at least 1".into()));
    }
    if params.k_images == 0 || params.k_events == 0 {
        return Err(RetrievalError::InvalidParameter(
            "k_images and k_events must be positive".into(),
        ));
    }
    let mut query = query_vec.clone();
    for round in 1..=params.rounds {
        let selected = top_events(&query, events, params.k_events)?;
        let ids: Vec<&str> = selected
            .iter()
            .flat_map(|e| e.members.iter().map(String::as_str))
            .collect();
        let ranked: Vec<ScoredCandidate> = score_ids(&query, &ids, store, Provenance::EventExpansion { round })?;

        let feedback: Vec<&EmbeddingVector> = ranked
            .iter()
            .take(params.m)
            .map(|c| store.get(&c.image_id).expect("scored ids exist in store"))
            .collect();
        let next = expand_query(&query, &feedback, params.m)?;

        pool.merge(ranked.into_iter().take(params.k_images));
        pool.round_history.push(pool.len());
        log::debug!("topic {}: round {round} pool size {}", pool.topic_id, pool.len());
        query = next;
    }
    Ok(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::segment_day;
    use crate::retrieval::rank_images;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec()).unwrap()
    }

    fn basis(i: usize, dim: usize, scale_e0: f32) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[0] = scale_e0;
        v[i] += 1.0;
        v
    }

    #[test]
    fn expand_examples() {
        let q = unit(&[1.0, 0.0]);
        let img = unit(&[0.0, 1.0]);
        let e = expand_query(&q, &[&img], 1).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((e.as_slice()[0] - h).abs() < 1e-7 && (e.as_slice()[1] - h).abs() < 1e-7);
        assert_eq!(expand_query(&q, &[&img], 0).unwrap(), q);
        assert_eq!(expand_query(&q, &[], 5).unwrap(), q);
        let same = expand_query(&q, &[&q, &q, &q], 5).unwrap();
        assert_eq!(same, q);
    }

    proptest! {
        #[test]
        fn expand_is_unit_and_scale_invariant(
            q in proptest::collection::vec(0.1f32..1.0, 6),
            imgs in proptest::collection::vec(proptest::collection::vec(0.1f32..1.0, 6), 0..8),
            c in 0.01f32..100.0,
            m in 0usize..8,
        ) {
            let q = unit(&q);
            let imgs: Vec<EmbeddingVector> = imgs.iter().map(|v| unit(v)).collect();
            let refs: Vec<&EmbeddingVector> = imgs.iter().collect();
            let a = expand_query(&q, &refs, m).unwrap();
            prop_assert!((a.norm() - 1.0).abs() <= 1e-6);
            let scaled = unit(&q.as_slice().iter().map(|x| x * c).collect::<Vec<_>>());
            let b = expand_query(&scaled, &refs, m).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    /// Event A holds five strong matches and one weak "planted" image;
    /// five distractors sit in their own events with mid similarity.
    fn planted_fixture() -> (EmbeddingStore, Vec<Event>, EmbeddingVector) {
        let dim = 10;
        let mut store = EmbeddingStore::new(dim).unwrap();
        let mut a = vec![0.0f32; dim];
        a[0] = 1.0;
        a[1] = 0.5;
        let mut p = vec![0.0f32; dim];
        p[0] = 0.3;
        p[1] = 1.0;
        let ids_a = ["a1", "a2", "p", "a3", "a4", "a5"];
        for id in ids_a {
            let v = if id == "p" { unit(&p) } else { unit(&a) };
            store.insert(id, v).unwrap();
        }
        let day = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let members: Vec<(&str, &EmbeddingVector)> = ids_a.iter().map(|id| (*id, store.get(id).unwrap())).collect();
        let mut events = segment_day(day, &members, 0.6).unwrap();
        assert_eq!(events.len(), 1);
        for i in 0..5 {
            let id = format!("d{i}");
            store.insert(id.clone(), unit(&basis(2 + i, dim, 0.5))).unwrap();
            let other = NaiveDate::from_ymd_opt(2019, 1, 2 + i as u32).unwrap();
            let v = store.get(&id).unwrap();
            events.extend(segment_day(other, &[(id.as_str(), v)], 0.6).unwrap());
        }
        (store, events, unit(&basis(0, dim, 0.0)))
    }

    #[test]
    fn planted_image_enters_by_round_two() {
        let (store, events, q) = planted_fixture();
        let params = ExpansionParams {
            rounds: 1,
            k_events: 100,
            m: 5,
            k_images: 6,
        };
        // single-round oracle: direct ranking misses "p"
        let direct: Vec<String> = rank_images(&q, &store, 6)
            .unwrap()
            .into_iter()
            .map(|c| c.image_id)
            .collect();
        assert!(!direct.contains(&"p".to_string()));
        let one = multi_round_retrieve("t", &q, &store, &events, params).unwrap();
        assert!(!one.contains("p"));

        let two = multi_round_retrieve("t", &q, &store, &events, ExpansionParams { rounds: 2, ..params }).unwrap();
        assert!(two.contains("p"));
        let p = two.candidates().iter().find(|c| c.image_id == "p").unwrap();
        assert_eq!(p.provenance, Provenance::EventExpansion { round: 2 });
        for id in one.ids() {
            assert!(two.contains(id));
        }
    }

    #[test]
    fn single_round_equals_event_retrieval() {
        let (store, events, q) = planted_fixture();
        let params = ExpansionParams {
            rounds: 1,
            k_events: 3,
            m: 5,
            k_images: 4,
        };
        let pool = multi_round_retrieve("t", &q, &store, &events, params).unwrap();
        let top = top_events(&q, &events, 3).unwrap();
        let ids: Vec<&str> = top.iter().flat_map(|e| e.members.iter().map(String::as_str)).collect();
        let mut want = score_ids(&q, &ids, &store, Provenance::EventExpansion { round: 1 }).unwrap();
        want.truncate(4);
        assert_eq!(pool.candidates(), want.as_slice());
        assert_eq!(pool.round_history, vec![4]);
    }

    #[test]
    fn pool_sizes_non_decreasing() {
        let (store, events, q) = planted_fixture();
        let params = ExpansionParams {
            rounds: 3,
            k_events: 2,
            m: 2,
            k_images: 3,
        };
        let pool = multi_round_retrieve("t", &q, &store, &events, params).unwrap();
        assert_eq!(pool.round_history.len(), 3);
        assert!(pool.round_history.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(
            multi_round_retrieve("t", &q, &store, &events, ExpansionParams { rounds: 0, ..params }),
            Err(RetrievalError::InvalidParameter(_))
        ));
    }
}
