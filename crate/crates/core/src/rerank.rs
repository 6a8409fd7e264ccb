//! Posterior filtering of a candidate pool with a multimodal relevance judge.
//!
//! Accepted images move to the front ordered by judge confidence; rejected
//! ones are demoted behind them rather than dropped.

use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, mock_embed, EmbeddingError};
use crate::http::{blocking_client, post_json, HttpError};
use crate::retrieval::{rank_order, CandidatePool};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge request failed: {0}")]
    Http(#[from] HttpError),
    #[error("judge returned confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("cannot rerank an empty candidate pool")]
    EmptyPool,
    #[error("k_out must be positive")]
    ZeroCutoff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub image_id: String,
    pub relevant: bool,
    /// Strength of the decision in `[0, 1]`, for either outcome.
    pub confidence: f64,
}

pub trait RelevanceJudge: Send + Sync {
    fn judge(&self, query_text: &str, image_id: &str, location_hint: Option<&str>) -> Result<JudgeVerdict, JudgeError>;
}

const LOCATION_CLAUSE_PREFIX: &str = "determine if the photo was taken at the";

/// Instruction handed to the multimodal model. A location clause is appended
/// only when a location hint is present.
pub fn build_judge_instruction(query_text: &str, location_hint: Option<&str>) -> String {
    let mut out = format!(
        "Look at the image and decide whether it matches the following description. \
         Answer yes or no. Description: {}",
        query_text.trim()
    );
    if let Some(location) = location_hint.map(str::trim).filter(|l| !l.is_empty()) {
        out.push(' ');
        out.push_str(LOCATION_CLAUSE_PREFIX);
        out.push(' ');
        out.push_str(location);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub ranked: Vec<String>,
    /// Run-file score per ranked id, non-increasing: `1 + confidence` for
    /// accepted images, the prior pool score otherwise.
    pub scores: Vec<f64>,
    pub accepted: usize,
    pub failures: usize,
    /// Every judge call failed and the prior pool order was kept.
    pub degraded: bool,
}

/// Judges every pool member once and reorders: accepted first (confidence
/// desc, prior score desc, id), then rejected (prior score desc, id).
/// At most `parallelism` calls run concurrently; the result does not
/// depend on completion order.
pub fn posterior_filter(
    pool: &CandidatePool,
    judge: &dyn RelevanceJudge,
    query_text: &str,
    location_hint: Option<&str>,
    k_out: usize,
    parallelism: usize,
) -> Result<RerankOutcome, RerankError> {
    if pool.is_empty() {
        return Err(RerankError::EmptyPool);
    }
    if k_out == 0 {
        return Err(RerankError::ZeroCutoff);
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let verdicts: Vec<Option<JudgeVerdict>> = threads.install(|| {
        pool.candidates()
            .par_iter()
            .map(|c| match judge.judge(query_text, &c.image_id, location_hint) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("judge failed on {}: {e}", c.image_id);
                    None
                }
            })
            .collect()
    });
    let failures = verdicts.iter().filter(|v| v.is_none()).count();
    if failures == verdicts.len() {
        log::warn!("topic {}: every judge call failed, keeping prior order", pool.topic_id);
        let prior = &pool.candidates()[..k_out.min(pool.len())];
        return Ok(RerankOutcome {
            ranked: prior.iter().map(|c| c.image_id.clone()).collect(),
            scores: prior.iter().map(|c| c.score).collect(),
            accepted: 0,
            failures,
            degraded: true,
        });
    }

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (c, v) in pool.candidates().iter().zip(verdicts) {
        match v {
            Some(v) if v.relevant => accepted.push((v.confidence, c)),
            _ => rejected.push(c),
        }
    }
    accepted.sort_by(|(ca, a), (cb, b)| {
        cb.total_cmp(ca)
            .then_with(|| rank_order(a.score, &a.image_id, b.score, &b.image_id))
    });
    rejected.sort_by(|a, b| rank_order(a.score, &a.image_id, b.score, &b.image_id));
    let n_accepted = accepted.len();
    let (ranked, scores) = accepted
        .into_iter()
        .map(|(conf, c)| (c, 1.0 + conf))
        .chain(rejected.into_iter().map(|c| (c, c.score)))
        .take(k_out)
        .map(|(c, s)| (c.image_id.clone(), s))
        .unzip();
    Ok(RerankOutcome {
        ranked,
        scores,
        accepted: n_accepted,
        failures,
        degraded: false,
    })
}

/// Rule for [`MockJudge`]: accept when the mock-embedding similarity between
/// query and image caption exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockJudgeRule {
    pub threshold: f64,
    #[serde(default = "default_mock_dim")]
    pub dim: usize,
    /// Reject images whose recorded location differs from the location hint.
    #[serde(default = "default_true")]
    pub check_location: bool,
}

fn default_mock_dim() -> usize {
    512
}

fn default_true() -> bool {
    true
}

/// Deterministic judge over image captions (falling back to the id string).
#[derive(Debug, Clone)]
pub struct MockJudge {
    rule: MockJudgeRule,
    captions: HashMap<String, String>,
    locations: HashMap<String, String>,
}

impl MockJudge {
    pub fn new(rule: MockJudgeRule) -> Self {
        Self {
            rule,
            captions: HashMap::new(),
            locations: HashMap::new(),
        }
    }

    pub fn with_captions(mut self, captions: HashMap<String, String>) -> Self {
        self.captions = captions;
        self
    }

    pub fn with_locations(mut self, locations: HashMap<String, String>) -> Self {
        self.locations = locations;
        self
    }

    pub fn similarity(&self, query_text: &str, image_id: &str) -> Result<f64, EmbeddingError> {
        let caption = self.captions.get(image_id).map_or(image_id, String::as_str);
        cosine_similarity(
            &mock_embed(query_text, self.rule.dim)?,
            &mock_embed(caption, self.rule.dim)?,
        )
    }
}

impl RelevanceJudge for MockJudge {
    fn judge(&self, query_text: &str, image_id: &str, location_hint: Option<&str>) -> Result<JudgeVerdict, JudgeError> {
        if self.rule.check_location {
            if let (Some(hint), Some(actual)) = (location_hint, self.locations.get(image_id)) {
                if !hint.trim().eq_ignore_ascii_case(actual.trim()) {
                    return Ok(JudgeVerdict {
                        image_id: image_id.to_string(),
                        relevant: false,
                        confidence: 1.0,
                    });
                }
            }
        }
        let sim = self.similarity(query_text, image_id)?;
        let t = self.rule.threshold;
        let (relevant, margin) = if sim > t {
            (true, (sim - t) / (1.0 - t).max(f64::EPSILON))
        } else {
            (false, (t - sim) / (1.0 + t).max(f64::EPSILON))
        };
        Ok(JudgeVerdict {
            image_id: image_id.to_string(),
            relevant,
            confidence: margin.clamp(0.0, 1.0),
        })
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    query: &'a str,
    image_id: &'a str,
    location: Option<&'a str>,
}

#[derive(Deserialize)]
struct JudgeResponse {
    relevant: bool,
    confidence: f64,
}

/// Client for a service exposing `POST /judge`.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpJudge {
    pub fn new(base_url: &str) -> Result<Self, JudgeError> {
        Ok(Self {
            url: format!("{}/judge", base_url.trim_end_matches('/')),
            client: blocking_client(Duration::from_secs(300))?,
        })
    }
}

impl RelevanceJudge for HttpJudge {
    fn judge(&self, query_text: &str, image_id: &str, location_hint: Option<&str>) -> Result<JudgeVerdict, JudgeError> {
        let resp: JudgeResponse = post_json(
            &self.client,
            &self.url,
            None,
            &JudgeRequest {
                query: query_text,
                image_id,
                location: location_hint,
            },
        )?;
        if !(0.0..=1.0).contains(&resp.confidence) {
            return Err(JudgeError::InvalidConfidence(resp.confidence));
        }
        Ok(JudgeVerdict {
            image_id: image_id.to_string(),
            relevant: resp.relevant,
            confidence: resp.confidence,
        })
    }
}
