//! Two-round LLM query reformulation with a hard 30-word cap.

mod client;
mod prompts;

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{prompt_hash, FixtureClient, HttpChatClient, LlmError, TextLlmClient};
pub use prompts::{build_round1_prompt, build_round2_prompt, requirements};

pub const MAX_QUERY_WORDS: usize = 30;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("round-2 prompt input is empty")]
    EmptyPromptInput,
    #[error("rewriting topic {topic_id} failed: {source}")]
    Client {
        topic_id: String,
        #[source]
        source: LlmError,
    },
    #[error("topics line {line}: {message}")]
    TopicFormat { line: usize, message: String },
    #[error("rewrites line {line}: {message}")]
    RewriteFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub narrative: String,
    #[serde(rename = "location", default, skip_serializing_if = "Option::is_none")]
    pub location_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewrittenQuery {
    pub topic_id: String,
    pub text: String,
    pub word_count: usize,
}

impl RewrittenQuery {
    /// Collapses whitespace and keeps at most [`MAX_QUERY_WORDS`] tokens.
    /// Returns `None` for text without any token.
    pub fn capped(topic_id: &str, text: &str) -> Option<Self> {
        let words: Vec<&str> = text.split_whitespace().take(MAX_QUERY_WORDS).collect();
        if words.is_empty() {
            return None;
        }
        Some(Self {
            topic_id: topic_id.to_string(),
            word_count: words.len(),
            text: words.join(" "),
        })
    }
}

/// One JSON object per line; blank lines are skipped.
pub fn read_topics<R: BufRead>(input: R) -> Result<Vec<Topic>, RewriteError> {
    let mut topics: Vec<Topic> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| RewriteError::TopicFormat { line: n + 1, message };
        let topic: Topic = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if topic.title.trim().is_empty() {
            return Err(err(format!("topic {} has an empty title", topic.topic_id)));
        }
        if topics.iter().any(|t| t.topic_id == topic.topic_id) {
            return Err(err(format!("duplicate topic id {}", topic.topic_id)));
        }
        topics.push(topic);
    }
    Ok(topics)
}

pub fn write_topics<W: Write>(topics: &[Topic], mut w: W) -> io::Result<()> {
    for t in topics {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

fn complete_with_retry(client: &dyn TextLlmClient, prompt: &str, attempts: u32) -> Result<String, LlmError> {
    let mut last = None;
    for _ in 0..attempts {
        match client.complete(prompt) {
            Ok(out) if !out.trim().is_empty() => return Ok(out),
            Ok(_) => last = Some(LlmError::EmptyResponse),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(LlmError::EmptyResponse))
}

/// Runs both prompt rounds for a topic.
///
/// An over-long round-2 answer is re-requested up to `max_retries` times and
/// then cut to the first 30 whitespace tokens.
pub fn rewrite_query(
    topic: &Topic,
    client: &dyn TextLlmClient,
    max_retries: u32,
) -> Result<RewrittenQuery, RewriteError> {
    let attempts = max_retries + 1;
    let client_err = |source| RewriteError::Client {
        topic_id: topic.topic_id.clone(),
        source,
    };
    let summary = complete_with_retry(client, &build_round1_prompt(topic), attempts).map_err(client_err)?;
    let round2 = build_round2_prompt(&summary)?;

    let mut overlong = None;
    let mut last_err = None;
    for _ in 0..attempts {
        match client.complete(&round2) {
            Ok(out) => {
                let count = out.split_whitespace().count();
                if count == 0 {
                    last_err = Some(LlmError::EmptyResponse);
                } else if count <= MAX_QUERY_WORDS {
                    return Ok(RewrittenQuery::capped(&topic.topic_id, &out).expect("non-empty"));
                } else {
                    log::debug!("topic {}: rewrite has {count} words, retrying", topic.topic_id);
                    overlong = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match overlong {
        Some(out) => {
            log::warn!(
                "topic {}: truncating rewrite to {MAX_QUERY_WORDS} words",
                topic.topic_id
            );
            Ok(RewrittenQuery::capped(&topic.topic_id, &out).expect("non-empty"))
        }
        None => Err(client_err(last_err.unwrap_or(LlmError::EmptyResponse))),
    }
}

/// Rewrites all topics with at most `parallelism` concurrent client calls.
/// Output order follows `topics`.
pub fn rewrite_all(
    topics: &[Topic],
    client: &dyn TextLlmClient,
    max_retries: u32,
    parallelism: usize,
) -> Result<Vec<RewrittenQuery>, RewriteError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        topics
            .par_iter()
            .map(|t| rewrite_query(t, client, max_retries))
            .collect()
    })
}

/// `topic_id<TAB>text` lines.
pub fn write_rewrites<W: Write>(rewrites: &[RewrittenQuery], mut w: W) -> io::Result<()> {
    for r in rewrites {
        writeln!(w, "{}\t{}", r.topic_id, r.text)?;
    }
    Ok(())
}

pub fn read_rewrites<R: BufRead>(input: R) -> Result<Vec<RewrittenQuery>, RewriteError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| RewriteError::RewriteFormat {
            line: n + 1,
            message: message.to_string(),
        };
        let (id, text) = line.split_once('\t').ok_or_else(|| err("expected topic_id<TAB>text"))?;
        out.push(RewrittenQuery::capped(id, text).ok_or_else(|| err("empty rewrite"))?);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    pub(crate) fn meals_topic() -> Topic {
        Topic {
            topic_id: "T1".into(),
            title: "Photographing meals.".into(),
            description: "Find all the times I take a photo of my meal.".into(),
            narrative: "Each instance should involve photographing a meal or plate of food, not just seeing or \
                        eating it. Taking a photo with a camera or phone are required for any eating instance \
                        to be relevant."
                .into(),
            location_hint: None,
        }
    }

    const ROUND1_OUT: &str =
        "Images must show instances of meals being photographed with a camera or phone, not just seen or eaten.";
    const ROUND2_OUT: &str = "I'm taking a photo of my meal, aiming my camera or phone at it, and there it \
                              appears on the screen, capturing the moment before eating.";

    /// Returns a fixed answer for every prompt and counts calls.
    struct Constant {
        answer: String,
        calls: AtomicUsize,
    }

    impl TextLlmClient for Constant {
        fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.answer.clone())
        }
    }

    struct Failing;

    impl TextLlmClient for Failing {
        fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
            Err(LlmError::EmptyResponse)
        }
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn meals_fixture_reproduces_rewrite() {
        let topic = meals_topic();
        let mut fx = FixtureClient::new();
        fx.insert(&build_round1_prompt(&topic), ROUND1_OUT);
        fx.insert(&build_round2_prompt(ROUND1_OUT).unwrap(), ROUND2_OUT);
        let r = rewrite_query(&topic, &fx, 2).unwrap();
        assert_eq!(r.text, ROUND2_OUT);
        assert_eq!(r.word_count, 26);
    }

    #[test]
    fn under_limit_verbatim() {
        let c = Constant {
            answer: words(25),
            calls: AtomicUsize::new(0),
        };
        let r = rewrite_query(&meals_topic(), &c, 2).unwrap();
        assert_eq!(r.text, words(25));
        assert_eq!(r.word_count, 25);
        assert_eq!(c.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn overlong_retried_then_truncated() {
        let c = Constant {
            answer: words(40),
            calls: AtomicUsize::new(0),
        };
        let r = rewrite_query(&meals_topic(), &c, 2).unwrap();
        assert_eq!(r.word_count, 30);
        assert_eq!(r.text, words(30));
        // one round-1 call plus three round-2 attempts
        assert_eq!(c.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_failure_carries_topic() {
        match rewrite_query(&meals_topic(), &Failing, 1) {
            Err(RewriteError::Client { topic_id, .. }) => assert_eq!(topic_id, "T1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn topics_file() {
        let text = r#"{"topic_id":"T1","title":"Meals","description":"d","narrative":"n","location":"home"}
{"topic_id":"T2","title":"Bikes","description":"d2","narrative":""}
"#;
        let t = read_topics(text.as_bytes()).unwrap();
        assert_eq!(t[0].location_hint.as_deref(), Some("home"));
        assert_eq!(t[1].location_hint, None);
        let mut buf = Vec::new();
        write_topics(&t, &mut buf).unwrap();
        assert_eq!(read_topics(buf.as_slice()).unwrap(), t);
        assert!(read_topics(r#"{"topic_id":"T1","title":" "}"#.as_bytes()).is_err());
        assert!(read_topics("{}\n".as_bytes()).is_err());
    }

    #[test]
    fn rewrites_file() {
        let r = vec![RewrittenQuery::capped("T1", "I am eating").unwrap()];
        let mut buf = Vec::new();
        write_rewrites(&r, &mut buf).unwrap();
        assert_eq!(buf, b"T1\tI am eating\n");
        assert_eq!(read_rewrites(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn parallel_rewrite_preserves_order() {
        let topics: Vec<Topic> = (0..8)
            .map(|i| Topic {
                topic_id: format!("T{i}"),
                ..meals_topic()
            })
            .collect();
        let c = Constant {
            answer: words(5),
            calls: AtomicUsize::new(0),
        };
        let out = rewrite_all(&topics, &c, 0, 4).unwrap();
        let ids: Vec<_> = out.iter().map(|r| r.topic_id.as_str()).collect();
        assert_eq!(ids, ["T0", "T1", "T2", "T3", "T4", "T5", "T6", "T7"]);
    }

    proptest! {
        #[test]
        fn stored_rewrite_never_exceeds_cap(n in 1usize..=200, retries in 0u32..3) {
            let c = Constant { answer: words(n), calls: AtomicUsize::new(0) };
            let r = rewrite_query(&meals_topic(), &c, retries).unwrap();
            prop_assert!(r.word_count <= MAX_QUERY_WORDS);
            prop_assert_eq!(r.word_count, r.text.split_whitespace().count());
            prop_assert_eq!(r.word_count, n.min(MAX_QUERY_WORDS));
        }
    }
}
