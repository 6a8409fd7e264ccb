//! Text LLM clients: an offline fixture table and an OpenAI-style chat endpoint.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{blocking_client, post_json, HttpError};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no fixture completion for prompt {0}")]
    MissingFixture(String),
    #[error("llm request failed: {0}")]
    Http(#[from] HttpError),
    #[error("llm response had no completion")]
    EmptyResponse,
    #[error("fixture line {line}: {message}")]
    FixtureFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait TextLlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Hex SHA-256 of the prompt bytes; the fixture-table key.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Prompt-keyed completion table read from `prompt_hash<TAB>completion` lines.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    completions: HashMap<String, String>,
}

impl FixtureClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, completion: impl Into<String>) {
        self.completions.insert(prompt_hash(prompt), completion.into());
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, LlmError> {
        let mut completions = HashMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (hash, completion) = line.split_once('\t').ok_or_else(|| LlmError::FixtureFormat {
                line: n + 1,
                message: "expected prompt_hash<TAB>completion".into(),
            })?;
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(LlmError::FixtureFormat {
                    line: n + 1,
                    message: format!("{hash:?} is not a SHA-256 hex digest"),
                });
            }
            completions.insert(hash.to_ascii_lowercase(), unescape(completion));
        }
        Ok(Self { completions })
    }

    /// Writes entries sorted by hash so output is reproducible.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut entries: Vec<_> = self.completions.iter().collect();
        entries.sort();
        for (hash, completion) in entries {
            writeln!(w, "{hash}\t{}", escape(completion))?;
        }
        Ok(())
    }
}

impl TextLlmClient for FixtureClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = prompt_hash(prompt);
        self.completions.get(&key).cloned().ok_or(LlmError::MissingFixture(key))
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        Ok(Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            client: blocking_client(Duration::from_secs(120))?,
        })
    }
}

impl TextLlmClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp: ChatResponse = post_json(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or(LlmError::EmptyResponse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn fixture_file_roundtrip() {
        let mut c = FixtureClient::new();
        c.insert("p1", "line one\nline\ttwo \\ end");
        c.insert("p2", "plain");
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = FixtureClient::read(buf.as_slice()).unwrap();
        assert_eq!(back.complete("p1").unwrap(), "line one\nline\ttwo \\ end");
        assert_eq!(back.complete("p2").unwrap(), "plain");
        assert!(matches!(back.complete("p3"), Err(LlmError::MissingFixture(_))));
    }

    #[test]
    fn fixture_rejects_bad_lines() {
        assert!(matches!(
            FixtureClient::read("nohash\n".as_bytes()),
            Err(LlmError::FixtureFormat { line: 1, .. })
        ));
        assert!(matches!(
            FixtureClient::read("abc\tx\n".as_bytes()),
            Err(LlmError::FixtureFormat { line: 1, .. })
        ));
    }
}
