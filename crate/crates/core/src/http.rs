//! Minimal blocking JSON-over-HTTP helpers shared by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub(crate) fn blocking_client(timeout: Duration) -> Result<reqwest::blocking::Client, HttpError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| HttpError::Transport(e.to_string()))
}

/// POSTs `body` as JSON and decodes a JSON reply. Any status other than 200
/// is an error.
pub(crate) fn post_json<B: Serialize + ?Sized, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, HttpError> {
    let mut req = client.post(url).json(body);
    if let Some(token) = bearer {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(|e| HttpError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| HttpError::Transport(e.to_string()))?;
    if status != reqwest::StatusCode::OK {
        return Err(HttpError::Status {
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| HttpError::Malformed(e.to_string()))
}
