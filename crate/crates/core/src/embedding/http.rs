use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingVector, ProviderError};
use crate::http::{blocking_client, post_json};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

/// Client for a model service exposing `/embed_text` and `/embed_image`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    base_url: String,
    dim: usize,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Result<Self, ProviderError> {
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            dim,
            batch_size: 64,
            client: blocking_client(Duration::from_secs(120))?,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn call(&self, endpoint: &str, inputs: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let url = format!("{}/{}", self.base_url, endpoint);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.batch_size) {
            let resp: EmbedResponse = post_json(&self.client, &url, None, &EmbedRequest { inputs: chunk })?;
            if resp.dim != self.dim {
                return Err(ProviderError::Malformed(format!(
                    "declared dim {} but provider configured for {}",
                    resp.dim, self.dim
                )));
            }
            if resp.vectors.len() != chunk.len() {
                return Err(ProviderError::CountMismatch {
                    expected: chunk.len(),
                    actual: resp.vectors.len(),
                });
            }
            for v in resp.vectors {
                if v.len() != self.dim {
                    return Err(ProviderError::Malformed(format!(
                        "vector of length {} in a dim-{} response",
                        v.len(),
                        self.dim
                    )));
                }
                out.push(EmbeddingVector::normalized(v)?);
            }
        }
        Ok(out)
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.call("embed_text", texts)
    }

    fn embed_images(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.call("embed_image", ids)
    }
}
