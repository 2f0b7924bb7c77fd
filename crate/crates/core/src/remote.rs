//! Blocking JSON-over-HTTP clients for optional external services.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::{EmbeddingVector, TextEncoder};

/// Environment variables naming external endpoints.
pub const ENV_EMBEDDER: &str = "WEBEXPERT_EMBEDDER_URL";
pub const ENV_SUMMARIZER: &str = "WEBEXPERT_SUMMARIZER_URL";
pub const ENV_PLANNER: &str = "WEBEXPERT_PLANNER_URL";

pub fn endpoint_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

/// POSTs `body`, retrying up to `retries` extra times on transport or decode
/// failure.
pub fn post_json<B: Serialize, T: DeserializeOwned>(
    endpoint: &str,
    body: &B,
    timeout: Duration,
    retries: usize,
) -> Result<T> {
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let mut last = String::new();
    for _ in 0..=retries {
        match agent.post(endpoint).send_json(body) {
            Ok(resp) => match resp.into_json::<T>() {
                Ok(v) => return Ok(v),
                Err(e) => last = format!("bad response from {endpoint}: {e}"),
            },
            Err(e) => last = format!("{endpoint}: {e}"),
        }
    }
    Err(Error::Remote(last))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding service: `{texts: [..]}` → `{vectors: [[..], ..]}`. Returned
/// vectors are L2-normalized locally.
pub struct RemoteEncoder {
    pub endpoint: String,
    pub dim: usize,
    pub timeout: Duration,
    pub retries: usize,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            dim,
            timeout: Duration::from_secs(30),
            retries: 1,
        }
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let resp: EmbedResponse = post_json(&self.endpoint, &EmbedRequest { texts }, self.timeout, self.retries)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Remote(format!(
                "embedder returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch { left: v.len(), right: self.dim });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_remote_error() {
        let r: Result<serde_json::Value> = post_json(
            "http://127.0.0.1:9/none",
            &serde_json::json!({}),
            Duration::from_millis(200),
            0,
        );
        assert!(matches!(r, Err(Error::Remote(_))));
    }
}
