//! Shared HTTP transport for the remote policy and reflector endpoints.
//! One POST per call, temperature-0 decoding, bounded retries surfaced as
//! errors. Nothing in the primary test suite touches the network.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENDPOINT_URL_VAR: &str = "MPR_ENDPOINT_URL";
pub const AUTH_TOKEN_VAR: &str = "MPR_AUTH_TOKEN";

pub const DEFAULT_MAX_REPLY_TOKENS: u32 = 256;
pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("environment variable {0} is not set")]
    MissingEndpoint(&'static str),
    #[error("request to {url} failed after {attempts} attempts: {last}")]
    Exhausted {
        url: String,
        attempts: u32,
        last: String,
    },
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    max_reply_tokens: u32,
    temperature: f32,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    pub auth_token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub max_reply_tokens: u32,
}

impl RemoteEndpoint {
    /// Endpoint URL and auth token come from the environment; everything
    /// else is configuration.
    pub fn from_env() -> Result<Self, TransportError> {
        let url = std::env::var(ENDPOINT_URL_VAR)
            .map_err(|_| TransportError::MissingEndpoint(ENDPOINT_URL_VAR))?;
        Ok(RemoteEndpoint {
            url,
            auth_token: std::env::var(AUTH_TOKEN_VAR).ok(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            max_reply_tokens: DEFAULT_MAX_REPLY_TOKENS,
        })
    }

    pub fn call(&self, prompt: &str) -> Result<String, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .expect("client construction cannot fail with static options");
        let mut last = String::new();
        let attempts = self.retries.max(1);
        for _ in 0..attempts {
            let mut req = client.post(&self.url).json(&Request {
                prompt,
                max_reply_tokens: self.max_reply_tokens,
                temperature: 0.0,
            });
            if let Some(token) = &self.auth_token {
                req = req.bearer_auth(token);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => match resp.json::<Response>() {
                    Ok(body) => return Ok(body.text),
                    Err(e) => last = format!("bad response body: {e}"),
                },
                Err(e) => last = e.to_string(),
            }
        }
        Err(TransportError::Exhausted {
            url: self.url.clone(),
            attempts,
            last,
        })
    }
}
