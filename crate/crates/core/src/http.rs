//! Minimal blocking JSON-over-HTTP helper shared by the remote policy and scorer.

use serde_json::Value;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid response body: {0}")]
    Decode(String),
}

impl HttpError {
    /// Statuses worth retrying: throttling and server-side failures.
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Status(code) => *code == 429 || *code >= 500,
            HttpError::Transport(_) => true,
            HttpError::Decode(_) => false,
        }
    }

    pub fn is_auth(&self) -> bool {
        matches!(self, HttpError::Status(401 | 403))
    }
}

pub(crate) fn post_json(url: &str, bearer: Option<&str>, body: &Value, timeout: Duration) -> Result<Value, HttpError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        request = request.header("Authorization", format!("Bearer {token}"));
    }
    match request.send_json(body) {
        Ok(mut response) => response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| HttpError::Decode(e.to_string())),
        Err(ureq::Error::StatusCode(code)) => Err(HttpError::Status(code)),
        Err(e) => Err(HttpError::Transport(e.to_string())),
    }
}

/// Joins a base URL and a path with exactly one slash.
pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
