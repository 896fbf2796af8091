//! Chat-completion endpoint client.

use super::{render_steps, BackendBatch, CompletionRequest, PolicyBackend, PolicyError, SampleError, SamplingParams};
use crate::http::{join_url, post_json, HttpError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;

const INSTRUCTION: &str = "Solve the problem step by step. Wrap every reasoning step in \
<step></step> tags and the final answer in <answer></answer> tags.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub api_base: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    /// Whether the endpoint accepts a `top_k` sampling field.
    pub supports_top_k: bool,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            api_base: String::new(),
            api_key: None,
            model: "policy".into(),
            supports_top_k: true,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemotePolicy {
    config: RemoteConfig,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config }
    }

    /// The JSON body posted to `{api_base}/chat/completions`.
    pub fn request_body(&self, request: &CompletionRequest<'_>, params: &SamplingParams, n: usize) -> Value {
        let problem = request.problem;
        let mut content = vec![json!({"type": "text", "text": problem.question})];
        for image in &problem.images {
            content.push(json!({"type": "image_url", "image_url": {"url": image.as_url()}}));
        }
        let mut messages = vec![
            json!({"role": "system", "content": INSTRUCTION}),
            json!({"role": "user", "content": content}),
        ];
        if !request.prefix.is_empty() {
            messages.push(json!({"role": "assistant", "content": render_steps(request.prefix)}));
            messages.push(json!({
                "role": "user",
                "content": "Continue from the next step. Do not repeat the steps above."
            }));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "n": n,
            "max_tokens": params.max_tokens,
        });
        if self.config.supports_top_k {
            body["top_k"] = json!(params.top_k);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed.wrapping_add(request.first_draw));
        }
        body
    }
}

impl PolicyBackend for RemotePolicy {
    fn generate(
        &self,
        request: &CompletionRequest<'_>,
        params: &SamplingParams,
        n: usize,
    ) -> Result<BackendBatch, PolicyError> {
        if self.config.api_base.is_empty() {
            return Err(PolicyError::Precondition("remote backend has no api_base".into()));
        }
        let url = join_url(&self.config.api_base, "chat/completions");
        let body = self.request_body(request, params, n);
        let response = post_json(
            &url,
            self.config.api_key.as_deref(),
            &body,
            Duration::from_secs(self.config.timeout_secs),
        )
        .map_err(|e| match e {
            e if e.is_auth() => PolicyError::Auth(e.to_string()),
            e if e.is_transient() => PolicyError::Transport(e.to_string()),
            HttpError::Decode(m) => PolicyError::Protocol(m),
            e => PolicyError::Request(e.to_string()),
        })?;
        parse_response(&response, n)
    }
}

fn parse_response(response: &Value, n: usize) -> Result<BackendBatch, PolicyError> {
    let choices = response["choices"]
        .as_array()
        .ok_or_else(|| PolicyError::Protocol("response has no choices array".into()))?;
    let mut samples: Vec<Result<String, SampleError>> = vec![Err(SampleError::Empty); n];
    for (pos, choice) in choices.iter().enumerate() {
        let index = choice["index"].as_u64().map_or(pos, |i| i as usize);
        if index >= n {
            continue;
        }
        let content = choice["message"]["content"].as_str().unwrap_or_default();
        samples[index] = if choice["finish_reason"] == "content_filter" {
            Err(SampleError::Refused("content filter".into()))
        } else if let Some(refusal) = choice["message"]["refusal"].as_str() {
            Err(SampleError::Refused(refusal.to_string()))
        } else if content.trim().is_empty() {
            Err(SampleError::Empty)
        } else {
            Ok(content.to_string())
        };
    }
    Ok(BackendBatch {
        samples,
        prompt_tokens: response["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: response["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    })
}
