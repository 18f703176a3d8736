//! Chat-completion style HTTP backend.
//!
//! Request body: `{"model": ..., "messages": [{"role": "user", "content": ...}]}`.
//! Replies in either the `choices[0].message.content` or the
//! `content[].text` shape are accepted. Token usage is read from
//! `usage.{prompt,completion}_tokens` or `usage.{input,output}_tokens`, and
//! a provider-reported `cost` (top level or under `usage`) is recorded as is.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::extract::{declared_entry, extract_source};
use super::{Agent, AgentBackendDescriptor, AgentError, AgentRequest, PocCandidate, Purpose};
use crate::config::DEFAULT_CREDENTIAL_ENV;
use crate::prompt::PromptBundle;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Extra attempts after the first one, for transport failures only.
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

pub struct RemoteAgent {
    client: Client,
    endpoint: String,
    model: Option<String>,
    credential: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for RemoteAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteAgent")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("credential", &self.credential.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

pub(crate) struct Reply {
    pub text: String,
    pub metadata: BTreeMap<String, Value>,
}

impl RemoteAgent {
    pub fn new(
        descriptor: &AgentBackendDescriptor,
        retry: RetryPolicy,
        request_timeout: Duration,
    ) -> Result<Self, AgentError> {
        let endpoint = descriptor.endpoint_or_script_dir.trim().to_string();
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(AgentError::InvalidDescriptor(format!(
                "remote endpoint `{endpoint}` is not an http(s) URL"
            )));
        }
        let credential = match &descriptor.credential_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| AgentError::MissingCredential(var.clone()))?,
            ),
            // the default variable is optional; local endpoints may need no key
            None => std::env::var(DEFAULT_CREDENTIAL_ENV).ok().filter(|k| !k.is_empty()),
        };
        let client = Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| AgentError::InvalidDescriptor(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model: descriptor.model_name.clone(),
            credential,
            retry,
        })
    }

    fn send_once(&self, prompt: &str) -> Result<Value, AgentError> {
        let mut body = json!({
            "messages": [{ "role": "user", "content": prompt }],
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.credential {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AgentError::BackendUnavailable {
            message: transport_message(&e),
            attempts: 1,
        })?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(AgentError::BackendUnavailable {
                message: format!("HTTP {status}"),
                attempts: 1,
            });
        }
        let text = resp.text().map_err(|e| AgentError::BackendUnavailable {
            message: transport_message(&e),
            attempts: 1,
        })?;
        if !status.is_success() {
            return Err(AgentError::BackendRejected {
                status: status.as_u16(),
                body: truncate(&text, 512),
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| AgentError::MalformedResponse(format!("reply is not JSON: {e}")))
    }

    /// Sends one prompt, retrying transport failures with exponential backoff.
    pub(crate) fn send(&self, prompt: &str) -> Result<Reply, AgentError> {
        let started = Instant::now();
        let mut attempt = 0u32;
        let value = loop {
            match self.send_once(prompt) {
                Ok(v) => break v,
                Err(AgentError::BackendUnavailable { message, .. }) => {
                    if attempt >= self.retry.retries {
                        return Err(AgentError::BackendUnavailable {
                            message,
                            attempts: attempt + 1,
                        });
                    }
                    let delay = self.retry.base_backoff.saturating_mul(1 << attempt.min(16));
                    log::warn!("agent backend unavailable ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(other) => return Err(other),
            }
        };
        let text = reply_text(&value)
            .ok_or_else(|| AgentError::MalformedResponse("reply has no message content".into()))?;
        let mut metadata = BTreeMap::new();
        metadata.insert("backend".into(), json!("remote"));
        if let Some(model) = &self.model {
            metadata.insert("model".into(), json!(model));
        }
        metadata.insert("latency_ms".into(), json!(started.elapsed().as_millis() as u64));
        metadata.insert("transport_attempts".into(), json!(attempt + 1));
        let usage = &value["usage"];
        for (key, alts) in [
            ("prompt_tokens", ["prompt_tokens", "input_tokens"]),
            ("completion_tokens", ["completion_tokens", "output_tokens"]),
        ] {
            if let Some(n) = alts.iter().find_map(|a| usage[*a].as_u64()) {
                metadata.insert(key.into(), json!(n));
            }
        }
        if let Some(cost) = value["cost"].as_f64().or_else(|| usage["cost"].as_f64()) {
            metadata.insert("cost".into(), json!(cost));
        }
        Ok(Reply { text, metadata })
    }
}

fn transport_message(e: &reqwest::Error) -> String {
    // the URL may carry a key in its query string
    let text = e.to_string();
    match e.url() {
        Some(url) => text.replace(url.as_str(), "<endpoint>"),
        None => text,
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

pub(crate) fn reply_text(value: &Value) -> Option<String> {
    if let Some(s) = value["choices"][0]["message"]["content"].as_str() {
        return Some(s.to_string());
    }
    let parts = value["content"].as_array()?;
    let text: Vec<&str> = parts
        .iter()
        .filter(|p| p["type"].as_str().is_none_or(|t| t == "text"))
        .filter_map(|p| p["text"].as_str())
        .collect();
    (!text.is_empty()).then(|| text.join("\n"))
}

impl Agent for RemoteAgent {
    fn generate_candidate(&self, req: &AgentRequest) -> Result<PocCandidate, AgentError> {
        let reply = self.send(&req.prompt.text)?;
        let source_text = extract_source(&reply.text).ok_or_else(|| {
            AgentError::MalformedResponse("reply contains no extractable source".into())
        })?;
        Ok(PocCandidate {
            declared_entry: declared_entry(&source_text),
            source_text,
            agent_metadata: reply.metadata,
        })
    }

    fn complete(
        &self,
        _purpose: Purpose,
        _instance_id: &str,
        prompt: &PromptBundle,
    ) -> Result<String, AgentError> {
        Ok(self.send(&prompt.text)?.text)
    }
}
