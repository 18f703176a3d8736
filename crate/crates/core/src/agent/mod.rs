//! PoC-generating agents behind one trait: a remote chat backend and a
//! scripted replay backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::RunConfig;
use crate::prompt::PromptBundle;

pub mod extract;
mod remote;
mod scripted;
mod session_log;
mod tasks;

pub use remote::{RemoteAgent, RetryPolicy};
pub use scripted::ScriptedAgent;
pub use session_log::{read_session_log, LoggedAgent, SessionLog, SessionRecord};
pub use tasks::{
    generate_cve_guidance, parse_ranking, rank_traces_via_agent, AgentRanking, GuidanceCache,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { message: String, attempts: u32 },
    #[error("agent backend rejected the request with HTTP {status}: {body}")]
    BackendRejected { status: u16, body: String },
    #[error("malformed agent response: {0}")]
    MalformedResponse(String),
    #[error("no scripted fixture at {0}")]
    FixtureMissing(PathBuf),
    #[error("invalid agent backend: {0}")]
    InvalidDescriptor(String),
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("cannot build prompt: {0}")]
    Prompt(String),
    #[error("agent I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub prompt: PromptBundle,
    pub attempt_index: usize,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocCandidate {
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_entry: Option<String>,
    /// Backend-reported figures: latency, token counts, cost.
    #[serde(default)]
    pub agent_metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Guidance,
    TraceRanking,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Guidance => "guidance",
            Purpose::TraceRanking => "trace_ranking",
        }
    }
}

/// A source of PoC candidates. Implementations must be usable from several
/// episodes at once.
pub trait Agent: Send + Sync {
    /// Produces exactly one candidate for one attempt.
    fn generate_candidate(&self, req: &AgentRequest) -> Result<PocCandidate, AgentError>;

    /// Free-text reply to an auxiliary prompt.
    fn complete(
        &self,
        purpose: Purpose,
        instance_id: &str,
        prompt: &PromptBundle,
    ) -> Result<String, AgentError>;

    fn session_log(&self) -> Option<&SessionLog> {
        None
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn generate_candidate(&self, req: &AgentRequest) -> Result<PocCandidate, AgentError> {
        (**self).generate_candidate(req)
    }

    fn complete(
        &self,
        purpose: Purpose,
        instance_id: &str,
        prompt: &PromptBundle,
    ) -> Result<String, AgentError> {
        (**self).complete(purpose, instance_id, prompt)
    }

    fn session_log(&self) -> Option<&SessionLog> {
        (**self).session_log()
    }
}

/// Single-call entry point.
pub fn generate_candidate(agent: &dyn Agent, req: &AgentRequest) -> Result<PocCandidate, AgentError> {
    let candidate = agent.generate_candidate(req)?;
    if candidate.source_text.trim().is_empty() {
        return Err(AgentError::MalformedResponse("empty candidate source".into()));
    }
    Ok(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBackendDescriptor {
    pub kind: BackendKind,
    /// Endpoint URL for remote backends, fixture directory for scripted ones.
    pub endpoint_or_script_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key. The value is
    /// read at connect time and never logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
}

impl Default for AgentBackendDescriptor {
    fn default() -> Self {
        Self::scripted("agent")
    }
}

impl AgentBackendDescriptor {
    pub fn scripted(dir: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_or_script_dir: dir.into(),
            model_name: None,
            credential_env: None,
        }
    }

    pub fn remote(
        endpoint: impl Into<String>,
        model_name: Option<String>,
        credential_env: Option<String>,
    ) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint_or_script_dir: endpoint.into(),
            model_name,
            credential_env,
        }
    }

    /// Parses the CLI shorthand `scripted:<dir>` or `remote:<url>`.
    pub fn parse_shorthand(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("scripted", dir)) if !dir.is_empty() => Ok(Self::scripted(dir)),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::remote(url, None, None)),
            _ => Err(format!(
                "`{s}` is not `scripted:<dir>` or `remote:<url>`"
            )),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            BackendKind::Scripted => "scripted".into(),
            BackendKind::Remote => self.model_name.clone().unwrap_or_else(|| "remote".into()),
        }
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        if self.kind == BackendKind::Scripted {
            let p = Path::new(&self.endpoint_or_script_dir);
            if p.is_relative() {
                self.endpoint_or_script_dir = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Builds the agent a run configuration asks for.
pub fn connect(config: &RunConfig) -> Result<Box<dyn Agent>, AgentError> {
    let descriptor = &config.agent;
    Ok(match descriptor.kind {
        BackendKind::Scripted => Box::new(ScriptedAgent::new(&descriptor.endpoint_or_script_dir)?),
        BackendKind::Remote => Box::new(RemoteAgent::new(
            descriptor,
            RetryPolicy {
                retries: config.transport_retries,
                base_backoff: Duration::from_millis(config.retry_backoff_ms),
            },
            Duration::from_secs(config.request_timeout_seconds),
        )?),
    })
}
