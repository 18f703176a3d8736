//! Append-only JSON-lines record of every agent call.
//!
//! One object per line:
//! `{"timestamp", "session_id", "attempt_index", "purpose", "prompt_kind",
//!   "prompt_digest", "latency_ms", "prompt_tokens", "completion_tokens",
//!   "cost", "status", "error"}`. Prompt text and credentials are never written.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, AgentRequest, PocCandidate, Purpose};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub timestamp: String,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt_index: Option<usize>,
    pub purpose: String,
    pub prompt_kind: String,
    pub prompt_digest: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl SessionLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &SessionRecord) {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = file.write_all(line.as_bytes()) {
            log::error!("cannot append to session log {}: {e}", self.path.display());
        }
    }

    /// Records a note that is not an agent call, such as a ranking fallback.
    pub fn note(&self, session_id: &str, purpose: &str, status: &str, detail: Option<String>) {
        self.append(&SessionRecord {
            timestamp: now(),
            session_id: session_id.into(),
            attempt_index: None,
            purpose: purpose.into(),
            prompt_kind: String::new(),
            prompt_digest: String::new(),
            latency_ms: 0,
            prompt_tokens: None,
            completion_tokens: None,
            cost: None,
            status: status.into(),
            error: detail,
        });
    }
}

pub fn read_session_log(path: &Path) -> std::io::Result<Vec<SessionRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Wraps an agent and logs each call it forwards.
pub struct LoggedAgent<A> {
    inner: A,
    log: SessionLog,
}

impl<A: Agent> LoggedAgent<A> {
    pub fn new(inner: A, log: SessionLog) -> Self {
        Self { inner, log }
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    #[allow(clippy::too_many_arguments)]
    fn record<T>(
        &self,
        session_id: &str,
        attempt_index: Option<usize>,
        purpose: &str,
        prompt: &PromptBundle,
        started: Instant,
        result: &Result<T, AgentError>,
        metadata: Option<&std::collections::BTreeMap<String, serde_json::Value>>,
    ) {
        let get_u64 = |k: &str| metadata.and_then(|m| m.get(k)).and_then(|v| v.as_u64());
        self.log.append(&SessionRecord {
            timestamp: now(),
            session_id: session_id.into(),
            attempt_index,
            purpose: purpose.into(),
            prompt_kind: prompt.kind.as_str().into(),
            prompt_digest: prompt.inputs_digest.clone(),
            latency_ms: get_u64("latency_ms").unwrap_or(started.elapsed().as_millis() as u64),
            prompt_tokens: get_u64("prompt_tokens"),
            completion_tokens: get_u64("completion_tokens"),
            cost: metadata.and_then(|m| m.get("cost")).and_then(|v| v.as_f64()),
            status: if result.is_ok() { "ok" } else { "error" }.into(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
    }
}

impl<A: Agent> Agent for LoggedAgent<A> {
    fn generate_candidate(&self, req: &AgentRequest) -> Result<PocCandidate, AgentError> {
        let started = Instant::now();
        let result = self.inner.generate_candidate(req);
        let metadata = result.as_ref().ok().map(|c| &c.agent_metadata);
        self.record(
            &req.session_id,
            Some(req.attempt_index),
            "candidate",
            &req.prompt,
            started,
            &result,
            metadata,
        );
        result
    }

    fn complete(
        &self,
        purpose: Purpose,
        instance_id: &str,
        prompt: &PromptBundle,
    ) -> Result<String, AgentError> {
        let started = Instant::now();
        let result = self.inner.complete(purpose, instance_id, prompt);
        self.record(instance_id, None, purpose.as_str(), prompt, started, &result, None);
        result
    }

    fn session_log(&self) -> Option<&SessionLog> {
        Some(&self.log)
    }
}
