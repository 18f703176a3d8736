//! Replays pre-recorded agent output from a fixture directory.
//!
//! ```text
//! <dir>/<session_id>/attempt_<n>.txt   reply for attempt n (fenced or bare source)
//! <dir>/<instance_id>/guidance.txt     reply to the guidance prompt
//! <dir>/<instance_id>/ranking.txt      reply to the trace-selection prompt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::extract::{declared_entry, extract_source};
use super::{Agent, AgentError, AgentRequest, PocCandidate, Purpose};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    dir: PathBuf,
}

impl ScriptedAgent {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(AgentError::InvalidDescriptor(format!(
                "script directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self, rel: PathBuf) -> Result<String, AgentError> {
        let path = self.dir.join(&rel);
        std::fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                AgentError::FixtureMissing(path)
            } else {
                AgentError::Io { path, source: e }
            }
        })
    }
}

impl Agent for ScriptedAgent {
    fn generate_candidate(&self, req: &AgentRequest) -> Result<PocCandidate, AgentError> {
        let started = Instant::now();
        let rel = Path::new(&req.session_id).join(format!("attempt_{}.txt", req.attempt_index));
        let reply = self.read(rel.clone())?;
        let source_text = extract_source(&reply).ok_or_else(|| {
            AgentError::MalformedResponse(format!("fixture {} has no source", rel.display()))
        })?;
        let mut agent_metadata = BTreeMap::new();
        agent_metadata.insert("backend".into(), json!("scripted"));
        agent_metadata.insert("fixture".into(), json!(rel.to_string_lossy().replace('\\', "/")));
        agent_metadata.insert("latency_ms".into(), json!(started.elapsed().as_millis() as u64));
        Ok(PocCandidate {
            declared_entry: declared_entry(&source_text),
            source_text,
            agent_metadata,
        })
    }

    fn complete(
        &self,
        purpose: Purpose,
        instance_id: &str,
        _prompt: &PromptBundle,
    ) -> Result<String, AgentError> {
        let file = match purpose {
            Purpose::Guidance => "guidance.txt",
            Purpose::TraceRanking => "ranking.txt",
        };
        self.read(Path::new(instance_id).join(file))
    }
}
