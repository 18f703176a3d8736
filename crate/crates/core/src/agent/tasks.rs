//! Auxiliary agent calls: CVE guidance generation (cached) and trace ranking.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{Agent, AgentError, Purpose};
use crate::instance::ProblemInstance;
use crate::prompt::PromptBuilder;
use crate::trace::{rank_traces, StaticTrace};

/// On-disk guidance cache: `<dir>/<instance_id>/<prompt_digest>.txt`.
#[derive(Debug, Clone)]
pub struct GuidanceCache {
    dir: PathBuf,
}

impl GuidanceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, instance_id: &str, digest: &str) -> PathBuf {
        self.dir.join(instance_id).join(format!("{digest}.txt"))
    }

    fn get(&self, instance_id: &str, digest: &str) -> Option<String> {
        std::fs::read_to_string(self.path_for(instance_id, digest)).ok()
    }

    fn put(&self, instance_id: &str, digest: &str, text: &str) -> Result<(), AgentError> {
        let path = self.path_for(instance_id, digest);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| AgentError::Io { path, source }
        };
        let parent = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent).map_err(io(parent))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))
    }
}

/// Returns cached guidance for the instance's current guidance prompt, or asks
/// the agent once and caches the reply.
pub fn generate_cve_guidance(
    agent: &dyn Agent,
    builder: &PromptBuilder,
    instance: &ProblemInstance,
    cache: &GuidanceCache,
) -> Result<String, AgentError> {
    let prompt = builder
        .build_cve_guidance_prompt(instance)
        .map_err(|e| AgentError::Prompt(e.to_string()))?;
    if let Some(hit) = cache.get(&instance.id, &prompt.inputs_digest) {
        log::debug!("guidance cache hit for {}", instance.id);
        return Ok(hit);
    }
    let text = agent.complete(Purpose::Guidance, &instance.id, &prompt)?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(AgentError::MalformedResponse("empty guidance".into()));
    }
    cache.put(&instance.id, &prompt.inputs_digest, &text)?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRanking {
    pub order: Vec<String>,
    /// True when the agent's answer was unusable and similarity order was used.
    pub fell_back: bool,
}

/// Orders trace ids by asking the agent. Ids the agent leaves out follow in
/// similarity order. Unusable replies fall back to similarity order entirely;
/// only an unavailable backend is an error.
pub fn rank_traces_via_agent(
    agent: &dyn Agent,
    builder: &PromptBuilder,
    instance: &ProblemInstance,
    traces: &[StaticTrace],
) -> Result<AgentRanking, AgentError> {
    let fallback: Vec<String> = rank_traces(traces, &instance.hints, traces.len())
        .into_iter()
        .map(|t| t.trace_id)
        .collect();
    if traces.len() <= 1 {
        return Ok(AgentRanking {
            order: fallback,
            fell_back: false,
        });
    }
    let prompt = builder
        .build_trace_selection_prompt(instance, traces)
        .map_err(|e| AgentError::Prompt(e.to_string()))?;
    let reason = match agent.complete(Purpose::TraceRanking, &instance.id, &prompt) {
        Ok(reply) => match parse_ranking(&reply, &fallback) {
            Ok(order) => {
                return Ok(AgentRanking {
                    order,
                    fell_back: false,
                })
            }
            Err(reason) => reason,
        },
        Err(e @ AgentError::BackendUnavailable { .. }) => return Err(e),
        Err(other) => other.to_string(),
    };
    log::warn!(
        "trace ranking for {} fell back to similarity order: {reason}",
        instance.id
    );
    if let Some(log) = agent.session_log() {
        log.note(&instance.id, Purpose::TraceRanking.as_str(), "fallback", Some(reason));
    }
    Ok(AgentRanking {
        order: fallback,
        fell_back: true,
    })
}

/// One id per line; list markers (`1.`, `2)`, `-`, `*`) and backticks are
/// ignored. Every listed id must be known and listed once.
pub fn parse_ranking(reply: &str, known_in_order: &[String]) -> Result<Vec<String>, String> {
    let known: HashSet<&str> = known_in_order.iter().map(String::as_str).collect();
    let mut order: Vec<String> = Vec::new();
    for line in reply.lines() {
        let mut item = line.trim();
        item = item.trim_start_matches(['-', '*']).trim_start();
        let digits = item.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && item[digits..].starts_with(['.', ')']) {
            item = item[digits + 1..].trim_start();
        }
        let item = item.trim_matches('`').trim();
        if item.is_empty() {
            continue;
        }
        if !known.contains(item) {
            return Err(format!("unknown trace id `{item}`"));
        }
        if order.iter().any(|o| o == item) {
            return Err(format!("trace id `{item}` listed twice"));
        }
        order.push(item.to_string());
    }
    if order.is_empty() {
        return Err("reply lists no trace ids".into());
    }
    for id in known_in_order {
        if !order.contains(id) {
            order.push(id.clone());
        }
    }
    Ok(order)
}
