//! The bounded generate, run, validate, feedback loop.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{make_feedback, validate, AttemptRecord, EpisodeResult, EPISODE_SCHEMA_VERSION};
use crate::agent::{self, rank_traces_via_agent, Agent, AgentError, AgentRequest};
use crate::config::{Mode, Ranking, RunConfig};
use crate::exec::{release_workspace, ExecError, Runner};
use crate::instance::ProblemInstance;
use crate::prompt::{PromptBuilder, PromptError};
use crate::trace::{rank_traces, StaticTrace};

const NO_TRACE: &str = "no_trace";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("instance `{0}` has no static traces to run in multi-trace mode")]
    NoTraces(String),
}

/// Everything an episode needs besides the instance and trace.
#[derive(Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub agent: &'a dyn Agent,
    pub runner: &'a Runner,
    pub builder: &'a PromptBuilder,
    pub config: &'a RunConfig,
}

/// Identifier shared by an episode's record and its agent calls.
pub fn session_id(instance_id: &str, trace: Option<&StaticTrace>) -> String {
    format!("{instance_id}.{}", trace.map_or(NO_TRACE, |t| t.trace_id.as_str()))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs up to `config.budget` attempts for one instance and at most one
/// trace. Feedback from a failed attempt is appended to the next prompt;
/// the episode stops at the first valid attempt.
pub fn run_episode(
    ctx: EpisodeContext<'_>,
    instance: &ProblemInstance,
    trace: Option<&StaticTrace>,
) -> Result<EpisodeResult, LoopError> {
    let config = ctx.config;
    let episode_ref = session_id(&instance.id, trace);
    let criteria = ctx.builder.criteria_for(&instance.cwe_id);
    let started_at = now();
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut feedback: Option<String> = None;

    for attempt_index in 0..config.budget {
        let prompt = ctx
            .builder
            .build_main_prompt(instance, trace, &criteria, feedback.as_deref())?;
        let req = AgentRequest {
            prompt,
            attempt_index,
            session_id: episode_ref.clone(),
        };
        let candidate = agent::generate_candidate(ctx.agent, &req)?;
        let mut outcome = ctx.runner.run_candidate(instance, &candidate, config)?;
        let verdict = validate(&outcome, trace, config);
        release_workspace(&mut outcome, verdict.valid, config.keep_workspaces);

        let last = attempt_index + 1 == config.budget;
        feedback = if verdict.valid || last {
            None
        } else {
            Some(make_feedback(&verdict, &outcome, trace, config).expect("verdict is invalid"))
        };
        log::info!(
            "{episode_ref} attempt {attempt_index}: exit={} marker={} sink={:?} valid={}",
            outcome.exit_code,
            verdict.marker_found,
            verdict.sink_reached,
            verdict.valid
        );
        let valid = verdict.valid;
        attempts.push(AttemptRecord {
            attempt_index,
            prompt_kind: req.prompt.kind,
            prompt_digest: req.prompt.inputs_digest,
            prompt_text: req.prompt.text,
            candidate_digest: hex::encode(Sha256::digest(candidate.source_text.as_bytes())),
            candidate,
            outcome,
            verdict,
            feedback_issued: feedback.clone(),
        });
        if valid {
            break;
        }
    }

    let succeeded = attempts.last().is_some_and(|a| a.verdict.valid);
    Ok(EpisodeResult {
        schema_version: EPISODE_SCHEMA_VERSION,
        episode_ref,
        instance_id: instance.id.clone(),
        cwe_id: instance.cwe_id.clone(),
        config_label: config.display_label(),
        mode: config.mode,
        trace_id: trace.map(|t| t.trace_id.clone()),
        budget: config.budget,
        attempts,
        succeeded,
        posthoc: None,
        started_at,
        finished_at: now(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub episode_ref: String,
    pub error: String,
}

/// Every episode attempted for one instance.
#[derive(Debug)]
pub struct InstanceRun {
    pub instance_id: String,
    /// Trace ids in the order they were tried. Empty in no-trace mode.
    pub selected_traces: Vec<String>,
    pub ranking_fell_back: bool,
    pub episodes: Vec<EpisodeResult>,
    pub errors: Vec<(EpisodeFailure, LoopError)>,
}

impl InstanceRun {
    pub fn succeeded(&self) -> bool {
        self.episodes.iter().any(|e| e.succeeded)
    }
}

/// The top-k traces for a multi-trace run, best first.
fn select_traces(
    ctx: EpisodeContext<'_>,
    instance: &ProblemInstance,
) -> Result<(Vec<StaticTrace>, bool), LoopError> {
    let k = ctx.config.top_k;
    match ctx.config.ranking {
        Ranking::Similarity => Ok((rank_traces(&instance.traces, &instance.hints, k), false)),
        Ranking::Agent => {
            let ranking = rank_traces_via_agent(ctx.agent, ctx.builder, instance, &instance.traces)?;
            let traces = ranking
                .order
                .iter()
                .take(k)
                .filter_map(|id| instance.trace(id).cloned())
                .collect();
            Ok((traces, ranking.fell_back))
        }
    }
}

/// Runs one instance in the configured mode. Multi-trace mode runs one
/// episode per selected trace, stopping after the first success when
/// `stop_early` is set. Episode errors are collected, not raised.
pub fn run_instance(ctx: EpisodeContext<'_>, instance: &ProblemInstance) -> InstanceRun {
    let mut run = InstanceRun {
        instance_id: instance.id.clone(),
        selected_traces: Vec::new(),
        ranking_fell_back: false,
        episodes: Vec::new(),
        errors: Vec::new(),
    };
    let fail = |run: &mut InstanceRun, episode_ref: String, e: LoopError| {
        log::error!("{episode_ref}: {e}");
        run.errors.push((
            EpisodeFailure {
                episode_ref,
                error: e.to_string(),
            },
            e,
        ));
    };

    match ctx.config.mode {
        Mode::NoTrace => match run_episode(ctx, instance, None) {
            Ok(ep) => run.episodes.push(ep),
            Err(e) => fail(&mut run, session_id(&instance.id, None), e),
        },
        Mode::MultiTrace => {
            if instance.traces.is_empty() {
                let e = LoopError::NoTraces(instance.id.clone());
                fail(&mut run, instance.id.clone(), e);
                return run;
            }
            let traces = match select_traces(ctx, instance) {
                Ok((traces, fell_back)) => {
                    run.ranking_fell_back = fell_back;
                    traces
                }
                Err(e) => {
                    fail(&mut run, instance.id.clone(), e);
                    return run;
                }
            };
            run.selected_traces = traces.iter().map(|t| t.trace_id.clone()).collect();
            for trace in &traces {
                match run_episode(ctx, instance, Some(trace)) {
                    Ok(ep) => {
                        let done = ep.succeeded && ctx.config.stop_early;
                        run.episodes.push(ep);
                        if done {
                            break;
                        }
                    }
                    Err(e) => fail(&mut run, session_id(&instance.id, Some(trace)), e),
                }
            }
        }
    }
    run
}

/// Runs many instances on up to `config.parallel` threads. `on_done` sees
/// each instance as soon as it finishes; results come back in input order.
pub fn run_instances(
    ctx: EpisodeContext<'_>,
    instances: &[ProblemInstance],
    on_done: &(dyn Fn(&InstanceRun) + Sync),
) -> Vec<InstanceRun> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<InstanceRun>>> =
        Mutex::new(instances.iter().map(|_| None).collect());
    let workers = ctx.config.parallel.clamp(1, instances.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(instance) = instances.get(i) else {
                    break;
                };
                let run = run_instance(ctx, instance);
                on_done(&run);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(run);
            });
        }
    });
    results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every instance ran"))
        .collect()
}
