//! The validity predicate, feedback synthesis, the generation loop and
//! post-hoc ground-truth validation.
//!
//! A run is valid when the program exits with code 0, its output contains the
//! success marker, and (when a trace was given) its dynamic trace executes
//! the trace's sink. Passing that check says nothing yet about whether the
//! vulnerable code was exercised; [`posthoc_validate`] compares the dynamic
//! trace against the curated vulnerable locations separately.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::exec::RunOutcome;
use crate::location::CodeLocation;
use crate::trace::{coverage_summary, match_location, CoverageSummary, ExecutionEvent, StaticTrace};

mod episode;

pub use episode::{
    run_episode, run_instance, run_instances, session_id, EpisodeContext, EpisodeFailure, InstanceRun, LoopError,
};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("feedback requested for a valid verdict")]
    CalledOnValidVerdict,
    #[error("episode `{0}` did not succeed")]
    EpisodeNotSuccessful(String),
    #[error("no ground-truth locations for episode `{0}`")]
    NoGroundTruth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkReach {
    Hit,
    Missed,
    /// No trace was given, so the sink condition is dropped.
    NotApplicable,
}

impl SinkReach {
    pub fn satisfied(self) -> bool {
        matches!(self, SinkReach::Hit | SinkReach::NotApplicable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub exited_ok: bool,
    pub marker_found: bool,
    pub sink_reached: SinkReach,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSummary>,
}

/// Evaluates the three conditions independently and conjoins them.
pub fn validate(outcome: &RunOutcome, trace: Option<&StaticTrace>, config: &RunConfig) -> ValidationVerdict {
    let exited_ok = !outcome.timed_out && outcome.exit_code == 0;
    let marker_found = outcome.output.contains(config.marker.as_str());
    let coverage = trace.map(|t| coverage_summary(t, &outcome.dynamic_trace));
    let sink_reached = match &coverage {
        None => SinkReach::NotApplicable,
        Some(c) if c.sink_hit => SinkReach::Hit,
        Some(_) => SinkReach::Missed,
    };
    ValidationVerdict {
        exited_ok,
        marker_found,
        sink_reached,
        valid: exited_ok && marker_found && sink_reached.satisfied(),
        coverage,
    }
}

/// Failure summary appended to the next prompt: each failed condition, the
/// coverage line when a trace is in play, and the head of the run output.
pub fn make_feedback(
    verdict: &ValidationVerdict,
    outcome: &RunOutcome,
    trace: Option<&StaticTrace>,
    config: &RunConfig,
) -> Result<String, ValidationError> {
    if verdict.valid {
        return Err(ValidationError::CalledOnValidVerdict);
    }
    let mut lines = vec!["The previous PoC failed validation:".to_string()];
    if outcome.timed_out {
        lines.push(
            "- The program did not finish within the time limit and was killed. It must terminate on its own and exit with code 0."
                .into(),
        );
    } else if !verdict.exited_ok {
        lines.push(format!(
            "- The program exited with code {}. It must compile and exit with code 0.",
            outcome.exit_code
        ));
    }
    if !verdict.marker_found {
        lines.push(format!(
            "- The output did not contain the success marker {}. Print it only after checking that the exploit worked.",
            config.marker
        ));
    }
    if verdict.sink_reached == SinkReach::Missed {
        if let Some(t) = trace {
            let sink = &t.sink().location;
            lines.push(format!(
                "- The sink {} at {} was not executed. The exploit must drive input through the traced code path into this sink.",
                sink.qualified_method(),
                sink.file_line()
            ));
        }
    }
    if let Some(c) = &verdict.coverage {
        lines.push(format!("Trace coverage: {}", c.describe()));
    }
    let (excerpt, cut) = excerpt(&outcome.output, config.feedback_output_cap_bytes);
    if excerpt.trim().is_empty() {
        lines.push("The program produced no output.".into());
    } else {
        lines.push(format!(
            "Output of the previous run{}:",
            if cut { format!(" (first {} bytes)", excerpt.len()) } else { String::new() }
        ));
        lines.push("<<<".into());
        lines.push(excerpt.trim_end().to_string());
        lines.push(">>>".into());
    }
    Ok(lines.join("\n"))
}

fn excerpt(text: &str, cap: usize) -> (&str, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    (&text[..end], true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHocMatch {
    pub ground_truth: CodeLocation,
    pub event: ExecutionEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHocVerdict {
    pub ground_truth_hit: bool,
    /// Ground-truth locations that were executed, in ground-truth order.
    pub matched_locations: Vec<CodeLocation>,
    /// For each matched location, the first event that matched it.
    pub evidence: Vec<PostHocMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt_index: usize,
    pub prompt_kind: crate::prompt::PromptKind,
    pub prompt_digest: String,
    /// Full prompt sent for this attempt.
    pub prompt_text: String,
    pub candidate_digest: String,
    pub candidate: crate::agent::PocCandidate,
    pub outcome: RunOutcome,
    pub verdict: ValidationVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_issued: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub schema_version: u32,
    /// `<instance_id>.<trace_id>` or `<instance_id>.no_trace`.
    pub episode_ref: String,
    pub instance_id: String,
    pub cwe_id: String,
    pub config_label: String,
    pub mode: crate::config::Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    pub budget: usize,
    pub attempts: Vec<AttemptRecord>,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posthoc: Option<PostHocVerdict>,
    pub started_at: String,
    pub finished_at: String,
}

impl EpisodeResult {
    /// The successful attempt, if any (always the last one).
    pub fn successful_attempt(&self) -> Option<&AttemptRecord> {
        self.attempts.last().filter(|a| a.verdict.valid)
    }

    /// Trace coverage of the final attempt.
    pub fn final_coverage(&self) -> Option<f64> {
        self.attempts
            .last()
            .and_then(|a| a.verdict.coverage.as_ref())
            .map(|c| c.coverage)
    }

    /// Checks the structural invariants of a recorded episode.
    pub fn check(&self) -> Result<(), String> {
        if self.attempts.len() > self.budget {
            return Err(format!("{} attempts exceed budget {}", self.attempts.len(), self.budget));
        }
        for (i, a) in self.attempts.iter().enumerate() {
            if a.attempt_index != i {
                return Err(format!("attempt {i} is recorded as index {}", a.attempt_index));
            }
            let last = i + 1 == self.attempts.len();
            if a.verdict.valid && !last {
                return Err(format!("attempt {i} is valid but is not the last attempt"));
            }
            let expect_feedback = !a.verdict.valid && i + 1 < self.budget;
            if a.feedback_issued.is_some() != expect_feedback {
                return Err(format!("attempt {i} feedback presence is wrong"));
            }
        }
        let last_valid = self.attempts.last().is_some_and(|a| a.verdict.valid);
        if self.succeeded != last_valid {
            return Err("succeeded flag disagrees with the last attempt".into());
        }
        if let Some(p) = &self.posthoc {
            if p.ground_truth_hit == p.matched_locations.is_empty() {
                return Err("post-hoc hit flag disagrees with matched locations".into());
            }
        }
        Ok(())
    }
}

/// Compares the successful attempt's dynamic trace against the curated
/// vulnerable locations. Any one executed location counts as a hit.
pub fn posthoc_validate(
    episode: &EpisodeResult,
    ground_truth: &[CodeLocation],
) -> Result<PostHocVerdict, ValidationError> {
    let attempt = episode
        .successful_attempt()
        .filter(|_| episode.succeeded)
        .ok_or_else(|| ValidationError::EpisodeNotSuccessful(episode.episode_ref.clone()))?;
    if ground_truth.is_empty() {
        return Err(ValidationError::NoGroundTruth(episode.episode_ref.clone()));
    }
    let mut matched_locations = Vec::new();
    let mut evidence = Vec::new();
    for gt in ground_truth {
        if let Some(ev) = attempt
            .outcome
            .dynamic_trace
            .events
            .iter()
            .find(|ev| match_location(gt, &ev.location))
        {
            if !matched_locations.contains(gt) {
                matched_locations.push(gt.clone());
                evidence.push(PostHocMatch {
                    ground_truth: gt.clone(),
                    event: ev.clone(),
                });
            }
        }
    }
    Ok(PostHocVerdict {
        ground_truth_hit: !matched_locations.is_empty(),
        matched_locations,
        evidence,
    })
}
