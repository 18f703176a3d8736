mod common;

use std::sync::Mutex;

use common::*;
use poc_harness::agent::ScriptedAgent;
use poc_harness::config::{Mode, Ranking, RunConfig};
use poc_harness::exec::Runner;
use poc_harness::instance::ProblemInstance;
use poc_harness::prompt::{PromptBuilder, PromptKind};
use poc_harness::trace::{parse_static_traces_str, StaticTrace};
use poc_harness::validation::{
    posthoc_validate, run_instance, run_instances, EpisodeContext, LoopError, SinkReach, ValidationError,
};

fn traces(n: usize) -> Vec<StaticTrace> {
    (0..n)
        .map(|i| parse_static_traces_str(&TRACE_TEXT.replace("TRACE t1", &format!("TRACE t{i}"))).unwrap().remove(0))
        .collect()
}

fn ok() -> String {
    poc_source(&combo(0, true, true))
}

fn bad() -> String {
    poc_source(&combo(1, false, false))
}

struct Bench {
    _tmp: tempfile::TempDir,
    agent_dir: std::path::PathBuf,
    instance: ProblemInstance,
    config: RunConfig,
}

impl Bench {
    fn new(n_traces: usize, budget: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let mut instance = stub_instance(tmp.path(), "X-1");
        instance.traces = traces(n_traces);
        let agent_dir = tmp.path().join("agent");
        std::fs::create_dir_all(&agent_dir).unwrap();
        let config = test_config(tmp.path(), budget);
        Self {
            _tmp: tmp,
            agent_dir,
            instance,
            config,
        }
    }

    fn script(&self, session: &str, sources: &[String]) {
        script_session(&self.agent_dir, session, sources);
    }

    fn run(&self) -> poc_harness::validation::InstanceRun {
        let agent = ScriptedAgent::new(&self.agent_dir).unwrap();
        let runner = Runner::from_config(&self.config).unwrap();
        let builder = PromptBuilder::default();
        run_instance(
            EpisodeContext {
                agent: &agent,
                runner: &runner,
                builder: &builder,
                config: &self.config,
            },
            &self.instance,
        )
    }
}

#[test]
fn one_episode_per_selected_trace() {
    let b = Bench::new(5, 1);
    for i in 0..5 {
        b.script(&format!("X-1.t{i}"), &[bad()]);
    }
    let run = b.run();
    assert_eq!(run.episodes.len(), 5);
    assert_eq!(run.selected_traces, ["t0", "t1", "t2", "t3", "t4"]);
    assert!(!run.succeeded());

    let mut b = Bench::new(2, 1);
    b.config.top_k = 5;
    b.script("X-1.t0", &[bad()]);
    b.script("X-1.t1", &[bad()]);
    assert_eq!(b.run().episodes.len(), 2);
}

#[test]
fn any_success_marks_the_instance() {
    let mut b = Bench::new(3, 1);
    b.script("X-1.t0", &[bad()]);
    b.script("X-1.t1", &[ok()]);
    b.script("X-1.t2", &[bad()]);
    let run = b.run();
    assert_eq!(run.episodes.len(), 3);
    assert!(run.succeeded());
    assert_eq!(
        run.episodes.iter().map(|e| e.succeeded).collect::<Vec<_>>(),
        [false, true, false]
    );

    b.config.stop_early = true;
    let run = b.run();
    assert_eq!(run.episodes.len(), 2);
    assert!(run.succeeded());
}

#[test]
fn feedback_threads_into_the_next_prompt() {
    let b = Bench::new(1, 3);
    b.script("X-1.t0", &[bad(), ok(), ok()]);
    let run = b.run();
    let ep = &run.episodes[0];
    assert!(ep.succeeded);
    assert_eq!(ep.attempts.len(), 2);
    let fb = ep.attempts[0].feedback_issued.as_deref().unwrap();
    assert!(fb.contains("exited with code 1"), "{fb}");
    assert_eq!(ep.attempts[0].prompt_kind, PromptKind::PocMain);
    assert_eq!(ep.attempts[1].prompt_kind, PromptKind::PocRetry);
    assert!(ep.attempts[1].prompt_text.contains(fb));
    assert!(ep.attempts[1].feedback_issued.is_none());
    ep.check().unwrap();
}

#[test]
fn no_trace_mode_ignores_traces() {
    let mut b = Bench::new(3, 2);
    b.config.mode = Mode::NoTrace;
    // no sink call at all; marker and exit code decide
    b.script("X-1.no_trace", &[poc_source(&combo(0, true, false))]);
    let run = b.run();
    assert_eq!(run.episodes.len(), 1);
    let ep = &run.episodes[0];
    assert_eq!(ep.episode_ref, "X-1.no_trace");
    assert_eq!(ep.trace_id, None);
    assert!(ep.succeeded);
    assert_eq!(ep.attempts[0].verdict.sink_reached, SinkReach::NotApplicable);
    assert!(ep.attempts[0].verdict.coverage.is_none());
    assert!(run.selected_traces.is_empty());
}

#[test]
fn multi_trace_without_traces_is_an_error() {
    let b = Bench::new(0, 1);
    let run = b.run();
    assert!(run.episodes.is_empty());
    assert!(matches!(run.errors[0].1, LoopError::NoTraces(_)));
}

#[test]
fn a_missing_fixture_fails_only_its_episode() {
    let b = Bench::new(2, 2);
    b.script("X-1.t1", &[ok()]);
    let run = b.run();
    assert_eq!(run.episodes.len(), 1);
    assert_eq!(run.episodes[0].episode_ref, "X-1.t1");
    assert_eq!(run.errors.len(), 1);
    assert_eq!(run.errors[0].0.episode_ref, "X-1.t0");
    assert!(matches!(run.errors[0].1, LoopError::Agent(_)));
}

#[test]
fn agent_ranking_and_fallback() {
    let mut b = Bench::new(3, 1);
    b.config.ranking = Ranking::Agent;
    b.config.top_k = 2;
    for i in 0..3 {
        b.script(&format!("X-1.t{i}"), &[bad()]);
    }
    std::fs::create_dir_all(b.agent_dir.join("X-1")).unwrap();
    std::fs::write(b.agent_dir.join("X-1/ranking.txt"), "1. t2\n2. t0\n3. t1\n").unwrap();
    let run = b.run();
    assert_eq!(run.selected_traces, ["t2", "t0"]);
    assert!(!run.ranking_fell_back);

    std::fs::write(b.agent_dir.join("X-1/ranking.txt"), "t9\n").unwrap();
    let run = b.run();
    assert_eq!(run.selected_traces, ["t0", "t1"]);
    assert!(run.ranking_fell_back);
}

#[test]
fn parallel_runs_keep_input_order() {
    let tmp = tempfile::tempdir().unwrap();
    let agent_dir = tmp.path().join("agent");
    let mut instances = Vec::new();
    for i in 0..6 {
        let id = format!("P-{i}");
        let mut inst = stub_instance(tmp.path(), &id);
        inst.traces = traces(1);
        let src = if i % 2 == 0 { ok() } else { bad() };
        script_session(&agent_dir, &format!("{id}.t0"), &[src]);
        instances.push(inst);
    }
    let config = RunConfig {
        parallel: 3,
        ..test_config(tmp.path(), 1)
    };
    let agent = ScriptedAgent::new(&agent_dir).unwrap();
    let runner = Runner::from_config(&config).unwrap();
    let builder = PromptBuilder::default();
    let seen = Mutex::new(Vec::new());
    let runs = run_instances(
        EpisodeContext {
            agent: &agent,
            runner: &runner,
            builder: &builder,
            config: &config,
        },
        &instances,
        &|r| seen.lock().unwrap().push(r.instance_id.clone()),
    );
    let ids: Vec<&str> = runs.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, ["P-0", "P-1", "P-2", "P-3", "P-4", "P-5"]);
    assert_eq!(runs.iter().map(|r| r.succeeded()).collect::<Vec<_>>(), [true, false, true, false, true, false]);
    assert_eq!(seen.into_inner().unwrap().len(), 6);
}

#[test]
fn posthoc_preconditions() {
    let b = Bench::new(1, 1);
    b.script("X-1.t0", &[bad()]);
    let failed = b.run().episodes.remove(0);
    assert!(matches!(
        posthoc_validate(&failed, &b.instance.ground_truth),
        Err(ValidationError::EpisodeNotSuccessful(_))
    ));

    let b = Bench::new(1, 1);
    b.script("X-1.t0", &[ok()]);
    let ep = b.run().episodes.remove(0);
    assert!(matches!(posthoc_validate(&ep, &[]), Err(ValidationError::NoGroundTruth(_))));
    let v = posthoc_validate(&ep, &b.instance.ground_truth).unwrap();
    assert!(v.ground_truth_hit);
    assert_eq!(v.evidence.len(), 1);
    assert_eq!(v.evidence[0].event.location.method, "exec");
}
