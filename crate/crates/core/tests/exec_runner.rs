mod common;

use std::time::{Duration, Instant};

use common::*;
use poc_harness::config::{Retention, RunConfig};
use poc_harness::exec::{release_workspace, ExecError, Runner, TIMEOUT_EXIT_CODE, TRUNCATION_MARKER};
use poc_harness::instance::ProblemInstance;

fn shell_instance(root: &std::path::Path, run: &str) -> ProblemInstance {
    let mut inst = stub_instance(root, "EXEC-1");
    inst.meta.build_script_template = String::new();
    inst.meta.run_command_template = run.into();
    inst
}

#[test]
fn events_come_from_log_file() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = stub_instance(tmp.path(), "EXEC-1");
    let config = test_config(tmp.path(), 1);
    let runner = Runner::from_config(&config).unwrap();
    let out = runner
        .run_candidate(&inst, &candidate(poc_source(&combo(0, true, true))), &config)
        .unwrap();
    assert_eq!(out.exit_code, 0);
    assert!(!out.timed_out);
    assert_eq!(out.dynamic_trace.len(), 3);
    assert_eq!(out.dynamic_trace.events[2].location.qualified_method(), "app.Dao.exec");
    assert_eq!(out.output, "compiled Poc.java\nrunning exploit\n[VULN] exploit confirmed\n");
}

#[test]
fn events_fall_back_to_output() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = shell_instance(
        tmp.path(),
        "cat {POC} > /dev/null; echo 'EVT app.Dao.exec src/app/Dao.java:30'; echo '  not an event'",
    );
    let config = test_config(tmp.path(), 1);
    let out = Runner::from_config(&config)
        .unwrap()
        .run_candidate(&inst, &candidate("public class Poc {}\n".into()), &config)
        .unwrap();
    assert_eq!(out.dynamic_trace.len(), 1);
}

#[test]
fn build_failure_skips_run() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = stub_instance(tmp.path(), "EXEC-1");
    let config = test_config(tmp.path(), 1);
    let mut d = combo(0, true, true);
    d.push("COMPILE_ERROR ';' expected".into());
    let out = Runner::from_config(&config)
        .unwrap()
        .run_candidate(&inst, &candidate(poc_source(&d)), &config)
        .unwrap();
    assert_eq!(out.exit_code, 1);
    assert!(out.output.contains("Poc.java: error: ';' expected"));
    assert!(!out.output.contains("[VULN]"));
    assert!(out.dynamic_trace.is_empty());
}

#[test]
fn timeout_kills_the_whole_group() {
    let tmp = tempfile::tempdir().unwrap();
    // the background sleeper holds the output pipe open; it must die too
    let inst = shell_instance(tmp.path(), "cat {POC} >/dev/null; sleep 30 & echo started; sleep 30");
    let config = RunConfig {
        timeout_seconds: Some(1),
        ..test_config(tmp.path(), 1)
    };
    let started = Instant::now();
    let out = Runner::from_config(&config)
        .unwrap()
        .run_candidate(&inst, &candidate("public class Poc {}\n".into()), &config)
        .unwrap();
    assert!(started.elapsed() < Duration::from_secs(10));
    assert!(out.timed_out);
    assert_eq!(out.exit_code, TIMEOUT_EXIT_CODE);
    assert!(out.output.contains("started"));
}

#[test]
fn output_is_capped_but_events_survive() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = shell_instance(
        tmp.path(),
        "cat {POC} >/dev/null; i=0; while [ $i -lt 200 ]; do echo 'xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx'; i=$((i+1)); done; echo 'EVT app.Dao.exec src/app/Dao.java:30'",
    );
    let config = RunConfig {
        output_cap_bytes: 100,
        ..test_config(tmp.path(), 1)
    };
    let out = Runner::from_config(&config)
        .unwrap()
        .run_candidate(&inst, &candidate("public class Poc {}\n".into()), &config)
        .unwrap();
    assert!(out.output_truncated);
    assert!(out.output.ends_with(TRUNCATION_MARKER));
    assert_eq!(out.output.len(), 100 + TRUNCATION_MARKER.len());
    assert_eq!(out.dynamic_trace.len(), 1);
}

#[test]
fn signal_death_is_not_success() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = shell_instance(tmp.path(), "cat {POC} >/dev/null; kill -9 $$");
    let config = test_config(tmp.path(), 1);
    let out = Runner::from_config(&config)
        .unwrap()
        .run_candidate(&inst, &candidate("public class Poc {}\n".into()), &config)
        .unwrap();
    assert_eq!(out.exit_code, 128 + 9);
    assert!(!out.timed_out);
}

#[test]
fn placeholders_and_empty_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let config = test_config(tmp.path(), 1);
    let runner = Runner::from_config(&config).unwrap();
    let inst = shell_instance(tmp.path(), "echo no placeholder");
    assert!(matches!(
        runner.run_candidate(&inst, &candidate("class A {}".into()), &config),
        Err(ExecError::MissingPlaceholder(_))
    ));
    let inst = shell_instance(tmp.path(), "cat {POC}");
    assert!(matches!(
        runner.run_candidate(&inst, &candidate("  \n".into()), &config),
        Err(ExecError::EmptyCandidate)
    ));
}

#[test]
fn workspace_is_content_addressed_and_released() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = shell_instance(tmp.path(), "cat {POC}");
    let config = RunConfig {
        keep_workspaces: Retention::OnFailure,
        ..test_config(tmp.path(), 1)
    };
    let runner = Runner::from_config(&config).unwrap();
    let c = candidate("public class Poc {}\n".into());
    let mut a = runner.run_candidate(&inst, &c, &config).unwrap();
    let ws = a.workspace.clone().unwrap();
    assert!(ws.join("Poc.java").is_file());
    assert!(ws.starts_with(tmp.path().join("ws").join("EXEC-1")));
    let b = runner.run_candidate(&inst, &c, &config).unwrap();
    assert_eq!(b.workspace.as_ref(), Some(&ws));

    release_workspace(&mut a, false, Retention::OnFailure);
    assert!(ws.exists());
    release_workspace(&mut a, true, Retention::OnFailure);
    assert!(!ws.exists());
    assert!(a.workspace.is_none());

    let never = RunConfig {
        keep_workspaces: Retention::Never,
        ..config.clone()
    };
    let c = runner.run_candidate(&inst, &c, &never).unwrap();
    assert!(c.workspace.is_none());
}

#[test]
fn concurrent_runs_respect_the_process_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = shell_instance(tmp.path(), "cat {POC} >/dev/null; sleep 0.3");
    let config = RunConfig {
        max_processes: 1,
        ..test_config(tmp.path(), 1)
    };
    let runner = Runner::from_config(&config).unwrap();
    let started = Instant::now();
    std::thread::scope(|s| {
        for i in 0..3 {
            let (runner, inst, config) = (&runner, &inst, &config);
            s.spawn(move || {
                runner
                    .run_candidate(inst, &candidate(format!("public class Poc{i} {{}}\n")), config)
                    .unwrap()
            });
        }
    });
    assert!(started.elapsed() >= Duration::from_millis(850));
}
