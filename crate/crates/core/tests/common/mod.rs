//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use poc_harness::agent::PocCandidate;
use poc_harness::config::RunConfig;
use poc_harness::instance::{ProblemInstance, ProjectMeta};
use poc_harness::location::CodeLocation;
use poc_harness::trace::{parse_static_traces_str, StaticTrace};
use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_poc-harness");

/// Fields that legitimately differ between two replays of the same run.
pub const VOLATILE_KEYS: [&str; 4] = ["wall_time_ms", "latency_ms", "started_at", "finished_at"];

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo")
}

pub fn demo_manifests() -> Vec<PathBuf> {
    ["DEMO-0001", "DEMO-0002", "DEMO-0003"]
        .iter()
        .map(|id| demo_dir().join("instances").join(id).join("manifest.toml"))
        .collect()
}

pub fn mask(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, val) in map.iter_mut() {
                if VOLATILE_KEYS.contains(&k.as_str()) {
                    *val = Value::String("<masked>".into());
                } else {
                    mask(val);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(mask),
        _ => {}
    }
}

/// Episode JSON with volatile fields masked, pretty-printed with a newline.
pub fn masked_json(text: &str) -> String {
    let mut v: Value = serde_json::from_str(text).expect("episode JSON");
    mask(&mut v);
    let mut s = serde_json::to_string_pretty(&v).unwrap();
    s.push('\n');
    s
}

/// Runs the binary and returns stdout, failing on a non-zero exit.
pub fn harness(args: &[&str]) -> String {
    let out = std::process::Command::new(BIN).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs the demo through the CLI and returns the run directory.
pub fn demo_run(root: &Path, config: &str) -> std::path::PathBuf {
    let run_dir = root.join(config);
    let mut args: Vec<String> = vec!["run".into()];
    args.extend(demo_manifests().iter().map(|p| p.display().to_string()));
    args.push("--config".into());
    args.push(demo_dir().join("config").join(format!("{config}.toml")).display().to_string());
    args.push("--run-dir".into());
    args.push(run_dir.display().to_string());
    harness(&args.iter().map(String::as_str).collect::<Vec<_>>());
    harness(&["posthoc", run_dir.to_str().unwrap()]);
    run_dir
}

pub const TRACE_TEXT: &str = "\
TRACE t1
STEP source app.Web.handle src/app/Web.java:10
STEP intermediate app.Svc.process src/app/Svc.java:20
STEP sink app.Dao.exec src/app/Dao.java:30
END
";

pub fn fixture_trace() -> StaticTrace {
    parse_static_traces_str(TRACE_TEXT).unwrap().remove(0)
}

pub const SOURCE: &str = "app.Web.handle src/app/Web.java:10";
pub const MIDDLE: &str = "app.Svc.process src/app/Svc.java:20";
pub const SINK: &str = "app.Dao.exec src/app/Dao.java:30";

/// A project directory holding the demo's stub build and run scripts.
pub fn stub_project(root: &Path) -> PathBuf {
    let project = root.join("project");
    std::fs::create_dir_all(&project).unwrap();
    for script in ["build.sh", "run.sh"] {
        std::fs::copy(demo_dir().join("project").join(script), project.join(script)).unwrap();
    }
    project
}

pub fn stub_instance(root: &Path, id: &str) -> ProblemInstance {
    ProblemInstance {
        id: id.into(),
        cwe_id: "CWE-89".into(),
        project_slug: "stub-app".into(),
        vul_ref: "v1".into(),
        fix_ref: "v2".into(),
        cve_description: "SQL injection in the stub app.".into(),
        cwe_description: "SQL injection.".into(),
        cve_guidance: None,
        meta: ProjectMeta {
            commit: "0000000".into(),
            module_path: ".".into(),
            build_script_template: "sh build.sh {POC}".into(),
            run_command_template: "sh run.sh {POC} {LOG}".into(),
            timeout_seconds: 20,
            instrumentation_log: None,
        },
        project_dir: Some(stub_project(root)),
        ground_truth: vec![CodeLocation::new("src/app/Dao.java", "app.Dao", "exec", Some(30))],
        hints: Vec::new(),
        posthoc_enabled: true,
        traces: vec![fixture_trace()],
    }
}

/// PoC source whose stub run performs the given directives.
pub fn poc_source(directives: &[String]) -> String {
    let mut s = String::from("public class Poc {\n    public static void main(String[] args) {\n");
    for d in directives {
        s.push_str(&format!("        // {d}\n"));
    }
    s.push_str("    }\n}\n");
    s
}

/// Directives for one combination of the three validity conditions.
pub fn combo(exit_code: i32, marker: bool, sink: bool) -> Vec<String> {
    let mut d = vec![format!("CALL {SOURCE}"), format!("CALL {MIDDLE}")];
    if sink {
        d.push(format!("CALL {SINK}"));
    }
    d.push("PRINT running exploit".into());
    if marker {
        d.push("PRINT [VULN] exploit confirmed".into());
    }
    d.push(format!("EXIT {exit_code}"));
    d
}

pub fn candidate(source: String) -> PocCandidate {
    PocCandidate {
        source_text: source,
        declared_entry: Some("Poc".into()),
        agent_metadata: Default::default(),
    }
}

/// Writes scripted replies `attempt_0.txt`, `attempt_1.txt`, ... for a session.
pub fn script_session(agent_dir: &Path, session: &str, sources: &[String]) {
    let dir = agent_dir.join(session);
    std::fs::create_dir_all(&dir).unwrap();
    for (i, s) in sources.iter().enumerate() {
        std::fs::write(dir.join(format!("attempt_{i}.txt")), format!("```java\n{s}```\n")).unwrap();
    }
}

pub fn test_config(root: &Path, budget: usize) -> RunConfig {
    RunConfig {
        budget,
        workspace_root: Some(root.join("ws")),
        ..RunConfig::default()
    }
}

/// An episode with a single attempt whose verdict and coverage are given
/// directly, for report arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_episode(
    config_label: &str,
    instance_id: &str,
    cwe_id: &str,
    trace_id: &str,
    succeeded: bool,
    posthoc_hit: Option<bool>,
    executed: usize,
    total: usize,
) -> poc_harness::validation::EpisodeResult {
    use poc_harness::config::Mode;
    use poc_harness::exec::RunOutcome;
    use poc_harness::prompt::PromptKind;
    use poc_harness::trace::{CoverageSummary, DynamicTrace};
    use poc_harness::validation::*;

    let coverage = CoverageSummary {
        source_hit: executed > 0,
        sink_hit: succeeded,
        steps_executed: executed,
        steps_total: total,
        coverage: executed as f64 / total as f64,
    };
    let attempt = AttemptRecord {
        attempt_index: 0,
        prompt_kind: PromptKind::PocMain,
        prompt_digest: String::new(),
        prompt_text: String::new(),
        candidate_digest: String::new(),
        candidate: candidate("public class Poc {}\n".into()),
        outcome: RunOutcome {
            exit_code: if succeeded { 0 } else { 1 },
            output: String::new(),
            output_truncated: false,
            dynamic_trace: DynamicTrace::default(),
            wall_time_ms: 1000,
            timed_out: false,
            workspace: None,
        },
        verdict: ValidationVerdict {
            exited_ok: succeeded,
            marker_found: succeeded,
            sink_reached: if succeeded { SinkReach::Hit } else { SinkReach::Missed },
            valid: succeeded,
            coverage: Some(coverage),
        },
        feedback_issued: None,
    };
    let posthoc = posthoc_hit.map(|hit| PostHocVerdict {
        ground_truth_hit: hit,
        matched_locations: if hit {
            vec![CodeLocation::new("X.java", "x.X", "sink", None)]
        } else {
            Vec::new()
        },
        evidence: Vec::new(),
    });
    EpisodeResult {
        schema_version: EPISODE_SCHEMA_VERSION,
        episode_ref: format!("{instance_id}.{trace_id}"),
        instance_id: instance_id.into(),
        cwe_id: cwe_id.into(),
        config_label: config_label.into(),
        mode: Mode::MultiTrace,
        trace_id: Some(trace_id.into()),
        budget: 1,
        attempts: vec![attempt],
        succeeded,
        posthoc,
        started_at: String::new(),
        finished_at: String::new(),
    }
}

/// Episodes from `tests/fixtures/report20.csv`.
pub fn report_fixture() -> Vec<poc_harness::validation::EpisodeResult> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/report20.csv");
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#') && !l.starts_with("config,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let posthoc = match f[5] {
                "hit" => Some(true),
                "miss" => Some(false),
                _ => None,
            };
            synthetic_episode(
                f[0],
                f[1],
                f[2],
                f[3],
                f[4] == "S",
                posthoc,
                f[6].parse().unwrap(),
                f[7].parse().unwrap(),
            )
        })
        .collect()
}

pub mod gen {
    //! Random trace fixtures drawn from small pools so that matches,
    //! near-misses and duplicates all occur often.
    use poc_harness::location::CodeLocation;
    use poc_harness::trace::{DynamicTrace, StaticTrace, StepKind, TraceStep};
    use proptest::prelude::*;

    const CLASSES: [&str; 5] = ["app.Web", "app.Svc", "app.Dao", "lib.Util$Inner", ""];
    const METHODS: [&str; 4] = ["handle", "exec", "process", "run"];
    const FILES: [&str; 6] = [
        "src/app/Web.java",
        "./src/app/Web.java",
        "src\\app\\Svc.java",
        "src/app/Dao.java",
        "lib/Util.java",
        "src//app/Dao.java",
    ];

    pub fn location() -> impl Strategy<Value = CodeLocation> {
        (
            prop::sample::select(&CLASSES[..]),
            prop::sample::select(&METHODS[..]),
            prop::sample::select(&FILES[..]),
            prop::option::of(1u32..60),
        )
            .prop_map(|(c, m, f, l)| CodeLocation::new(f, c, m, l))
    }

    pub fn trace(id: String, max_steps: usize) -> impl Strategy<Value = StaticTrace> {
        prop::collection::vec(location(), 2..=max_steps).prop_map(move |locs| {
            let n = locs.len();
            StaticTrace {
                trace_id: id.clone(),
                steps: locs
                    .into_iter()
                    .enumerate()
                    .map(|(i, location)| TraceStep {
                        location,
                        kind: if i == 0 {
                            StepKind::Source
                        } else if i + 1 == n {
                            StepKind::Sink
                        } else {
                            StepKind::Intermediate
                        },
                        snippet: None,
                    })
                    .collect(),
            }
        })
    }

    pub fn dynamic(max_events: usize) -> impl Strategy<Value = DynamicTrace> {
        prop::collection::vec(location(), 0..=max_events).prop_map(DynamicTrace::from_locations)
    }

    pub fn traces(max_traces: usize, max_steps: usize) -> impl Strategy<Value = Vec<StaticTrace>> {
        (0..=max_traces).prop_flat_map(move |n| {
            (0..n)
                .map(|i| trace(format!("t{i}"), max_steps))
                .collect::<Vec<_>>()
        })
    }
}

pub mod oracle {
    //! Brute-force restatements of the matching, coverage and ranking rules.
    use std::collections::HashSet;

    use poc_harness::location::CodeLocation;
    use poc_harness::trace::{DynamicTrace, StaticTrace};

    fn norm(path: &str) -> String {
        let unified = path.replace('\\', "/");
        let mut parts = Vec::new();
        for p in unified.split('/') {
            if p.is_empty() || p == "." {
                continue;
            }
            parts.push(p);
        }
        parts.join("/")
    }

    pub fn same_method(a: &CodeLocation, b: &CodeLocation) -> bool {
        if a.method != b.method {
            return false;
        }
        if a.class_fqn.is_empty() || b.class_fqn.is_empty() {
            norm(&a.file) == norm(&b.file)
        } else {
            a.class_fqn == b.class_fqn
        }
    }

    /// Double loop over steps and events.
    pub fn steps_executed(trace: &StaticTrace, dyn_trace: &DynamicTrace) -> usize {
        let mut count = 0;
        for step in &trace.steps {
            let mut hit = false;
            for ev in &dyn_trace.events {
                if same_method(&step.location, &ev.location) {
                    hit = true;
                }
            }
            if hit {
                count += 1;
            }
        }
        count
    }

    fn tokens(loc: &CodeLocation) -> HashSet<String> {
        let mut out = HashSet::new();
        let name = loc.file.split(['/', '\\']).next_back().unwrap_or("");
        let stem = match name.rfind('.') {
            Some(0) | None => name,
            Some(i) => &name[..i],
        };
        let mut raw = vec![stem.to_string(), loc.method.clone()];
        raw.extend(loc.class_fqn.split(['.', '$']).map(String::from));
        for t in raw {
            if !t.is_empty() {
                out.insert(t.to_lowercase());
            }
        }
        out
    }

    pub fn score(trace: &StaticTrace, hints: &[CodeLocation]) -> usize {
        let mut best = 0;
        for step in &trace.steps {
            for hint in hints {
                let n = tokens(&step.location).intersection(&tokens(hint)).count();
                best = best.max(n);
            }
        }
        best
    }

    /// Ids of the top `k` traces: highest score first, input order on ties.
    pub fn top_k(traces: &[StaticTrace], hints: &[CodeLocation], k: usize) -> Vec<String> {
        let mut idx: Vec<usize> = (0..traces.len()).collect();
        let scores: Vec<usize> = traces.iter().map(|t| score(t, hints)).collect();
        idx.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| traces[i].trace_id.clone()).collect()
    }
}
