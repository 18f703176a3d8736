use serde::{Deserialize, Serialize};

use super::{DynamicTrace, StaticTrace};
use crate::location::{normalize_path, CodeLocation};

/// Method-granularity location match. Lines are ignored. Classes are compared
/// when both sides know theirs; otherwise the normalized file paths decide.
pub fn match_location(step_loc: &CodeLocation, event_loc: &CodeLocation) -> bool {
    if step_loc.method != event_loc.method {
        return false;
    }
    if !step_loc.class_fqn.is_empty() && !event_loc.class_fqn.is_empty() {
        step_loc.class_fqn == event_loc.class_fqn
    } else {
        normalize_path(&step_loc.file) == normalize_path(&event_loc.file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub source_hit: bool,
    pub sink_hit: bool,
    pub steps_executed: usize,
    pub steps_total: usize,
    pub coverage: f64,
}

impl CoverageSummary {
    pub fn percent(&self) -> f64 {
        self.coverage * 100.0
    }

    /// One-line human summary used in feedback and logs.
    pub fn describe(&self) -> String {
        format!(
            "source hit: {}, sink hit: {}, trace steps executed: {}/{} ({:.1}%)",
            yes_no(self.source_hit),
            yes_no(self.sink_hit),
            self.steps_executed,
            self.steps_total,
            self.percent()
        )
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Per-step hit flags, in trace order.
pub fn executed_steps(trace: &StaticTrace, dyn_trace: &DynamicTrace) -> Vec<bool> {
    trace
        .steps
        .iter()
        .map(|step| {
            dyn_trace
                .events
                .iter()
                .any(|ev| match_location(&step.location, &ev.location))
        })
        .collect()
}

pub fn coverage_summary(trace: &StaticTrace, dyn_trace: &DynamicTrace) -> CoverageSummary {
    let hits = executed_steps(trace, dyn_trace);
    let steps_total = hits.len();
    let steps_executed = hits.iter().filter(|h| **h).count();
    CoverageSummary {
        source_hit: hits.first().copied().unwrap_or(false),
        sink_hit: hits.last().copied().unwrap_or(false),
        steps_executed,
        steps_total,
        coverage: if steps_total == 0 {
            0.0
        } else {
            steps_executed as f64 / steps_total as f64
        },
    }
}

/// Whether the dynamic trace executed the trace's sink method.
pub fn sink_hit(trace: &StaticTrace, dyn_trace: &DynamicTrace) -> bool {
    coverage_summary(trace, dyn_trace).sink_hit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_static_traces_str, DynamicTrace};

    fn loc(class: &str, method: &str, file: &str, line: Option<u32>) -> CodeLocation {
        CodeLocation::new(file, class, method, line)
    }

    #[test]
    fn matching_rules() {
        let a = loc("a.Dao", "query", "src/Dao.java", Some(10));
        assert!(match_location(&a, &a));
        assert!(match_location(&a, &loc("a.Dao", "query", "src/Dao.java", Some(99))));
        assert!(!match_location(&a, &loc("b.Dao", "query", "src/Dao.java", Some(10))));
        assert!(!match_location(&a, &loc("a.Dao", "update", "src/Dao.java", Some(10))));
        // class unknown on one side: fall back to file paths
        assert!(match_location(&loc("", "query", "./src/Dao.java", None), &a));
        assert!(!match_location(&loc("", "query", "src/Other.java", None), &a));
    }

    fn four_step() -> StaticTrace {
        parse_static_traces_str(
            "TRACE t\nSTEP source w.Web.list W.java:1\nSTEP intermediate s.Svc.find S.java:2\n\
             STEP intermediate d.Dao.build D.java:3\nSTEP sink d.Dao.query D.java:4\nEND\n",
        )
        .unwrap()
        .remove(0)
    }

    #[test]
    fn source_and_sink_only() {
        let t = four_step();
        let d = DynamicTrace::from_locations([
            loc("w.Web", "list", "W.java", Some(1)),
            loc("x.Unrelated", "noop", "X.java", Some(5)),
            loc("d.Dao", "query", "D.java", Some(4)),
        ]);
        let c = coverage_summary(&t, &d);
        assert_eq!(c.steps_executed, 2);
        assert_eq!(c.coverage, 0.5);
        assert!(c.source_hit && c.sink_hit);
    }

    #[test]
    fn empty_dynamic_trace() {
        let c = coverage_summary(&four_step(), &DynamicTrace::default());
        assert_eq!(c.coverage, 0.0);
        assert!(!c.sink_hit && !c.source_hit);
        assert_eq!(c.steps_total, 4);
    }

    #[test]
    fn sink_hit_cases() {
        let t = four_step();
        let sink = DynamicTrace::from_locations([loc("d.Dao", "query", "D.java", Some(40))]);
        let mid = DynamicTrace::from_locations([
            loc("s.Svc", "find", "S.java", Some(2)),
            loc("d.Dao", "build", "D.java", Some(3)),
        ]);
        assert!(sink_hit(&t, &sink));
        assert!(!sink_hit(&t, &mid));
        assert!(!sink_hit(&t, &DynamicTrace::default()));
    }

    #[test]
    fn describe_is_stable() {
        let t = four_step();
        let d = DynamicTrace::from_locations([loc("d.Dao", "query", "D.java", None)]);
        assert_eq!(
            coverage_summary(&t, &d).describe(),
            "source hit: no, sink hit: yes, trace steps executed: 1/4 (25.0%)"
        );
    }
}
