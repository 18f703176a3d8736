//! Metric tables over episode results.
//!
//! The unit being counted is an instance under one configuration: the pair
//! `(config_label, instance_id)`. An instance is triggered when any of its
//! episodes succeeded, and post-hoc valid when a successful episode also
//! passed ground-truth validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::validation::EpisodeResult;

/// Column order of the delimited output. Fixed.
pub const REPORT_HEADER: [&str; 5] = ["group_key", "triggered", "posthoc_valid", "avg_coverage_pct", "totals"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Cve,
    Cwe,
    Config,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cve" => Ok(GroupBy::Cve),
            "cwe" => Ok(GroupBy::Cwe),
            "config" => Ok(GroupBy::Config),
            other => Err(format!("unknown grouping `{other}` (expected cve, cwe or config)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group_key: String,
    pub triggered: usize,
    pub posthoc_valid: usize,
    /// Mean final-attempt coverage of successful episodes, in percent.
    /// Absent when no successful episode carries coverage (no-trace runs).
    pub avg_coverage_pct: Option<f64>,
    pub totals: usize,
}

#[derive(Default)]
struct Tally {
    units: BTreeSet<(String, String)>,
    triggered: BTreeSet<(String, String)>,
    posthoc_valid: BTreeSet<(String, String)>,
    coverages: Vec<f64>,
}

pub fn aggregate_report(episodes: &[EpisodeResult], group_by: GroupBy) -> Vec<ReportRow> {
    let mut groups: BTreeMap<String, Tally> = BTreeMap::new();
    for ep in episodes {
        let key = match group_by {
            GroupBy::Cve => ep.instance_id.clone(),
            GroupBy::Cwe => ep.cwe_id.clone(),
            GroupBy::Config => ep.config_label.clone(),
        };
        let unit = (ep.config_label.clone(), ep.instance_id.clone());
        let t = groups.entry(key).or_default();
        t.units.insert(unit.clone());
        if ep.succeeded {
            t.triggered.insert(unit.clone());
            if ep.posthoc.as_ref().is_some_and(|p| p.ground_truth_hit) {
                t.posthoc_valid.insert(unit);
            }
            if let Some(c) = ep.final_coverage() {
                t.coverages.push(c);
            }
        }
    }
    groups
        .into_iter()
        .map(|(group_key, mut t)| {
            // summing in sorted order keeps the mean independent of input order
            t.coverages.sort_by(f64::total_cmp);
            let avg = (!t.coverages.is_empty())
                .then(|| 100.0 * t.coverages.iter().sum::<f64>() / t.coverages.len() as f64);
            ReportRow {
                group_key,
                triggered: t.triggered.len(),
                posthoc_valid: t.posthoc_valid.len(),
                avg_coverage_pct: avg,
                totals: t.units.len(),
            }
        })
        .collect()
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map(|v| format!("{v:.1}")).unwrap_or_default()
}

/// Delimiter-separated table with [`REPORT_HEADER`]. Absent coverage is an
/// empty field; coverage has one decimal place.
pub fn format_delimited(rows: &[ReportRow], delimiter: u8) -> String {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.group_key.clone(),
            r.triggered.to_string(),
            r.posthoc_valid.to_string(),
            fmt_pct(r.avg_coverage_pct),
            r.totals.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Aligned plain-text table with a totals line.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut cells: Vec<[String; 5]> = vec![[
        "Group".into(),
        "#Triggered".into(),
        "#Post-Hoc Valid".into(),
        "Avg Coverage%".into(),
        "Total".into(),
    ]];
    for r in rows {
        cells.push([
            r.group_key.clone(),
            r.triggered.to_string(),
            r.posthoc_valid.to_string(),
            r.avg_coverage_pct.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
            r.totals.to_string(),
        ]);
    }
    let sum = |f: fn(&ReportRow) -> usize| rows.iter().map(f).sum::<usize>().to_string();
    cells.push([
        "(all)".into(),
        sum(|r| r.triggered),
        sum(|r| r.posthoc_valid),
        String::new(),
        sum(|r| r.totals),
    ]);
    let mut widths = [0usize; 5];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        if i == cells.len() - 1 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "{}", rule.join("  ")).unwrap();
        }
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (c, w) in row.iter().zip(widths).skip(1) {
            write!(line, "  {c:>w$}").unwrap();
        }
        writeln!(out, "{}", line.trim_end()).unwrap();
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "{}", rule.join("  ")).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCostRecord {
    pub episode_ref: String,
    /// Execution time plus agent latency over all attempts.
    pub wall_time_s: f64,
    pub attempt_count: usize,
    /// Sum of backend-reported costs; absent if no attempt reported one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monetary_cost: Option<f64>,
}

/// One record per episode that made at least one attempt.
pub fn cost_records(episodes: &[EpisodeResult]) -> Vec<RunCostRecord> {
    let mut out: Vec<RunCostRecord> = episodes
        .iter()
        .filter(|e| !e.attempts.is_empty())
        .map(|e| {
            let mut ms = 0u64;
            let mut cost: Option<f64> = None;
            for a in &e.attempts {
                ms += a.outcome.wall_time_ms;
                let md = &a.candidate.agent_metadata;
                ms += md.get("latency_ms").and_then(|v| v.as_u64()).unwrap_or(0);
                if let Some(c) = md.get("cost").and_then(|v| v.as_f64()) {
                    *cost.get_or_insert(0.0) += c;
                }
            }
            RunCostRecord {
                episode_ref: e.episode_ref.clone(),
                wall_time_s: ms as f64 / 1000.0,
                attempt_count: e.attempts.len(),
                monetary_cost: cost,
            }
        })
        .collect();
    out.sort_by(|a, b| a.episode_ref.cmp(&b.episode_ref));
    out
}

pub fn format_costs(records: &[RunCostRecord], delimiter: u8) -> String {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["episode_ref", "wall_time_s", "attempt_count", "monetary_cost"])
        .expect("in-memory write");
    for r in records {
        w.write_record([
            r.episode_ref.clone(),
            format!("{:.3}", r.wall_time_s),
            r.attempt_count.to_string(),
            r.monetary_cost.map(|c| format!("{c:.4}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
