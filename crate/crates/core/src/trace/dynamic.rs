//! Dynamic execution traces recovered from instrumentation logs.
//!
//! An event line is exactly
//!
//! ```text
//! EVT <class_fqn>.<method> <file>:<line>
//! ```
//!
//! with single spaces, a non-empty class and method, and a decimal line
//! (`0` means unknown). Surrounding whitespace and a trailing `\r` are
//! tolerated. Every other line is program output and is skipped.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::location::{split_file_line, split_qualified, CodeLocation};

pub const EVENT_PREFIX: &str = "EVT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub location: CodeLocation,
    pub sequence: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicTrace {
    pub events: Vec<ExecutionEvent>,
}

impl DynamicTrace {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn from_locations(locations: impl IntoIterator<Item = CodeLocation>) -> Self {
        Self {
            events: locations
                .into_iter()
                .enumerate()
                .map(|(i, location)| ExecutionEvent {
                    location,
                    sequence: i as u64,
                })
                .collect(),
        }
    }

    /// Renders the trace as event lines, one per event.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            let loc = &event.location;
            let _ = writeln!(
                out,
                "{EVENT_PREFIX} {}.{} {}:{}",
                loc.class_fqn,
                loc.method,
                loc.file,
                loc.line.unwrap_or(0)
            );
        }
        out
    }
}

/// Lenient parse: malformed event lines are skipped like any other noise.
pub fn parse_dynamic_log(log_text: &str) -> DynamicTrace {
    let locations = log_text.lines().filter_map(|line| match parse_event_line(line) {
        Some(Ok(loc)) => Some(loc),
        _ => None,
    });
    DynamicTrace::from_locations(locations)
}

/// Strict parse: a line that starts with the event keyword but does not
/// match the grammar is an error. Other lines are still skipped.
pub fn parse_dynamic_log_strict(log_text: &str) -> Result<DynamicTrace, TraceError> {
    let mut locations = Vec::new();
    for (idx, line) in log_text.lines().enumerate() {
        match parse_event_line(line) {
            Some(Ok(loc)) => locations.push(loc),
            Some(Err(message)) => {
                return Err(TraceError::MalformedEvent {
                    line: idx + 1,
                    message,
                })
            }
            None => {}
        }
    }
    Ok(DynamicTrace::from_locations(locations))
}

/// `None` for lines that are not event lines at all.
pub(crate) fn parse_event_line(line: &str) -> Option<Result<CodeLocation, String>> {
    let line = line.trim();
    let rest = line.strip_prefix(EVENT_PREFIX)?;
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        // e.g. "EVTX ..." is ordinary output
        return None;
    }
    Some(parse_event_body(rest))
}

fn parse_event_body(rest: &str) -> Result<CodeLocation, String> {
    let body = rest
        .strip_prefix(' ')
        .ok_or_else(|| "expected `EVT <class>.<method> <file>:<line>`".to_string())?;
    let (qualified, file_line) = body
        .split_once(' ')
        .ok_or_else(|| "missing file:line field".to_string())?;
    if file_line.contains(char::is_whitespace) || qualified.is_empty() {
        return Err("expected exactly two fields separated by single spaces".into());
    }
    let (class_fqn, method) = split_qualified(qualified);
    if class_fqn.is_empty() || method.is_empty() {
        return Err(format!("`{qualified}` is not of the form <class>.<method>"));
    }
    let (file, line) = split_file_line(file_line)?;
    if file.is_empty() || file.len() == file_line.len() {
        return Err(format!("`{file_line}` is not of the form <file>:<line>"));
    }
    Ok(CodeLocation::new(file, class_fqn, method, line))
}
