//! Regex-driven conversion of foreign instrumentation logs into event lines.
//!
//! An adapter file is TOML:
//!
//! ```toml
//! # keep lines that are already `EVT ...` (default true)
//! passthrough_events = true
//!
//! [[rule]]
//! pattern = '^\[trace\] enter (?P<class>[\w.$]+)#(?P<method>\w+) \((?P<file>[^:]+):(?P<line>\d+)\)$'
//! template = "EVT ${class}.${method} ${file}:${line}"
//! ```
//!
//! Each input line is tried against the rules in order; the first match is
//! expanded with its template. Lines that match nothing are dropped.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use super::dynamic::{parse_dynamic_log, parse_event_line, DynamicTrace};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("cannot read adapter config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed adapter config: {0}")]
    Malformed(String),
    #[error("rule {index}: invalid pattern: {message}")]
    InvalidPattern { index: usize, message: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdapter {
    #[serde(default = "default_true")]
    passthrough_events: bool,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    pattern: String,
    template: String,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct LogAdapter {
    passthrough_events: bool,
    rules: Vec<(Regex, String)>,
}

impl LogAdapter {
    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let text = std::fs::read_to_string(path).map_err(|source| AdapterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, AdapterError> {
        let raw: RawAdapter =
            toml::from_str(text).map_err(|e| AdapterError::Malformed(e.message().to_string()))?;
        let rules = raw
            .rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                Regex::new(&rule.pattern)
                    .map(|re| (re, rule.template))
                    .map_err(|e| AdapterError::InvalidPattern {
                        index,
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            passthrough_events: raw.passthrough_events,
            rules,
        })
    }

    /// Rewrites a foreign log into canonical event lines.
    pub fn transform(&self, log_text: &str) -> String {
        let mut out = String::new();
        for line in log_text.lines() {
            let line = line.trim_end_matches('\r');
            if self.passthrough_events && matches!(parse_event_line(line), Some(Ok(_))) {
                out.push_str(line.trim());
                out.push('\n');
                continue;
            }
            if let Some((re, template)) = self.rules.iter().find(|(re, _)| re.is_match(line)) {
                if let Some(caps) = re.captures(line) {
                    let mut expanded = String::new();
                    caps.expand(template, &mut expanded);
                    out.push_str(&expanded);
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn parse(&self, log_text: &str) -> DynamicTrace {
        parse_dynamic_log(&self.transform(log_text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASPECT_STYLE: &str = r#"
[[rule]]
pattern = '^\[aspect\] execution\((?:\S+ )?(?P<class>[\w.$]+)\.(?P<method>[\w$]+)\(.*\)\) @ (?P<file>\S+):(?P<line>\d+)$'
template = "EVT ${class}.${method} ${file}:${line}"
"#;

    #[test]
    fn converts_matching_lines() {
        let adapter = LogAdapter::from_toml(ASPECT_STYLE).unwrap();
        let log = "starting\n\
                   [aspect] execution(List org.demo.Dao.query(String)) @ src/Dao.java:44\n\
                   EVT org.demo.Web.list src/Web.java:10\n\
                   [aspect] something else\n";
        let out = adapter.transform(log);
        assert_eq!(
            out,
            "EVT org.demo.Dao.query src/Dao.java:44\nEVT org.demo.Web.list src/Web.java:10\n"
        );
        assert_eq!(adapter.parse(log).len(), 2);
    }

    #[test]
    fn passthrough_can_be_disabled() {
        let adapter = LogAdapter::from_toml("passthrough_events = false\n").unwrap();
        assert_eq!(adapter.transform("EVT a.B.c B.java:1\n"), "");
    }

    #[test]
    fn bad_pattern_is_reported() {
        let err = LogAdapter::from_toml("[[rule]]\npattern = '('\ntemplate = ''\n").unwrap_err();
        assert!(matches!(err, AdapterError::InvalidPattern { index: 0, .. }));
        assert!(matches!(
            LogAdapter::from_toml("bogus = 1"),
            Err(AdapterError::Malformed(_))
        ));
    }
}
