//! Run configuration (TOML). Every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentBackendDescriptor;
use crate::instance::line_col;
use crate::trace::DEFAULT_TOP_K;

pub const DEFAULT_MARKER: &str = "[VULN]";
pub const DEFAULT_BUDGET: usize = 5;
pub const DEFAULT_OUTPUT_CAP: usize = 1 << 20;
pub const DEFAULT_FEEDBACK_CAP: usize = 4096;
pub const DEFAULT_CREDENTIAL_ENV: &str = "POC_HARNESS_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config at line {line}, column {column}: {message}")]
    MalformedConfig {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config value `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NoTrace,
    MultiTrace,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoTrace => "no_trace",
            Mode::MultiTrace => "multi_trace",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_trace" => Ok(Mode::NoTrace),
            "multi_trace" => Ok(Mode::MultiTrace),
            other => Err(format!("unknown mode `{other}` (expected no_trace or multi_trace)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Token-overlap similarity against the instance's location hints.
    Similarity,
    /// Ask the agent to order the candidates; falls back to similarity.
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    Never,
    OnFailure,
    Always,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PocSettings {
    /// Language named in the output constraints.
    pub language: String,
    pub file_extension: String,
    /// Source file stem used when the candidate declares no entry point.
    pub default_entry: String,
    /// Replaces the generated single-file constraint sentence when set.
    pub constraint: Option<String>,
}

impl Default for PocSettings {
    fn default() -> Self {
        Self {
            language: "Java".into(),
            file_extension: "java".into(),
            default_entry: "Poc".into(),
            constraint: None,
        }
    }
}

impl PocSettings {
    pub fn constraint_text(&self) -> String {
        self.constraint.clone().unwrap_or_else(|| {
            format!(
                "Produce exactly one self-contained {} source file. Do not create or modify any other file.",
                self.language
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Row label for `--group-by config` reports.
    pub label: Option<String>,
    pub mode: Mode,
    pub top_k: usize,
    /// Attempts per episode.
    pub budget: usize,
    pub marker: String,
    pub ranking: Ranking,
    /// Skip an instance's remaining traces after its first success.
    pub stop_early: bool,
    /// Instances run concurrently.
    pub parallel: usize,
    /// Upper bound on concurrently running child processes.
    pub max_processes: usize,
    pub keep_workspaces: Retention,
    pub workspace_root: Option<PathBuf>,
    pub output_cap_bytes: usize,
    pub feedback_output_cap_bytes: usize,
    /// Overrides every instance's `meta.timeout_seconds`.
    pub timeout_seconds: Option<u64>,
    pub log_adapter: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub transport_retries: u32,
    pub retry_backoff_ms: u64,
    pub request_timeout_seconds: u64,
    pub poc: PocSettings,
    pub agent: AgentBackendDescriptor,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: None,
            mode: Mode::MultiTrace,
            top_k: DEFAULT_TOP_K,
            budget: DEFAULT_BUDGET,
            marker: DEFAULT_MARKER.into(),
            ranking: Ranking::Similarity,
            stop_early: false,
            parallel: 1,
            max_processes: 4,
            keep_workspaces: Retention::Never,
            workspace_root: None,
            output_cap_bytes: DEFAULT_OUTPUT_CAP,
            feedback_output_cap_bytes: DEFAULT_FEEDBACK_CAP,
            timeout_seconds: None,
            log_adapter: None,
            templates_dir: None,
            transport_retries: 3,
            retry_backoff_ms: 500,
            request_timeout_seconds: 600,
            poc: PocSettings::default(),
            agent: AgentBackendDescriptor::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, value: u64| {
            if value == 0 {
                Err(ConfigError::Invalid {
                    field: field.into(),
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        positive("top_k", self.top_k as u64)?;
        positive("budget", self.budget as u64)?;
        positive("parallel", self.parallel as u64)?;
        positive("max_processes", self.max_processes as u64)?;
        positive("output_cap_bytes", self.output_cap_bytes as u64)?;
        positive("request_timeout_seconds", self.request_timeout_seconds)?;
        if let Some(t) = self.timeout_seconds {
            positive("timeout_seconds", t)?;
        }
        if self.marker.is_empty() {
            return Err(ConfigError::Invalid {
                field: "marker".into(),
                reason: "must not be empty".into(),
            });
        }
        let stem_ok = !self.poc.default_entry.is_empty()
            && self
                .poc
                .default_entry
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_');
        if !stem_ok {
            return Err(ConfigError::Invalid {
                field: "poc.default_entry".into(),
                reason: "must be a plain identifier".into(),
            });
        }
        Ok(())
    }

    /// Label used when grouping reports by configuration.
    pub fn display_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}/{}", self.agent.label(), self.mode.as_str()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        join(&mut self.workspace_root);
        join(&mut self.log_adapter);
        join(&mut self.templates_dir);
        self.agent.resolve_paths(base);
    }
}

pub fn load_run_config(config_path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(config_path).map_err(|source| ConfigError::Io {
        path: config_path.to_path_buf(),
        source,
    })?;
    let mut config = parse_run_config_str(&text)?;
    config.resolve_paths(config_path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

/// Parses config text without resolving relative paths.
pub fn parse_run_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ConfigError::MalformedConfig {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    config.validate().map_err(|e| match e {
        ConfigError::Invalid { field, reason } => ConfigError::MalformedConfig {
            line: 0,
            column: 0,
            message: format!("`{field}` {reason}"),
        },
        other => other,
    })?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let c = parse_run_config_str("").unwrap();
        assert_eq!(c.top_k, 5);
        assert_eq!(c.marker, "[VULN]");
        assert_eq!(c.budget, DEFAULT_BUDGET);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn passthrough_values() {
        let c = parse_run_config_str("mode = \"multi_trace\"\nbudget = 3\n").unwrap();
        assert_eq!(c.mode, Mode::MultiTrace);
        assert_eq!(c.budget, 3);
        let c = parse_run_config_str("mode = \"no_trace\"\n[agent]\nkind = \"remote\"\nendpoint_or_script_dir = \"https://x\"\n").unwrap();
        assert_eq!(c.mode, Mode::NoTrace);
    }

    #[test]
    fn zero_top_k_is_malformed() {
        assert!(matches!(
            parse_run_config_str("top_k = 0"),
            Err(ConfigError::MalformedConfig { .. })
        ));
        assert!(matches!(
            parse_run_config_str("top_k = -1"),
            Err(ConfigError::MalformedConfig { .. })
        ));
        assert!(matches!(
            parse_run_config_str("budget = 0"),
            Err(ConfigError::MalformedConfig { .. })
        ));
    }

    #[test]
    fn unknown_keys_and_bad_modes() {
        assert!(parse_run_config_str("colour = 1").is_err());
        match parse_run_config_str("x = 1\nmode = \"sometimes\"") {
            Err(ConfigError::MalformedConfig { line, .. }) => assert!(line >= 1),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
