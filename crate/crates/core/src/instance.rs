//! Vulnerability problem instances and their TOML manifest format.
//!
//! A manifest describes one vulnerability: identifiers, the vulnerable and
//! fixed revisions, CVE/CWE descriptions, project metadata, ground-truth
//! locations and the static trace files to load. Relative paths are resolved
//! against the manifest's directory. See `docs/formats.md` for the schema.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::location::{is_safe_id, CodeLocation};
use crate::trace::{format_static_traces, parse_static_traces, StaticTrace, TraceError};

/// Placeholder for the PoC source path in command templates.
pub const POC_PLACEHOLDER: &str = "{POC}";
/// Placeholder for the per-attempt scratch directory.
pub const WORKSPACE_PLACEHOLDER: &str = "{WORKSPACE}";
/// Placeholder for the instrumentation log path.
pub const LOG_PLACEHOLDER: &str = "{LOG}";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("malformed manifest at line {line}, column {column}: {message}")]
    MalformedManifest {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dangling reference: {0} does not exist")]
    DanglingReference(PathBuf),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("trace file {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub commit: String,
    pub module_path: String,
    /// Build command run before the PoC; empty means no build step.
    #[serde(default)]
    pub build_script_template: String,
    pub run_command_template: String,
    pub timeout_seconds: u64,
    /// Where the run writes instrumentation events. When unset, `{LOG}`
    /// resolves to a file in the workspace and captured output is scanned
    /// if that file is never written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrumentation_log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub cwe_id: String,
    pub project_slug: String,
    pub vul_ref: String,
    pub fix_ref: String,
    pub cve_description: String,
    pub cwe_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_guidance: Option<String>,
    pub meta: ProjectMeta,
    /// Working directory for build and run commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_dir: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Vec<CodeLocation>,
    /// Location candidates used to rank traces.
    #[serde(default)]
    pub hints: Vec<CodeLocation>,
    #[serde(default = "default_true")]
    pub posthoc_enabled: bool,
    #[serde(default)]
    pub traces: Vec<StaticTrace>,
}

fn default_true() -> bool {
    true
}

impl ProblemInstance {
    /// Checks every instance invariant.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |field: &str, reason: &str| ManifestError::InvalidField {
            field: field.into(),
            reason: reason.into(),
        };
        if !is_safe_id(&self.id) {
            return Err(invalid("id", "must be non-empty and use only [A-Za-z0-9._-]"));
        }
        if !is_cwe_id(&self.cwe_id) {
            return Err(invalid("cwe_id", "must look like CWE-<digits>"));
        }
        if self.vul_ref == self.fix_ref {
            return Err(invalid("fix_ref", "must differ from vul_ref"));
        }
        if !self.meta.run_command_template.contains(POC_PLACEHOLDER) {
            return Err(invalid(
                "meta.run_command_template",
                "must contain the {POC} placeholder",
            ));
        }
        if self.meta.timeout_seconds == 0 {
            return Err(invalid("meta.timeout_seconds", "must be positive"));
        }
        if self.ground_truth.is_empty() && self.posthoc_enabled {
            return Err(invalid(
                "ground_truth",
                "may only be empty when posthoc_enabled = false",
            ));
        }
        for (i, loc) in self.ground_truth.iter().enumerate() {
            loc.check()
                .map_err(|e| invalid(&format!("ground_truth[{i}]"), e))?;
        }
        let mut seen = HashSet::new();
        for trace in &self.traces {
            trace.validate().map_err(|source| ManifestError::Trace {
                path: PathBuf::new(),
                source,
            })?;
            if !seen.insert(trace.trace_id.as_str()) {
                return Err(invalid("traces", &format!("duplicate trace id `{}`", trace.trace_id)));
            }
        }
        Ok(())
    }

    pub fn trace(&self, trace_id: &str) -> Option<&StaticTrace> {
        self.traces.iter().find(|t| t.trace_id == trace_id)
    }
}

pub(crate) fn is_cwe_id(s: &str) -> bool {
    s.strip_prefix("CWE-")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    id: Option<String>,
    cwe_id: Option<String>,
    project_slug: Option<String>,
    vul_ref: Option<String>,
    fix_ref: Option<String>,
    cve_description: Option<String>,
    cwe_description: Option<String>,
    cve_guidance: Option<String>,
    project_dir: Option<String>,
    posthoc: Option<bool>,
    #[serde(default)]
    trace_files: Vec<String>,
    #[serde(default)]
    ground_truth_files: Vec<String>,
    #[serde(default)]
    ground_truth: Vec<RawLocation>,
    #[serde(default)]
    hints: Vec<RawLocation>,
    meta: Option<RawMeta>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    commit: Option<String>,
    module_path: Option<String>,
    build_script_template: Option<String>,
    run_command_template: Option<String>,
    timeout_seconds: Option<i64>,
    instrumentation_log: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocation {
    file: Option<String>,
    #[serde(default)]
    class_fqn: String,
    method: Option<String>,
    line: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocationFile {
    #[serde(default)]
    location: Vec<RawLocation>,
}

impl RawLocation {
    fn into_location(self, field: &str) -> Result<CodeLocation, ManifestError> {
        let file = self
            .file
            .clone()
            .ok_or_else(|| ManifestError::MissingField(format!("{field}.file")))?;
        self.finish(field, file, true)
    }

    /// Hints only need a method; file and class narrow the match when given.
    fn into_hint(self, field: &str) -> Result<CodeLocation, ManifestError> {
        let file = self.file.clone().unwrap_or_default();
        self.finish(field, file, false)
    }

    fn finish(self, field: &str, file: String, full: bool) -> Result<CodeLocation, ManifestError> {
        let method = self
            .method
            .ok_or_else(|| ManifestError::MissingField(format!("{field}.method")))?;
        let line = match self.line {
            None => None,
            Some(n) if n >= 1 && n <= u32::MAX as i64 => Some(n as u32),
            Some(_) => {
                return Err(ManifestError::InvalidField {
                    field: format!("{field}.line"),
                    reason: "must be a positive integer".into(),
                })
            }
        };
        let loc = CodeLocation::new(file, self.class_fqn, method, line);
        let checked = if full {
            loc.check()
        } else if loc.method.trim().is_empty() {
            Err("method is empty")
        } else {
            Ok(())
        };
        checked.map_err(|reason| ManifestError::InvalidField {
            field: field.into(),
            reason: reason.into(),
        })?;
        Ok(loc)
    }
}

fn toml_error(text: &str, err: toml::de::Error) -> ManifestError {
    let (line, column) = err
        .span()
        .map(|span| line_col(text, span.start))
        .unwrap_or((0, 0));
    ManifestError::MalformedManifest {
        line,
        column,
        message: err.message().to_string(),
    }
}

pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|b| **b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn read(path: &Path) -> Result<String, ManifestError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ManifestError::DanglingReference(path.to_path_buf())
        } else {
            ManifestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Loads a manifest file, its trace files and ground-truth files.
pub fn load_instance(manifest_path: &Path) -> Result<ProblemInstance, ManifestError> {
    let text = read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    parse_manifest_str(&text, base)
}

/// Parses manifest text; referenced files are resolved against `base_dir`.
pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<ProblemInstance, ManifestError> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    let required = |value: Option<String>, name: &str| {
        value.ok_or_else(|| ManifestError::MissingField(name.into()))
    };
    let id = required(raw.id, "id")?;
    let cwe_id = required(raw.cwe_id, "cwe_id")?;
    let project_slug = required(raw.project_slug, "project_slug")?;
    let vul_ref = required(raw.vul_ref, "vul_ref")?;
    let fix_ref = required(raw.fix_ref, "fix_ref")?;
    let cve_description = required(raw.cve_description, "cve_description")?;
    let cwe_description = required(raw.cwe_description, "cwe_description")?;
    let raw_meta = raw
        .meta
        .ok_or_else(|| ManifestError::MissingField("meta".into()))?;
    let timeout = raw_meta
        .timeout_seconds
        .ok_or_else(|| ManifestError::MissingField("meta.timeout_seconds".into()))?;
    if timeout <= 0 {
        return Err(ManifestError::InvalidField {
            field: "meta.timeout_seconds".into(),
            reason: "must be positive".into(),
        });
    }
    let meta = ProjectMeta {
        commit: required(raw_meta.commit, "meta.commit")?,
        module_path: required(raw_meta.module_path, "meta.module_path")?,
        build_script_template: raw_meta.build_script_template.unwrap_or_default(),
        run_command_template: required(raw_meta.run_command_template, "meta.run_command_template")?,
        timeout_seconds: timeout as u64,
        instrumentation_log: raw_meta.instrumentation_log,
    };

    let project_dir = match raw.project_dir {
        Some(rel) => {
            let path = base_dir.join(rel);
            if !path.is_dir() {
                return Err(ManifestError::DanglingReference(path));
            }
            Some(std::path::absolute(&path).unwrap_or(path))
        }
        None => None,
    };

    let mut ground_truth = Vec::new();
    for (i, loc) in raw.ground_truth.into_iter().enumerate() {
        ground_truth.push(loc.into_location(&format!("ground_truth[{i}]"))?);
    }
    for rel in &raw.ground_truth_files {
        let path = base_dir.join(rel);
        let text = read(&path)?;
        let file: RawLocationFile = toml::from_str(&text).map_err(|e| toml_error(&text, e))?;
        for (i, loc) in file.location.into_iter().enumerate() {
            ground_truth.push(loc.into_location(&format!("{rel}: location[{i}]"))?);
        }
    }
    let hints = raw
        .hints
        .into_iter()
        .enumerate()
        .map(|(i, loc)| loc.into_hint(&format!("hints[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let mut traces = Vec::new();
    for rel in &raw.trace_files {
        let path = base_dir.join(rel);
        if !path.is_file() {
            return Err(ManifestError::DanglingReference(path));
        }
        let parsed = parse_static_traces(&path).map_err(|source| ManifestError::Trace {
            path: path.clone(),
            source,
        })?;
        traces.extend(parsed);
    }

    let instance = ProblemInstance {
        id,
        cwe_id,
        project_slug,
        vul_ref,
        fix_ref,
        cve_description,
        cwe_description,
        cve_guidance: raw.cve_guidance,
        meta,
        project_dir,
        ground_truth,
        hints,
        posthoc_enabled: raw.posthoc.unwrap_or(true),
        traces,
    };
    instance.validate()?;
    Ok(instance)
}

#[derive(Serialize)]
struct OutManifest<'a> {
    id: &'a str,
    cwe_id: &'a str,
    project_slug: &'a str,
    vul_ref: &'a str,
    fix_ref: &'a str,
    cve_description: &'a str,
    cwe_description: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    cve_guidance: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    project_dir: Option<String>,
    posthoc: bool,
    trace_files: Vec<&'a str>,
    hints: &'a [CodeLocation],
    ground_truth: &'a [CodeLocation],
    meta: &'a ProjectMeta,
}

/// Writes `manifest.toml` (and `traces.txt` when the instance has traces) to
/// `dir`. Loading the written manifest yields an equal instance.
pub fn save_instance(instance: &ProblemInstance, dir: &Path) -> Result<PathBuf, ManifestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ManifestError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let trace_file = "traces.txt";
    if !instance.traces.is_empty() {
        let path = dir.join(trace_file);
        std::fs::write(&path, format_static_traces(&instance.traces)).map_err(io(&path))?;
    }
    let project_dir = instance
        .project_dir
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned());
    let out = OutManifest {
        id: &instance.id,
        cwe_id: &instance.cwe_id,
        project_slug: &instance.project_slug,
        vul_ref: &instance.vul_ref,
        fix_ref: &instance.fix_ref,
        cve_description: &instance.cve_description,
        cwe_description: &instance.cwe_description,
        cve_guidance: instance.cve_guidance.as_deref(),
        project_dir,
        posthoc: instance.posthoc_enabled,
        trace_files: if instance.traces.is_empty() {
            vec![]
        } else {
            vec![trace_file]
        },
        hints: &instance.hints,
        ground_truth: &instance.ground_truth,
        meta: &instance.meta,
    };
    let text = toml::to_string(&out).map_err(|e| ManifestError::InvalidField {
        field: "manifest".into(),
        reason: e.to_string(),
    })?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}

/// Fails on the first id that appears twice, scanning in order.
pub fn check_unique_ids(instances: &[ProblemInstance]) -> Result<(), ManifestError> {
    let mut seen = HashSet::new();
    for instance in instances {
        if !seen.insert(instance.id.as_str()) {
            return Err(ManifestError::DuplicateId(instance.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
id = "CVE-2022-45206"
cwe_id = "CWE-89"
project_slug = "demo-shop"
vul_ref = "v1.0.0"
fix_ref = "v1.0.1"
cve_description = "SQL injection in the order search endpoint."
cwe_description = "Improper neutralization of special elements used in an SQL command."
posthoc = false

[meta]
commit = "abc123"
module_path = "shop-core"
run_command_template = "sh run.sh {POC}"
timeout_seconds = 30
"#;

    fn parse(text: &str) -> Result<ProblemInstance, ManifestError> {
        parse_manifest_str(text, Path::new("."))
    }

    #[test]
    fn minimal_manifest() {
        let inst = parse(MINIMAL).unwrap();
        assert_eq!(inst.id, "CVE-2022-45206");
        assert_eq!(inst.cwe_id, "CWE-89");
        assert!(inst.traces.is_empty());
        assert!(inst.ground_truth.is_empty());
        assert_eq!(inst.meta.build_script_template, "");
    }

    #[test]
    fn missing_vul_ref() {
        let text = MINIMAL.replace("vul_ref = \"v1.0.0\"\n", "");
        match parse(&text) {
            Err(ManifestError::MissingField(f)) => assert_eq!(f, "vul_ref"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn missing_nested_field() {
        let text = MINIMAL.replace("commit = \"abc123\"\n", "");
        match parse(&text) {
            Err(ManifestError::MissingField(f)) => assert_eq!(f, "meta.commit"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn malformed_reports_position() {
        let text = "id = \"x\"\ncwe_id = = 3\n";
        match parse(text) {
            Err(ManifestError::MalformedManifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_malformed() {
        let text = format!("surprise = 1\n{MINIMAL}");
        assert!(matches!(
            parse(&text),
            Err(ManifestError::MalformedManifest { .. })
        ));
    }

    #[test]
    fn invariants() {
        let same_refs = MINIMAL.replace("v1.0.1", "v1.0.0");
        assert!(matches!(parse(&same_refs), Err(ManifestError::InvalidField { .. })));
        let no_placeholder = MINIMAL.replace("sh run.sh {POC}", "sh run.sh");
        assert!(matches!(parse(&no_placeholder), Err(ManifestError::InvalidField { .. })));
        let zero_timeout = MINIMAL.replace("timeout_seconds = 30", "timeout_seconds = 0");
        assert!(matches!(parse(&zero_timeout), Err(ManifestError::InvalidField { .. })));
        let needs_truth = MINIMAL.replace("posthoc = false\n", "");
        assert!(matches!(parse(&needs_truth), Err(ManifestError::InvalidField { .. })));
        let bad_cwe = MINIMAL.replace("CWE-89", "89");
        assert!(matches!(parse(&bad_cwe), Err(ManifestError::InvalidField { .. })));
    }

    #[test]
    fn dangling_trace_file() {
        let text = MINIMAL.replace("posthoc = false", "posthoc = false\ntrace_files = [\"nope.txt\"]");
        assert!(matches!(parse(&text), Err(ManifestError::DanglingReference(_))));
    }

    #[test]
    fn duplicate_ids() {
        let a = parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.id = "CVE-1".into();
        assert!(check_unique_ids(&[a.clone(), b.clone()]).is_ok());
        match check_unique_ids(&[a.clone(), b, a]) {
            Err(ManifestError::DuplicateId(id)) => assert_eq!(id, "CVE-2022-45206"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn line_col_math() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
