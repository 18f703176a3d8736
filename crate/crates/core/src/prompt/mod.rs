//! Deterministic prompt assembly from versioned text templates.
//!
//! Templates live in `templates/<version>/` and are compiled into the binary.
//! A directory with the same layout can override any subset of them:
//!
//! ```text
//! cve_guidance.txt  trace_selection.txt  poc_main.txt
//! guidance_section.txt  trace_section.txt  feedback_section.txt
//! criteria/<CWE-id>.txt  criteria/generic.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{PocSettings, RunConfig, DEFAULT_MARKER};
use crate::instance::{is_cwe_id, ProblemInstance};
use crate::trace::{format_trace_for_prompt, StaticTrace};

mod template;

pub use template::{placeholders, render, Vars};

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("instance has no {0}")]
    MissingContext(&'static str),
    #[error("trace selection needs at least one trace")]
    EmptyTraceSet,
    #[error("criteria are for {criteria} but the instance is {instance}")]
    CriteriaMismatch { instance: String, criteria: String },
    #[error("template uses unknown placeholder `{{{{{0}}}}}`")]
    UnknownPlaceholder(String),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
    #[error("invalid CWE id `{0}`")]
    InvalidCwe(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    CveGuidance,
    TraceSelection,
    PocMain,
    PocRetry,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::CveGuidance => "cve_guidance",
            PromptKind::TraceSelection => "trace_selection",
            PromptKind::PocMain => "poc_main",
            PromptKind::PocRetry => "poc_retry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub text: String,
    /// SHA-256 over the template text and every substituted value.
    pub inputs_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweCriteria {
    pub cwe_id: String,
    pub criteria_text: String,
}

impl CweCriteria {
    pub fn new(cwe_id: impl Into<String>, criteria_text: impl Into<String>) -> Result<Self, PromptError> {
        let cwe_id = cwe_id.into();
        if !is_cwe_id(&cwe_id) {
            return Err(PromptError::InvalidCwe(cwe_id));
        }
        Ok(Self {
            cwe_id,
            criteria_text: criteria_text.into(),
        })
    }
}

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/v1/", $name))
    };
}

const TEMPLATE_FILES: [(&str, &str, &[&str]); 6] = [
    (
        "cve_guidance.txt",
        builtin!("cve_guidance.txt"),
        &["cve_id", "cwe_id", "project_slug", "vul_ref", "cve_description", "cwe_description", "criteria"],
    ),
    (
        "trace_selection.txt",
        builtin!("trace_selection.txt"),
        &["cve_id", "cwe_id", "project_slug", "cve_description", "trace_blocks"],
    ),
    (
        "poc_main.txt",
        builtin!("poc_main.txt"),
        &[
            "cve_id", "cwe_id", "cve_description", "cwe_description", "guidance_section", "criteria",
            "trace_section", "project_slug", "commit", "module_path", "build_command", "run_command",
            "poc_constraint", "marker", "success_conditions",
        ],
    ),
    ("guidance_section.txt", builtin!("guidance_section.txt"), &["guidance"]),
    ("trace_section.txt", builtin!("trace_section.txt"), &["trace"]),
    ("feedback_section.txt", builtin!("feedback_section.txt"), &["feedback"]),
];

const BUILTIN_CRITERIA: [(&str, &str); 5] = [
    ("CWE-22", builtin!("criteria/CWE-22.txt")),
    ("CWE-78", builtin!("criteria/CWE-78.txt")),
    ("CWE-79", builtin!("criteria/CWE-79.txt")),
    ("CWE-89", builtin!("criteria/CWE-89.txt")),
    ("CWE-94", builtin!("criteria/CWE-94.txt")),
];

const GENERIC_CRITERIA: &str = builtin!("criteria/generic.txt");

/// Loaded templates and CWE criteria.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<&'static str, String>,
    criteria: BTreeMap<String, String>,
    generic_criteria: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: TEMPLATE_FILES
                .iter()
                .map(|(name, text, _)| (*name, text.to_string()))
                .collect(),
            criteria: BUILTIN_CRITERIA
                .iter()
                .map(|(id, text)| (id.to_string(), text.to_string()))
                .collect(),
            generic_criteria: GENERIC_CRITERIA.to_string(),
        }
    }

    /// Builtin templates overridden by whatever files exist in `dir`. Every
    /// template is checked for unknown placeholders before returning.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let read = |path: PathBuf| {
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
        };
        for (name, _, _) in TEMPLATE_FILES {
            let path = dir.join(name);
            if path.is_file() {
                set.templates.insert(name, read(path)?);
            }
        }
        let criteria_dir = dir.join("criteria");
        if criteria_dir.is_dir() {
            let entries = std::fs::read_dir(&criteria_dir).map_err(|source| PromptError::Io {
                path: criteria_dir.clone(),
                source,
            })?;
            let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for path in paths {
                let Some(stem) = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_suffix(".txt"))
                    .map(str::to_string)
                else {
                    continue;
                };
                if stem == "generic" {
                    set.generic_criteria = read(path)?;
                } else if is_cwe_id(&stem) {
                    set.criteria.insert(stem, read(path)?);
                }
            }
        }
        set.check()?;
        Ok(set)
    }

    /// Fails if any template references a placeholder it is not given.
    pub fn check(&self) -> Result<(), PromptError> {
        for (name, _, allowed) in TEMPLATE_FILES {
            for used in placeholders(&self.templates[name])? {
                if !allowed.contains(&used) {
                    return Err(PromptError::UnknownPlaceholder(format!("{used} (in {name})")));
                }
            }
        }
        Ok(())
    }

    fn get(&self, name: &str) -> &str {
        &self.templates[name]
    }

    /// Criteria for a CWE; unknown CWEs get the generic block.
    pub fn criteria_for(&self, cwe_id: &str) -> CweCriteria {
        CweCriteria {
            cwe_id: cwe_id.to_string(),
            criteria_text: self
                .criteria
                .get(cwe_id)
                .unwrap_or(&self.generic_criteria)
                .trim_end()
                .to_string(),
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

struct Rendered {
    text: String,
    hasher: Sha256,
}

impl Rendered {
    fn new(kind: PromptKind) -> Self {
        let mut hasher = Sha256::new();
        feed(&mut hasher, TEMPLATE_VERSION);
        feed(&mut hasher, kind.as_str());
        Self {
            text: String::new(),
            hasher,
        }
    }

    fn render(&mut self, template: &str, vars: &Vars) -> Result<String, PromptError> {
        feed(&mut self.hasher, template);
        for (name, value) in vars {
            feed(&mut self.hasher, name);
            feed(&mut self.hasher, value);
        }
        render(template, vars)
    }

    fn finish(self, kind: PromptKind) -> PromptBundle {
        PromptBundle {
            kind,
            text: self.text,
            inputs_digest: hex::encode(self.hasher.finalize()),
        }
    }
}

fn feed(hasher: &mut Sha256, s: &str) {
    hasher.update((s.len() as u64).to_le_bytes());
    hasher.update(s.as_bytes());
}

/// Assembles prompts for one configuration.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: TemplateSet,
    marker: String,
    poc: PocSettings,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(TemplateSet::builtin(), DEFAULT_MARKER, PocSettings::default())
    }
}

impl PromptBuilder {
    pub fn new(templates: TemplateSet, marker: impl Into<String>, poc: PocSettings) -> Self {
        Self {
            templates,
            marker: marker.into(),
            poc,
        }
    }

    pub fn from_config(config: &RunConfig) -> Result<Self, PromptError> {
        let templates = match &config.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Self::new(templates, config.marker.clone(), config.poc.clone()))
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn criteria_for(&self, cwe_id: &str) -> CweCriteria {
        self.templates.criteria_for(cwe_id)
    }

    pub fn build_cve_guidance_prompt(
        &self,
        instance: &ProblemInstance,
    ) -> Result<PromptBundle, PromptError> {
        if instance.cve_description.trim().is_empty() {
            return Err(PromptError::MissingContext("cve_description"));
        }
        if instance.cwe_description.trim().is_empty() {
            return Err(PromptError::MissingContext("cwe_description"));
        }
        let kind = PromptKind::CveGuidance;
        let mut vars = Vars::new();
        vars.insert("cve_id", instance.id.clone());
        vars.insert("cwe_id", instance.cwe_id.clone());
        vars.insert("project_slug", instance.project_slug.clone());
        vars.insert("vul_ref", instance.vul_ref.clone());
        vars.insert("cve_description", instance.cve_description.trim().to_string());
        vars.insert("cwe_description", instance.cwe_description.trim().to_string());
        vars.insert("criteria", self.criteria_for(&instance.cwe_id).criteria_text);
        let mut r = Rendered::new(kind);
        r.text = r.render(self.templates.get("cve_guidance.txt"), &vars)?;
        Ok(r.finish(kind))
    }

    pub fn build_trace_selection_prompt(
        &self,
        instance: &ProblemInstance,
        traces: &[StaticTrace],
    ) -> Result<PromptBundle, PromptError> {
        if traces.is_empty() {
            return Err(PromptError::EmptyTraceSet);
        }
        let kind = PromptKind::TraceSelection;
        let blocks = traces
            .iter()
            .map(format_trace_for_prompt)
            .collect::<Vec<_>>()
            .join("\n");
        let mut vars = Vars::new();
        vars.insert("cve_id", instance.id.clone());
        vars.insert("cwe_id", instance.cwe_id.clone());
        vars.insert("project_slug", instance.project_slug.clone());
        vars.insert("cve_description", instance.cve_description.trim().to_string());
        vars.insert("trace_blocks", blocks);
        let mut r = Rendered::new(kind);
        r.text = r.render(self.templates.get("trace_selection.txt"), &vars)?;
        Ok(r.finish(kind))
    }

    /// Main PoC prompt. With `feedback` the result is the base prompt with a
    /// feedback section appended, so the base text is always a prefix.
    pub fn build_main_prompt(
        &self,
        instance: &ProblemInstance,
        trace: Option<&StaticTrace>,
        criteria: &CweCriteria,
        feedback: Option<&str>,
    ) -> Result<PromptBundle, PromptError> {
        if criteria.cwe_id != instance.cwe_id {
            return Err(PromptError::CriteriaMismatch {
                instance: instance.cwe_id.clone(),
                criteria: criteria.cwe_id.clone(),
            });
        }
        let kind = if feedback.is_some() {
            PromptKind::PocRetry
        } else {
            PromptKind::PocMain
        };
        let mut r = Rendered::new(kind);

        let guidance_section = match instance.cve_guidance.as_deref().map(str::trim) {
            Some(g) if !g.is_empty() => {
                let mut v = Vars::new();
                v.insert("guidance", g.to_string());
                r.render(self.templates.get("guidance_section.txt"), &v)?
            }
            _ => String::new(),
        };
        let trace_section = match trace {
            Some(t) => {
                let mut v = Vars::new();
                v.insert("trace", format_trace_for_prompt(t));
                r.render(self.templates.get("trace_section.txt"), &v)?
            }
            None => String::new(),
        };
        let mut conditions = vec![
            "1. The source file compiles and the program exits with status code 0.".to_string(),
            format!(
                "2. The output contains {} printed after a check that confirms the exploitation effect.",
                self.marker
            ),
        ];
        if let Some(t) = trace {
            conditions.push(format!(
                "3. Execution reaches the sink of the trace above ({}).",
                t.sink().location.qualified_method()
            ));
        }
        let build = instance.meta.build_script_template.trim();

        let mut vars = Vars::new();
        vars.insert("cve_id", instance.id.clone());
        vars.insert("cwe_id", instance.cwe_id.clone());
        vars.insert("cve_description", instance.cve_description.trim().to_string());
        vars.insert("cwe_description", instance.cwe_description.trim().to_string());
        vars.insert("guidance_section", guidance_section);
        vars.insert("criteria", criteria.criteria_text.trim_end().to_string());
        vars.insert("trace_section", trace_section);
        vars.insert("project_slug", instance.project_slug.clone());
        vars.insert("commit", instance.meta.commit.clone());
        vars.insert("module_path", instance.meta.module_path.clone());
        vars.insert(
            "build_command",
            if build.is_empty() { "(none)".into() } else { build.to_string() },
        );
        vars.insert("run_command", instance.meta.run_command_template.trim().to_string());
        vars.insert("poc_constraint", self.poc.constraint_text());
        vars.insert("marker", self.marker.clone());
        vars.insert("success_conditions", conditions.join("\n"));
        let mut text = r.render(self.templates.get("poc_main.txt"), &vars)?;

        if let Some(fb) = feedback {
            let mut v = Vars::new();
            v.insert("feedback", fb.to_string());
            text.push_str(&r.render(self.templates.get("feedback_section.txt"), &v)?);
        }
        r.text = text;
        Ok(r.finish(kind))
    }
}
