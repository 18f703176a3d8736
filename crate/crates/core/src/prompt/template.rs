//! `{{name}}` placeholder substitution.
//!
//! Names are `[a-z0-9_]+`. Substituted values are inserted verbatim and never
//! rescanned. Any `{{` that does not open a known placeholder is an error.

use std::collections::BTreeMap;

use super::PromptError;

pub type Vars = BTreeMap<&'static str, String>;

/// Placeholder names in order of appearance, or the first syntax error.
pub fn placeholders(template: &str) -> Result<Vec<&str>, PromptError> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::MalformedTemplate("unterminated `{{`".into()))?;
        let name = &after[..end];
        if name.is_empty()
            || !name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        {
            return Err(PromptError::MalformedTemplate(format!(
                "invalid placeholder `{{{{{name}}}}}`"
            )));
        }
        names.push(name);
        rest = &after[end + 2..];
    }
    Ok(names)
}

pub fn render(template: &str, vars: &Vars) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::MalformedTemplate("unterminated `{{`".into()))?;
        let name = &after[..end];
        let value = vars
            .get(name)
            .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
