//! Pulling a single source file out of a free-text agent reply.

use std::sync::OnceLock;

use regex::Regex;

/// Contents of the last non-empty fenced code block, or the whole trimmed
/// body when there are no fences. `None` when nothing usable remains.
pub fn extract_source(body: &str) -> Option<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    let mut saw_fence = false;
    for line in body.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => {
                saw_fence = true;
                current = Some(Vec::new());
            }
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    // an unterminated fence runs to the end of the reply
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    if saw_fence {
        return blocks
            .into_iter()
            .rev()
            .find(|b| !b.trim().is_empty())
            .map(|b| format!("{}\n", b.trim_end()));
    }
    let trimmed = body.trim();
    (!trimmed.is_empty()).then(|| format!("{trimmed}\n"))
}

/// Name of the first top-level public class, used as the source file stem.
pub fn declared_entry(source: &str) -> Option<String> {
    static PUBLIC_CLASS: OnceLock<Regex> = OnceLock::new();
    let re = PUBLIC_CLASS.get_or_init(|| {
        Regex::new(
            r"(?m)^\s*public\s+(?:(?:final|abstract|static)\s+)*(?:class|record|enum|interface)\s+([A-Za-z_][A-Za-z0-9_]*)",
        )
        .expect("static regex")
    });
    re.captures(source).map(|c| c[1].to_string())
}
