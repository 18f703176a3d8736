//! Method-granularity code locations shared by traces, events and ground truth.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A method in a source file, optionally pinned to a line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodeLocation {
    pub file: String,
    /// Fully qualified type name. Empty when the producer could not recover it.
    #[serde(default)]
    pub class_fqn: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl CodeLocation {
    pub fn new(
        file: impl Into<String>,
        class_fqn: impl Into<String>,
        method: impl Into<String>,
        line: Option<u32>,
    ) -> Self {
        Self {
            file: file.into(),
            class_fqn: class_fqn.into(),
            method: method.into(),
            line,
        }
    }

    /// `Class.method`, or just `method` when the class is unknown.
    pub fn qualified_method(&self) -> String {
        if self.class_fqn.is_empty() {
            self.method.clone()
        } else {
            format!("{}.{}", self.class_fqn, self.method)
        }
    }

    /// `file:line`, or just `file` when no line is known.
    pub fn file_line(&self) -> String {
        match self.line {
            Some(line) => format!("{}:{}", self.file, line),
            None => self.file.clone(),
        }
    }

    pub(crate) fn check(&self) -> Result<(), &'static str> {
        if self.file.trim().is_empty() {
            return Err("file is empty");
        }
        if self.method.trim().is_empty() {
            return Err("method is empty");
        }
        if self.line == Some(0) {
            return Err("line numbers start at 1");
        }
        Ok(())
    }
}

impl fmt::Display for CodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.qualified_method(), self.file_line())
    }
}

/// Normalizes a relative source path for comparison: forward slashes,
/// no `./` prefixes, no empty or `.` segments.
pub fn normalize_path(path: &str) -> String {
    path.replace('\\', "/")
        .split('/')
        .filter(|seg| !seg.is_empty() && *seg != ".")
        .collect::<Vec<_>>()
        .join("/")
}

/// Splits `a.b.C.method` into (`a.b.C`, `method`) at the last dot.
pub(crate) fn split_qualified(text: &str) -> (&str, &str) {
    match text.rfind('.') {
        Some(idx) => (&text[..idx], &text[idx + 1..]),
        None => ("", text),
    }
}

/// Splits `path/File.java:42` into (`path/File.java`, Some(42)). A trailing
/// `:0` is read as "no line".
pub(crate) fn split_file_line(text: &str) -> Result<(&str, Option<u32>), String> {
    match text.rfind(':') {
        Some(idx) if text[idx + 1..].bytes().all(|b| b.is_ascii_digit()) => {
            let digits = &text[idx + 1..];
            if digits.is_empty() {
                return Err(format!("missing line number after ':' in `{text}`"));
            }
            let line: u32 = digits
                .parse()
                .map_err(|_| format!("line number out of range in `{text}`"))?;
            Ok((&text[..idx], (line > 0).then_some(line)))
        }
        _ => Ok((text, None)),
    }
}

/// Identifiers that end up in file names (instance ids, trace ids).
pub(crate) fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_paths() {
        assert_eq!(normalize_path("./src//main/./A.java"), "src/main/A.java");
        assert_eq!(normalize_path("src\\main\\A.java"), "src/main/A.java");
    }

    #[test]
    fn splits_file_and_line() {
        assert_eq!(split_file_line("a/B.java:12").unwrap(), ("a/B.java", Some(12)));
        assert_eq!(split_file_line("a/B.java").unwrap(), ("a/B.java", None));
        assert_eq!(split_file_line("a/B.java:0").unwrap(), ("a/B.java", None));
        assert!(split_file_line("a/B.java:").is_err());
        assert!(split_file_line("a/B.java:99999999999").is_err());
    }

    #[test]
    fn splits_qualified_names() {
        assert_eq!(split_qualified("org.x.Dao.query"), ("org.x.Dao", "query"));
        assert_eq!(split_qualified("query"), ("", "query"));
    }

    #[test]
    fn safe_ids() {
        assert!(is_safe_id("CVE-2022-45206"));
        assert!(is_safe_id("t_1.a"));
        assert!(!is_safe_id(""));
        assert!(!is_safe_id(".."));
        assert!(!is_safe_id("a/b"));
        assert!(!is_safe_id("a b"));
    }
}
