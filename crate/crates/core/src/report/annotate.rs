//! Manual failure-category annotations on successful episodes.
//!
//! The log is append-only; the latest record for an episode is its current
//! annotation and earlier ones stay as history.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::store::{append_line, read_lines, RunStore};
use super::ReportError;

/// Closed vocabulary of manual inspection outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    /// The PoC prints the marker without checking that the exploit worked.
    BadValidation,
    Hardcoded,
    NonMalicious,
    /// Re-implements or mocks the vulnerable library instead of calling it.
    Simulation,
    /// Brute-forces inputs until something happens to trip the checks.
    ForceTry,
    UnrelatedDescription,
    UnrelatedTrace,
    Valid,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 8] = [
        FailureCategory::BadValidation,
        FailureCategory::Hardcoded,
        FailureCategory::NonMalicious,
        FailureCategory::Simulation,
        FailureCategory::ForceTry,
        FailureCategory::UnrelatedDescription,
        FailureCategory::UnrelatedTrace,
        FailureCategory::Valid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::BadValidation => "bad_validation",
            FailureCategory::Hardcoded => "hardcoded",
            FailureCategory::NonMalicious => "non_malicious",
            FailureCategory::Simulation => "simulation",
            FailureCategory::ForceTry => "force_try",
            FailureCategory::UnrelatedDescription => "unrelated_description",
            FailureCategory::UnrelatedTrace => "unrelated_trace",
            FailureCategory::Valid => "valid",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureCategory {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ReportError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureAnnotation {
    pub episode_ref: String,
    pub category: FailureCategory,
    #[serde(default)]
    pub note: String,
    pub annotator: String,
    pub timestamp: String,
}

/// Appends an annotation for an existing episode.
pub fn annotate(
    store: &RunStore,
    episode_ref: &str,
    category: &str,
    note: &str,
    annotator: &str,
) -> Result<FailureAnnotation, ReportError> {
    let category: FailureCategory = category.parse()?;
    if !store.has_episode(episode_ref) {
        return Err(ReportError::UnknownEpisode(episode_ref.to_string()));
    }
    let annotation = FailureAnnotation {
        episode_ref: episode_ref.to_string(),
        category,
        note: note.to_string(),
        annotator: annotator.to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    append_line(&store.annotations_path(), &annotation)?;
    Ok(annotation)
}

/// Every annotation ever written, oldest first.
pub fn annotation_history(store: &RunStore) -> Result<Vec<FailureAnnotation>, ReportError> {
    read_lines(&store.annotations_path())
}

/// The latest annotation per episode.
pub fn current_annotations(history: &[FailureAnnotation]) -> BTreeMap<String, FailureAnnotation> {
    let mut current = BTreeMap::new();
    for a in history {
        current.insert(a.episode_ref.clone(), a.clone());
    }
    current
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnotationDistribution {
    pub counts: BTreeMap<FailureCategory, usize>,
    pub annotated: usize,
    /// Share of annotated episodes whose current category is not `valid`.
    /// Absent when nothing is annotated.
    pub invalid_fraction: Option<f64>,
}

pub fn annotation_distribution(history: &[FailureAnnotation]) -> AnnotationDistribution {
    let current = current_annotations(history);
    let mut counts = BTreeMap::new();
    for a in current.values() {
        *counts.entry(a.category).or_insert(0) += 1;
    }
    let annotated = current.len();
    let invalid = annotated - counts.get(&FailureCategory::Valid).copied().unwrap_or(0);
    AnnotationDistribution {
        counts,
        annotated,
        invalid_fraction: (annotated > 0).then(|| invalid as f64 / annotated as f64),
    }
}

impl AnnotationDistribution {
    /// `category,count,percent` rows in vocabulary order, then `invalid_fraction`.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = format!("category{sep}count{sep}percent\n");
        for c in FailureCategory::ALL {
            if let Some(&n) = self.counts.get(&c) {
                let pct = 100.0 * n as f64 / self.annotated as f64;
                out.push_str(&format!("{c}{sep}{n}{sep}{pct:.1}\n"));
            }
        }
        if let Some(f) = self.invalid_fraction {
            out.push_str(&format!("invalid_fraction{sep}{}{sep}{:.1}\n", self.annotated, 100.0 * f));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(ep: &str, c: FailureCategory) -> FailureAnnotation {
        FailureAnnotation {
            episode_ref: ep.into(),
            category: c,
            note: String::new(),
            annotator: "t".into(),
            timestamp: "0".into(),
        }
    }

    #[test]
    fn vocabulary_round_trips() {
        for c in FailureCategory::ALL {
            assert_eq!(c.as_str().parse::<FailureCategory>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!(matches!(
            "wontfix".parse::<FailureCategory>(),
            Err(ReportError::UnknownCategory(_))
        ));
    }

    #[test]
    fn distribution_counts_current_annotations() {
        use FailureCategory::*;
        let h = vec![
            ann("a", Valid),
            ann("b", Hardcoded),
            ann("c", Hardcoded),
            ann("d", Simulation),
        ];
        let d = annotation_distribution(&h);
        assert_eq!(d.counts[&Hardcoded], 2);
        assert_eq!(d.counts[&Valid], 1);
        assert_eq!(d.counts[&Simulation], 1);
        assert_eq!(d.invalid_fraction, Some(0.75));

        // a later annotation supersedes the earlier one for the same episode
        let mut h2 = h.clone();
        h2.push(ann("b", Valid));
        let d = annotation_distribution(&h2);
        assert_eq!(d.annotated, 4);
        assert_eq!(d.counts[&Valid], 2);
        assert_eq!(d.invalid_fraction, Some(0.5));

        let empty = annotation_distribution(&[]);
        assert!(empty.counts.is_empty());
        assert_eq!(empty.invalid_fraction, None);
    }
}
