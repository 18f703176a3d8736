//! Run storage, manual annotations and metric tables.

use std::path::PathBuf;

use thiserror::Error;

mod aggregate;
mod annotate;
mod store;

pub use aggregate::{
    aggregate_report, cost_records, format_costs, format_delimited, format_table, GroupBy,
    ReportRow, RunCostRecord, REPORT_HEADER,
};
pub use annotate::{
    annotate, annotation_distribution, annotation_history, current_annotations,
    AnnotationDistribution, FailureAnnotation, FailureCategory,
};
pub use store::{load_runs, PostHocRecord, RunManifest, RunStore, RUN_SCHEMA_VERSION, SESSION_LOG_FILE};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} is not a run directory (no run.json)")]
    NotARunDir(PathBuf),
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("unknown episode `{0}`")]
    UnknownEpisode(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("`{0}` cannot be used as a file name")]
    UnsafeName(String),
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
