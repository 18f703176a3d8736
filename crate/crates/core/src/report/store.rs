//! Run directory layout.
//!
//! ```text
//! <run_dir>/
//!   run.json                 config snapshot and instance list
//!   instances/<id>.json      instance snapshots (ground truth for post-hoc)
//!   episodes/<ref>.json      one EpisodeResult per episode, written once
//!   posthoc.jsonl            post-hoc verdicts, appended; the last one wins
//!   annotations.jsonl        manual failure annotations, appended
//!   session_log.jsonl        agent call log
//! ```
//!
//! Episode files are never rewritten. Post-hoc verdicts live in their own log
//! and are merged into episodes on load.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::config::RunConfig;
use crate::instance::ProblemInstance;
use crate::location::is_safe_id;
use crate::validation::{EpisodeResult, PostHocVerdict};

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const SESSION_LOG_FILE: &str = "session_log.jsonl";
const RUN_FILE: &str = "run.json";
const POSTHOC_FILE: &str = "posthoc.jsonl";
pub(crate) const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_label: String,
    pub created_at: String,
    pub instance_ids: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHocRecord {
    pub episode_ref: String,
    pub validated_at: String,
    pub verdict: PostHocVerdict,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError {
    let path = path.to_path_buf();
    move |source| ReportError::Io { path, source }
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => ReportError::AlreadyExists(path.to_path_buf()),
            _ => ReportError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
    f.write_all(bytes).map_err(io_err(path))
}

pub(crate) fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    // single writer per log; concurrent CLI invocations queue here
    f.lock().map_err(io_err(path))?;
    let res = f.write_all(line.as_bytes()).map_err(io_err(path));
    let _ = f.unlock();
    res
}

pub(crate) fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReportError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

impl RunStore {
    /// Creates a new run directory. Fails if `run.json` already exists.
    pub fn create(
        dir: &Path,
        config: &RunConfig,
        instances: &[ProblemInstance],
    ) -> Result<Self, ReportError> {
        for sub in ["episodes", "instances"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let manifest = RunManifest {
            schema_version: RUN_SCHEMA_VERSION,
            config_label: config.display_label(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            instance_ids: instances.iter().map(|i| i.id.clone()).collect(),
            config: config.clone(),
        };
        write_new(&dir.join(RUN_FILE), &to_pretty(&manifest))?;
        let store = Self {
            dir: dir.to_path_buf(),
        };
        for instance in instances {
            let path = store.instance_path(&instance.id)?;
            std::fs::write(&path, to_pretty(instance)).map_err(io_err(&path))?;
        }
        Ok(store)
    }

    pub fn open(dir: &Path) -> Result<Self, ReportError> {
        let run = dir.join(RUN_FILE);
        if !run.is_file() {
            return Err(ReportError::NotARunDir(dir.to_path_buf()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn session_log_path(&self) -> PathBuf {
        self.dir.join(SESSION_LOG_FILE)
    }

    pub fn manifest(&self) -> Result<RunManifest, ReportError> {
        let path = self.dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
            path,
            message: e.to_string(),
        })
    }

    fn checked(id: &str) -> Result<&str, ReportError> {
        if is_safe_id(id) {
            Ok(id)
        } else {
            Err(ReportError::UnsafeName(id.to_string()))
        }
    }

    fn instance_path(&self, id: &str) -> Result<PathBuf, ReportError> {
        Ok(self.dir.join("instances").join(format!("{}.json", Self::checked(id)?)))
    }

    pub fn episode_path(&self, episode_ref: &str) -> Result<PathBuf, ReportError> {
        Ok(self
            .dir
            .join("episodes")
            .join(format!("{}.json", Self::checked(episode_ref)?)))
    }

    pub fn load_instance(&self, id: &str) -> Result<ProblemInstance, ReportError> {
        let path = self.instance_path(id)?;
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
            path,
            message: e.to_string(),
        })
    }

    /// Writes an episode file once; a second write for the same episode fails.
    pub fn write_episode(&self, episode: &EpisodeResult) -> Result<PathBuf, ReportError> {
        let path = self.episode_path(&episode.episode_ref)?;
        write_new(&path, &to_pretty(episode))?;
        Ok(path)
    }

    pub fn has_episode(&self, episode_ref: &str) -> bool {
        self.episode_path(episode_ref).is_ok_and(|p| p.is_file())
    }

    /// Episode files as stored, without post-hoc verdicts, sorted by ref.
    pub fn load_raw_episodes(&self) -> Result<Vec<EpisodeResult>, ReportError> {
        let dir = self.dir.join("episodes");
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
                    path: p.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Episodes with the latest post-hoc verdict of each merged in.
    pub fn load_episodes(&self) -> Result<Vec<EpisodeResult>, ReportError> {
        let mut episodes = self.load_raw_episodes()?;
        let records: Vec<PostHocRecord> = read_lines(&self.dir.join(POSTHOC_FILE))?;
        for rec in records {
            if let Some(ep) = episodes.iter_mut().find(|e| e.episode_ref == rec.episode_ref) {
                ep.posthoc = Some(rec.verdict);
            }
        }
        Ok(episodes)
    }

    pub fn append_posthoc(&self, episode_ref: &str, verdict: &PostHocVerdict) -> Result<(), ReportError> {
        if !self.has_episode(episode_ref) {
            return Err(ReportError::UnknownEpisode(episode_ref.to_string()));
        }
        append_line(
            &self.dir.join(POSTHOC_FILE),
            &PostHocRecord {
                episode_ref: episode_ref.to_string(),
                validated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                verdict: verdict.clone(),
            },
        )
    }

    pub(crate) fn annotations_path(&self) -> PathBuf {
        self.dir.join(ANNOTATIONS_FILE)
    }
}

/// Loads the episodes of several run directories, in directory order.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<EpisodeResult>, ReportError> {
    let mut all = Vec::new();
    for d in dirs {
        all.extend(RunStore::open(d)?.load_episodes()?);
    }
    Ok(all)
}
