//! Compiles and runs PoC candidates through the project's command templates.
//!
//! Each attempt gets a scratch directory `<root>/<instance_id>/<digest>`
//! named by the candidate's content hash. Build and run commands are
//! materialized from the instance's templates and executed through the
//! configured shell with stdout and stderr merged into one pipe, under the
//! instance timeout. The dynamic trace comes from the instrumentation log
//! file if the run wrote one, otherwise from `EVT` lines in the output.
//!
//! This runs untrusted exploit code with the harness user's privileges. Any
//! containment beyond a process group and a timeout is the operator's job.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::PocCandidate;
use crate::config::{Retention, RunConfig};
use crate::instance::{
    ProblemInstance, ProjectMeta, LOG_PLACEHOLDER, POC_PLACEHOLDER, WORKSPACE_PLACEHOLDER,
};
use crate::trace::{parse_dynamic_log, DynamicTrace, LogAdapter, EVENT_PREFIX};

/// Exit code recorded for runs killed by the timeout. Real exit codes are
/// 0..=255, and signal deaths are recorded as 128 + signal.
pub const TIMEOUT_EXIT_CODE: i32 = -1;

/// Appended to captured output that hit the byte cap.
pub const TRUNCATION_MARKER: &str = "\n[harness: output truncated]\n";

const DEFAULT_LOG_NAME: &str = "instrumentation.log";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("workspace error at {path}: {source}")]
    WorkspaceError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot spawn `{program}`: {source}")]
    CommandSpawnError {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("command template has no {POC_PLACEHOLDER} placeholder: `{0}`")]
    MissingPlaceholder(String),
    #[error("empty candidate source")]
    EmptyCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output: String,
    #[serde(default)]
    pub output_truncated: bool,
    pub dynamic_trace: DynamicTrace,
    pub wall_time_ms: u64,
    pub timed_out: bool,
    /// Scratch directory, while it still exists.
    #[serde(skip)]
    pub workspace: Option<PathBuf>,
}

/// Paths substituted into command templates.
#[derive(Debug, Clone)]
pub struct CommandPaths {
    pub poc: PathBuf,
    pub workspace: PathBuf,
    pub log: PathBuf,
}

impl CommandPaths {
    /// Workspace is the PoC's directory; the log sits next to it.
    pub fn for_poc(poc: impl Into<PathBuf>) -> Self {
        let poc = poc.into();
        let workspace = poc.parent().map(Path::to_path_buf).unwrap_or_default();
        let log = workspace.join(DEFAULT_LOG_NAME);
        Self { poc, workspace, log }
    }
}

fn substitute(template: &str, paths: &CommandPaths) -> String {
    template
        .replace(POC_PLACEHOLDER, &paths.poc.to_string_lossy())
        .replace(WORKSPACE_PLACEHOLDER, &paths.workspace.to_string_lossy())
        .replace(LOG_PLACEHOLDER, &paths.log.to_string_lossy())
}

/// The run command with every placeholder occurrence replaced. Paths are
/// inserted unquoted.
pub fn materialize_command(meta: &ProjectMeta, paths: &CommandPaths) -> Result<String, ExecError> {
    if !meta.run_command_template.contains(POC_PLACEHOLDER) {
        return Err(ExecError::MissingPlaceholder(meta.run_command_template.clone()));
    }
    Ok(substitute(&meta.run_command_template, paths))
}

/// The build command, or `None` when the template is blank.
pub fn materialize_build_command(meta: &ProjectMeta, paths: &CommandPaths) -> Option<String> {
    let t = meta.build_script_template.trim();
    (!t.is_empty()).then(|| substitute(t, paths))
}

/// Counting semaphore bounding concurrent child processes.
#[derive(Debug)]
pub struct ProcessLimiter {
    available: Mutex<usize>,
    cond: Condvar,
}

pub struct ProcessPermit<'a>(&'a ProcessLimiter);

impl ProcessLimiter {
    pub fn new(slots: usize) -> Self {
        Self {
            available: Mutex::new(slots.max(1)),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> ProcessPermit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        ProcessPermit(self)
    }
}

impl Drop for ProcessPermit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cond.notify_one();
    }
}

/// Executes candidates. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Runner {
    root: PathBuf,
    shell: Vec<String>,
    limiter: Arc<ProcessLimiter>,
    adapter: Option<LogAdapter>,
}

impl Runner {
    pub fn new(root: impl Into<PathBuf>, max_processes: usize) -> Self {
        Self {
            root: root.into(),
            shell: vec!["sh".into(), "-c".into()],
            limiter: Arc::new(ProcessLimiter::new(max_processes)),
            adapter: None,
        }
    }

    pub fn from_config(config: &RunConfig) -> Result<Self, crate::trace::AdapterError> {
        let root = config.workspace_root.clone().unwrap_or_else(|| {
            std::env::temp_dir().join(format!("poc-harness-{}", std::process::id()))
        });
        let mut runner = Self::new(root, config.max_processes);
        if let Some(path) = &config.log_adapter {
            runner.adapter = Some(LogAdapter::load(path)?);
        }
        Ok(runner)
    }

    /// Program and leading arguments used to run a command line.
    pub fn with_shell(mut self, shell: Vec<String>) -> Self {
        self.shell = shell;
        self
    }

    pub fn with_adapter(mut self, adapter: LogAdapter) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_candidate(
        &self,
        instance: &ProblemInstance,
        candidate: &PocCandidate,
        config: &RunConfig,
    ) -> Result<RunOutcome, ExecError> {
        if candidate.source_text.trim().is_empty() {
            return Err(ExecError::EmptyCandidate);
        }
        let digest = hex::encode(Sha256::digest(candidate.source_text.as_bytes()));
        let workspace = self.root.join(&instance.id).join(&digest[..16]);
        let ws_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExecError::WorkspaceError { path, source }
        };
        if workspace.exists() {
            std::fs::remove_dir_all(&workspace).map_err(ws_err(&workspace))?;
        }
        std::fs::create_dir_all(&workspace).map_err(ws_err(&workspace))?;
        let workspace = std::path::absolute(&workspace).map_err(ws_err(&workspace))?;

        let stem = candidate
            .declared_entry
            .clone()
            .unwrap_or_else(|| config.poc.default_entry.clone());
        let poc = workspace.join(format!("{stem}.{}", config.poc.file_extension));
        std::fs::write(&poc, &candidate.source_text).map_err(ws_err(&poc))?;

        let mut paths = CommandPaths::for_poc(&poc);
        if let Some(t) = &instance.meta.instrumentation_log {
            paths.log = PathBuf::from(substitute(t, &paths));
        }
        let run_cmd = materialize_command(&instance.meta, &paths)?;
        let build_cmd = materialize_build_command(&instance.meta, &paths);
        let cwd = instance.project_dir.clone().unwrap_or_else(|| workspace.clone());
        let timeout =
            Duration::from_secs(config.timeout_seconds.unwrap_or(instance.meta.timeout_seconds));

        let started = Instant::now();
        let deadline = started + timeout;
        let mut capture = Capture::new(config.output_cap_bytes);
        let status = {
            let _permit = self.limiter.acquire();
            let mut status = Status::Exited(0);
            for cmd in build_cmd.iter().chain(std::iter::once(&run_cmd)) {
                let (st, cap) = self.execute(cmd, &cwd, &paths, deadline, capture)?;
                status = st;
                capture = cap;
                if status != Status::Exited(0) {
                    break;
                }
            }
            status
        };
        let wall_time_ms = started.elapsed().as_millis() as u64;

        let dynamic_trace = match std::fs::read_to_string(&paths.log) {
            Ok(log) => match &self.adapter {
                Some(adapter) => adapter.parse(&log),
                None => parse_dynamic_log(&log),
            },
            Err(_) => parse_dynamic_log(&capture.event_lines),
        };
        let (exit_code, timed_out) = match status {
            Status::Exited(code) => (code, false),
            Status::TimedOut => (TIMEOUT_EXIT_CODE, true),
        };
        let (output, output_truncated) = capture.finish();

        let mut outcome = RunOutcome {
            exit_code,
            output,
            output_truncated,
            dynamic_trace,
            wall_time_ms,
            timed_out,
            workspace: Some(workspace),
        };
        if config.keep_workspaces == Retention::Never {
            release_workspace(&mut outcome, false, Retention::Never);
        }
        Ok(outcome)
    }

    fn execute(
        &self,
        cmd_line: &str,
        cwd: &Path,
        paths: &CommandPaths,
        deadline: Instant,
        capture: Capture,
    ) -> Result<(Status, Capture), ExecError> {
        let (program, args) = self
            .shell
            .split_first()
            .map(|(p, a)| (p.clone(), a.to_vec()))
            .unwrap_or_else(|| ("sh".into(), vec!["-c".into()]));
        let spawn_err = |source| ExecError::CommandSpawnError {
            program: program.clone(),
            source,
        };
        let (reader, writer) = std::io::pipe().map_err(spawn_err)?;
        let writer_err = writer.try_clone().map_err(spawn_err)?;
        let mut command = Command::new(&program);
        command
            .args(&args)
            .arg(cmd_line)
            .current_dir(cwd)
            .env("POC_HARNESS_POC", &paths.poc)
            .env("POC_HARNESS_WORKSPACE", &paths.workspace)
            .env("POC_HARNESS_LOG", &paths.log)
            .stdin(Stdio::null())
            .stdout(writer)
            .stderr(writer_err);
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            command.process_group(0);
        }
        let spawned = command.spawn();
        // the parent's copies of the pipe's write end must go before reading
        drop(command);
        let mut child = spawned.map_err(spawn_err)?;

        let reader_thread = std::thread::spawn(move || {
            let mut capture = capture;
            capture.read_from(reader);
            capture
        });
        let waited = wait_until(&mut child, deadline);
        // also reaps background processes that would keep the pipe open
        kill_group(&mut child);
        let capture = reader_thread
            .join()
            .expect("output reader thread does not panic");
        let status = match waited {
            Ok(Some(st)) => Status::Exited(exit_code(st)),
            Ok(None) => Status::TimedOut,
            Err(e) => {
                return Err(ExecError::WorkspaceError {
                    path: cwd.to_path_buf(),
                    source: e,
                })
            }
        };
        Ok((status, capture))
    }
}

/// Deletes the outcome's workspace unless the retention policy keeps it.
pub fn release_workspace(outcome: &mut RunOutcome, valid: bool, retention: Retention) {
    let keep = match retention {
        Retention::Always => true,
        Retention::OnFailure => !valid,
        Retention::Never => false,
    };
    if keep {
        return;
    }
    if let Some(ws) = outcome.workspace.take() {
        if let Err(e) = std::fs::remove_dir_all(&ws) {
            log::warn!("cannot remove workspace {}: {e}", ws.display());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Exited(i32),
    TimedOut,
}

fn exit_code(status: ExitStatus) -> i32 {
    if let Some(code) = status.code() {
        return code;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    1
}

fn wait_until(child: &mut Child, deadline: Instant) -> std::io::Result<Option<ExitStatus>> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(10)));
    }
}

fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    {
        let pgid = child.id() as libc::pid_t;
        // SAFETY: kill(2) with a negative pid signals the process group we
        // created for this child; it has no memory-safety preconditions.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Output kept up to a byte cap, plus every event line regardless of the cap.
struct Capture {
    cap: usize,
    kept: Vec<u8>,
    truncated: bool,
    event_lines: String,
}

impl Capture {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            kept: Vec::new(),
            truncated: false,
            event_lines: String::new(),
        }
    }

    fn read_from(&mut self, reader: impl Read) {
        let mut reader = BufReader::new(reader);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => self.push(&buf),
            }
        }
    }

    fn push(&mut self, line: &[u8]) {
        let room = self.cap.saturating_sub(self.kept.len());
        if line.len() <= room {
            self.kept.extend_from_slice(line);
        } else {
            self.kept.extend_from_slice(&line[..room]);
            self.truncated = true;
        }
        let text = String::from_utf8_lossy(line);
        if text.trim_start().starts_with(EVENT_PREFIX) {
            self.event_lines.push_str(text.trim_end());
            self.event_lines.push('\n');
        }
    }

    fn finish(self) -> (String, bool) {
        let mut out = String::from_utf8_lossy(&self.kept).into_owned();
        if self.truncated {
            out.push_str(TRUNCATION_MARKER);
        }
        (out, self.truncated)
    }
}
