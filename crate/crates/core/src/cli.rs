//! Command-line front end.
//!
//! Exit status: 0 success, 2 usage, 3 bad input (manifests, configs,
//! templates), 4 agent backend, 5 execution, 6 run store, 1 anything else.
//! Errors are also written to stderr as one JSON object per line:
//! `{"error":"<family>","message":"..."}`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::agent::{
    connect, generate_cve_guidance, rank_traces_via_agent, AgentBackendDescriptor, AgentError,
    GuidanceCache, LoggedAgent, SessionLog,
};
use crate::config::{load_run_config, ConfigError, Mode, Ranking, Retention, RunConfig};
use crate::exec::Runner;
use crate::instance::{check_unique_ids, load_instance, ManifestError, ProblemInstance};
use crate::prompt::{PromptBuilder, PromptError};
use crate::report::{
    aggregate_report, annotate, annotation_distribution, annotation_history, cost_records,
    format_costs, format_delimited, format_table, load_runs, GroupBy, ReportError, RunStore,
};
use crate::trace::{rank_traces, AdapterError, LogAdapter};
use crate::validation::{posthoc_validate, run_instances, EpisodeContext, InstanceRun, LoopError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_AGENT: i32 = 4;
pub const EXIT_EXEC: i32 = 5;
pub const EXIT_STORE: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "poc-harness", version, about = "Generate and validate PoC exploits with an LLM agent")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and check instance manifests.
    Ingest {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Print the trace ids a multi-trace run would use, best first.
    Rank {
        manifest: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        top_k: Option<usize>,
        /// similarity or agent
        #[arg(long, value_parser = parse_ranking)]
        ranking: Option<Ranking>,
    },
    /// Generate CVE guidance through the agent and cache it.
    Guidance {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Run the generation loop and write episodes to a run directory.
    Run(RunArgs),
    /// Check successful episodes against ground-truth locations.
    Posthoc { run_dir: PathBuf },
    /// Record a manual failure category for an episode.
    Annotate {
        run_dir: PathBuf,
        episode_ref: String,
        /// bad_validation, hardcoded, non_malicious, simulation, force_try,
        /// unrelated_description, unrelated_trace or valid
        category: String,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long)]
        annotator: Option<String>,
    },
    /// Aggregate one or more run directories into metric tables.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// cve, cwe or config
        #[arg(long, default_value = "config", value_parser = clap::builder::ValueParser::new(str::parse::<GroupBy>))]
        group_by: GroupBy,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Print per-episode wall time, attempts and cost instead.
        #[arg(long, conflicts_with = "annotations")]
        costs: bool,
        /// Print the annotation category distribution instead.
        #[arg(long)]
        annotations: bool,
    },
    /// Rewrite a raw instrumentation log into EVT lines using an adapter.
    Adapt { adapter: PathBuf, log: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Csv,
    Tsv,
    Table,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent backend: scripted:<dir> or remote:<url>.
    #[arg(long, value_parser = AgentBackendDescriptor::parse_shorthand)]
    agent: Option<AgentBackendDescriptor>,
    /// Model name sent to a remote backend.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    run_dir: PathBuf,
    /// no_trace or multi_trace
    #[arg(long, value_parser = clap::builder::ValueParser::new(str::parse::<Mode>))]
    mode: Option<Mode>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    /// Seconds; overrides every instance's timeout.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    stop_early: bool,
    #[arg(long)]
    parallel: Option<usize>,
    /// never, on_failure or always
    #[arg(long, value_parser = parse_retention)]
    keep_workspaces: Option<Retention>,
    /// Fill in missing CVE guidance from this cache, asking the agent on a miss.
    #[arg(long)]
    guidance_cache: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
}

fn parse_ranking(s: &str) -> Result<Ranking, String> {
    match s {
        "similarity" => Ok(Ranking::Similarity),
        "agent" => Ok(Ranking::Agent),
        _ => Err(format!("unknown ranking `{s}` (expected similarity or agent)")),
    }
}

fn parse_retention(s: &str) -> Result<Retention, String> {
    match s {
        "never" => Ok(Retention::Never),
        "on_failure" => Ok(Retention::OnFailure),
        "always" => Ok(Retention::Always),
        _ => Err(format!("unknown retention `{s}` (expected never, on_failure or always)")),
    }
}

/// An error with its exit-code family.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub family: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: i32, family: &'static str, message: impl ToString) -> Self {
        Self {
            code,
            family,
            message: message.to_string(),
        }
    }
}

macro_rules! family {
    ($ty:ty, $code:expr, $name:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($code, $name, e)
            }
        }
    };
}

family!(ManifestError, EXIT_INPUT, "input");
family!(ConfigError, EXIT_INPUT, "input");
family!(PromptError, EXIT_INPUT, "input");
family!(AdapterError, EXIT_INPUT, "input");
family!(AgentError, EXIT_AGENT, "agent");

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            // bad arguments, not a broken store
            ReportError::UnknownCategory(_) | ReportError::UnknownEpisode(_) | ReportError::UnsafeName(_) => {
                CliError::new(EXIT_INPUT, "input", e)
            }
            _ => CliError::new(EXIT_STORE, "store", e),
        }
    }
}

impl From<&LoopError> for CliError {
    fn from(e: &LoopError) -> Self {
        let (code, family) = match e {
            LoopError::Agent(_) => (EXIT_AGENT, "agent"),
            LoopError::Exec(_) => (EXIT_EXEC, "exec"),
            LoopError::Prompt(_) | LoopError::NoTraces(_) => (EXIT_INPUT, "input"),
        };
        CliError::new(code, family, e)
    }
}

fn report_error(e: &CliError) {
    eprintln!("{}", json!({"error": e.family, "message": e.message}));
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report_error(&e);
            e.code
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(agent) = &common.agent {
        config.agent = agent.clone();
    }
    if let Some(model) = &common.model {
        config.agent.model_name = Some(model.clone());
    }
    Ok(config)
}

fn load_instances(paths: &[PathBuf]) -> Result<Vec<ProblemInstance>, CliError> {
    let instances = paths
        .iter()
        .map(|p| load_instance(p))
        .collect::<Result<Vec<_>, _>>()?;
    check_unique_ids(&instances)?;
    Ok(instances)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { manifests } => {
            for inst in load_instances(&manifests)? {
                println!(
                    "{}\t{}\ttraces={}\tground_truth={}\thints={}",
                    inst.id,
                    inst.cwe_id,
                    inst.traces.len(),
                    inst.ground_truth.len(),
                    inst.hints.len()
                );
            }
            Ok(())
        }
        Command::Rank {
            manifest,
            common,
            top_k,
            ranking,
        } => {
            let mut config = load_config(&common)?;
            config.top_k = top_k.unwrap_or(config.top_k);
            config.ranking = ranking.unwrap_or(config.ranking);
            config.validate()?;
            let inst = load_instance(&manifest)?;
            let ids: Vec<String> = match config.ranking {
                Ranking::Similarity => rank_traces(&inst.traces, &inst.hints, config.top_k)
                    .into_iter()
                    .map(|t| t.trace_id)
                    .collect(),
                Ranking::Agent => {
                    let agent = connect(&config)?;
                    let builder = PromptBuilder::from_config(&config)?;
                    let ranking = rank_traces_via_agent(&agent, &builder, &inst, &inst.traces)?;
                    if ranking.fell_back {
                        log::warn!("agent ranking unusable; similarity order used");
                    }
                    ranking.order.into_iter().take(config.top_k).collect()
                }
            };
            for id in ids {
                println!("{id}");
            }
            Ok(())
        }
        Command::Guidance {
            manifests,
            common,
            cache,
        } => {
            let config = load_config(&common)?;
            let instances = load_instances(&manifests)?;
            let agent = connect(&config)?;
            let builder = PromptBuilder::from_config(&config)?;
            let cache = GuidanceCache::new(cache);
            for inst in &instances {
                let text = generate_cve_guidance(&agent, &builder, inst, &cache)?;
                println!("== {}\n{text}", inst.id);
            }
            Ok(())
        }
        Command::Run(args) => run_command(args),
        Command::Posthoc { run_dir } => posthoc_command(&run_dir),
        Command::Annotate {
            run_dir,
            episode_ref,
            category,
            note,
            annotator,
        } => {
            let store = RunStore::open(&run_dir)?;
            let annotator = annotator
                .or_else(|| std::env::var("USER").ok())
                .unwrap_or_else(|| "unknown".into());
            let a = annotate(&store, &episode_ref, &category, &note, &annotator)?;
            println!("{} {}", a.episode_ref, a.category);
            Ok(())
        }
        Command::Report {
            run_dirs,
            group_by,
            format,
            costs,
            annotations,
        } => {
            let sep = if format == Format::Tsv { b'\t' } else { b',' };
            if annotations {
                let mut history = Vec::new();
                for d in &run_dirs {
                    history.extend(annotation_history(&RunStore::open(d)?)?);
                }
                print!("{}", annotation_distribution(&history).to_delimited(sep as char));
                return Ok(());
            }
            let episodes = load_runs(&run_dirs)?;
            if costs {
                print!("{}", format_costs(&cost_records(&episodes), sep));
                return Ok(());
            }
            let rows = aggregate_report(&episodes, group_by);
            match format {
                Format::Table => print!("{}", format_table(&rows)),
                Format::Csv | Format::Tsv => print!("{}", format_delimited(&rows, sep)),
            }
            Ok(())
        }
        Command::Adapt { adapter, log } => {
            let adapter = LogAdapter::load(&adapter)?;
            let text = std::fs::read_to_string(&log)
                .map_err(|e| CliError::new(EXIT_INPUT, "input", format!("{}: {e}", log.display())))?;
            print!("{}", adapter.transform(&text));
            Ok(())
        }
    }
}

fn run_command(args: RunArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common)?;
    if let Some(m) = args.mode {
        config.mode = m;
    }
    config.top_k = args.top_k.unwrap_or(config.top_k);
    config.budget = args.budget.unwrap_or(config.budget);
    config.parallel = args.parallel.unwrap_or(config.parallel);
    config.timeout_seconds = args.timeout.or(config.timeout_seconds);
    config.stop_early |= args.stop_early;
    config.keep_workspaces = args.keep_workspaces.unwrap_or(config.keep_workspaces);
    if args.label.is_some() {
        config.label = args.label.clone();
    }
    config.validate()?;

    let mut instances = load_instances(&args.manifests)?;
    let builder = PromptBuilder::from_config(&config)?;
    let store = RunStore::create(&args.run_dir, &config, &instances)?;
    let log = SessionLog::open(&store.session_log_path())
        .map_err(|e| CliError::new(EXIT_STORE, "store", e))?;
    let agent = LoggedAgent::new(connect(&config)?, log);

    if let Some(dir) = &args.guidance_cache {
        let cache = GuidanceCache::new(dir);
        for inst in instances.iter_mut().filter(|i| i.cve_guidance.is_none()) {
            inst.cve_guidance = Some(generate_cve_guidance(&agent, &builder, inst, &cache)?);
        }
    }

    let runner = Runner::from_config(&config)?;
    let ctx = EpisodeContext {
        agent: &agent,
        runner: &runner,
        builder: &builder,
        config: &config,
    };
    let store_errors = std::sync::Mutex::new(Vec::new());
    let on_done = |run: &InstanceRun| {
        for ep in &run.episodes {
            if let Err(e) = store.write_episode(ep) {
                store_errors.lock().unwrap_or_else(|p| p.into_inner()).push(e);
            }
        }
        println!(
            "{}\t{}\tepisodes={}\tsucceeded={}",
            run.instance_id,
            config.mode.as_str(),
            run.episodes.len(),
            run.episodes.iter().filter(|e| e.succeeded).count()
        );
    };
    let runs = run_instances(ctx, &instances, &on_done);

    let mut errors: Vec<CliError> = store_errors
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(CliError::from)
        .collect();
    errors.extend(runs.iter().flat_map(|r| &r.errors).map(|(_, e)| CliError::from(e)));
    if config.workspace_root.is_none() && runner.root().exists() {
        let _ = std::fs::remove_dir_all(runner.root());
    }
    // the first error decides the exit status; the rest are only reported
    let mut errors = errors.into_iter();
    match errors.next() {
        Some(first) => {
            errors.for_each(|e| report_error(&e));
            Err(first)
        }
        None => Ok(()),
    }
}

fn posthoc_command(run_dir: &Path) -> Result<(), CliError> {
    let store = RunStore::open(run_dir)?;
    for ep in store.load_raw_episodes()?.iter().filter(|e| e.succeeded) {
        let inst = store.load_instance(&ep.instance_id)?;
        if !inst.posthoc_enabled {
            println!("{}\tskipped (post-hoc disabled)", ep.episode_ref);
            continue;
        }
        if inst.ground_truth.is_empty() {
            println!("{}\tskipped (no ground truth)", ep.episode_ref);
            continue;
        }
        let verdict = posthoc_validate(ep, &inst.ground_truth)
            .map_err(|e| CliError::new(EXIT_OTHER, "validation", e))?;
        store.append_posthoc(&ep.episode_ref, &verdict)?;
        let matched: Vec<String> = verdict
            .matched_locations
            .iter()
            .map(|l| l.qualified_method())
            .collect();
        println!(
            "{}\t{}\t{}",
            ep.episode_ref,
            if verdict.ground_truth_hit { "hit" } else { "miss" },
            matched.join(",")
        );
    }
    Ok(())
}
