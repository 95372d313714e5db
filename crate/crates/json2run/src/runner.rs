//! Batch execution: schedules (configuration, repetition) jobs over a
//! bounded pool of worker threads, each spawning the solver as a child
//! process.
//!
//! Child-process protocol: the configuration is passed as separate command
//! line arguments (`--name value`, flags as bare `--name`, never through a
//! shell); a successful solver exits 0 and prints exactly one JSON object on
//! stdout whose fields become the experiment's statistics.
//!
//! Failed jobs do not abort the batch; they stay pending and are retried on
//! the next resume. Only the scheduler thread touches the store.

use std::collections::VecDeque;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};

use chrono::Utc;
use thiserror::Error;

use crate::expand::{expand, render_scalar, Configuration, ParamValue};
use crate::store::{
    new_batch_record, BatchKind, BatchRecord, ExperimentRecord, StoreHandle, StoreError,
    SCHEMA_VERSION,
};
use crate::tree::{parse_experiment, validate, ParamTree, TreeError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Expand(#[from] crate::expand::ExpandError),
    #[error("experiment file is invalid:\n{0}")]
    InvalidTree(String),
    #[error("batch `{0}` does not exist and no experiment file was given")]
    UnknownBatch(String),
    #[error("batch `{name}` already exists with a different {what}; refusing to redefine it")]
    Conflict { name: String, what: String },
    #[error("batch `{name}` differs in repetitions ({stored} stored, {given} given); use the set-repetitions action instead")]
    RepetitionsConflict {
        name: String,
        stored: u32,
        given: u32,
    },
    #[error("`{0}` is a race; use the run-race action")]
    IsARace(String),
    #[error("`{0}` is a batch; use the run-batch action")]
    IsABatch(String),
    #[error("cannot start executable `{executable}`: {source}")]
    Spawn {
        executable: String,
        source: std::io::Error,
    },
    #[error("configuration parameter `{0}` is an unsampled continuous interval")]
    Unrealized(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScmKind {
    Git,
    Mercurial,
}

impl std::str::FromStr for ScmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "git" => Ok(ScmKind::Git),
            "mercurial" => Ok(ScmKind::Mercurial),
            other => Err(format!("unknown scm `{other}` (expected git or mercurial)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("cannot run `{tool}`: {source}")]
    Launch {
        tool: &'static str,
        source: std::io::Error,
    },
    #[error("`{tool}` failed for `{dir}`: {message}")]
    Tool {
        tool: &'static str,
        dir: String,
        message: String,
    },
}

/// Asks the version-control tool for the current revision of `dir`.
pub fn scm_revision(kind: ScmKind, dir: &Path) -> Result<String, ScmError> {
    let (tool, args): (&'static str, Vec<String>) = match kind {
        ScmKind::Git => (
            "git",
            vec![
                "-C".into(),
                dir.to_string_lossy().into_owned(),
                "rev-parse".into(),
                "HEAD".into(),
            ],
        ),
        ScmKind::Mercurial => (
            "hg",
            vec![
                "--cwd".into(),
                dir.to_string_lossy().into_owned(),
                "id".into(),
                "-i".into(),
            ],
        ),
    };
    let output = Command::new(tool)
        .args(&args)
        .output()
        .map_err(|source| ScmError::Launch { tool, source })?;
    if !output.status.success() {
        return Err(ScmError::Tool {
            tool,
            dir: dir.display().to_string(),
            message: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    Ok(String::from_utf8_lossy(&output.stdout).trim().to_string())
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
}

pub(crate) fn hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "unknown".to_string())
}

/// What the caller passed on the command line; `None` means "not given, use
/// the stored value".
#[derive(Debug, Clone, Default)]
pub struct BatchRun {
    pub tree_text: Option<String>,
    pub executable: Option<String>,
    pub parallelism: Option<usize>,
    pub repetitions: Option<u32>,
    pub greedy: Option<bool>,
    pub scm: Option<ScmKind>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub executed: usize,
    pub reused: usize,
    pub skipped: usize,
    pub failed: usize,
    pub finished: bool,
}

pub(crate) struct ResolvedBatch {
    pub record: BatchRecord,
    pub tree: ParamTree,
    pub parallelism: usize,
    pub created: bool,
}

/// Loads an existing batch or creates a new one from the given run spec,
/// enforcing the conflict rules for resumes.
pub(crate) fn resolve_batch(
    store: &StoreHandle,
    name: &str,
    run: &BatchRun,
    kind: BatchKind,
    config_count: impl FnOnce(&ParamTree) -> Result<u64, RunnerError>,
) -> Result<ResolvedBatch, RunnerError> {
    let parallelism = run.parallelism.unwrap_or_else(default_parallelism).max(1);
    match store.get_batch(name) {
        Ok(record) => {
            match (record.kind, kind) {
                (BatchKind::Race, BatchKind::Batch) => {
                    return Err(RunnerError::IsARace(name.to_string()))
                }
                (BatchKind::Batch, BatchKind::Race) => {
                    return Err(RunnerError::IsABatch(name.to_string()))
                }
                _ => {}
            }
            let stored_tree = parse_experiment(&record.tree_text)?;
            if let Some(text) = &run.tree_text {
                let given = parse_experiment(text)?;
                if given != stored_tree {
                    return Err(RunnerError::Conflict {
                        name: name.to_string(),
                        what: "experiment tree".into(),
                    });
                }
            }
            if let Some(executable) = &run.executable {
                if *executable != record.executable {
                    return Err(RunnerError::Conflict {
                        name: name.to_string(),
                        what: "executable".into(),
                    });
                }
            }
            if let Some(reps) = run.repetitions {
                if reps != record.repetitions {
                    return Err(RunnerError::RepetitionsConflict {
                        name: name.to_string(),
                        stored: record.repetitions,
                        given: reps,
                    });
                }
            }
            let mut record = record;
            if let Some(greedy) = run.greedy {
                if greedy != record.greedy {
                    record.greedy = greedy;
                    store.update_batch(record.clone())?;
                }
            }
            Ok(ResolvedBatch {
                record,
                tree: stored_tree,
                parallelism,
                created: false,
            })
        }
        Err(StoreError::NotFound(_)) => {
            let (Some(tree_text), Some(executable)) = (&run.tree_text, &run.executable) else {
                return Err(RunnerError::UnknownBatch(name.to_string()));
            };
            let tree = parse_experiment(tree_text)?;
            let report = validate(&tree);
            if !report.is_valid() {
                return Err(RunnerError::InvalidTree(report.to_string()));
            }
            let count = config_count(&tree)?;
            let mut record = new_batch_record(
                name,
                kind,
                tree_text,
                executable,
                run.repetitions.unwrap_or(1),
                run.greedy.unwrap_or(false),
                count,
                &hostname(),
            );
            if let Some(scm) = run.scm {
                let dir = Path::new(executable)
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or_else(|| Path::new("."))
                    .to_path_buf();
                match scm_revision(scm, &dir) {
                    Ok(rev) => record.scm_revision = Some(rev),
                    Err(e) => log::warn!("could not record code revision: {e}"),
                }
            }
            Ok(ResolvedBatch {
                record,
                tree,
                parallelism,
                created: true,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Starts or resumes a batch. A fresh start needs the experiment tree and
/// the executable; a resume takes everything from the stored record.
pub fn run_batch(
    store: &StoreHandle,
    name: &str,
    run: &BatchRun,
) -> Result<RunSummary, RunnerError> {
    let resolved = resolve_batch(store, name, run, BatchKind::Batch, |tree| {
        Ok(expand(tree)?.count() as u64)
    })?;
    let configs: Vec<Configuration> = expand(&resolved.tree)?.collect();
    for config in &configs {
        if let Some((param, _)) = config
            .params()
            .iter()
            .find(|(_, v)| matches!(v, ParamValue::Interval { .. }))
        {
            return Err(RunnerError::Unrealized(param.clone()));
        }
    }
    let mut record = resolved.record;
    if resolved.created {
        record.config_count = configs.len() as u64;
        store.create_batch(record.clone())?;
    }

    let total_jobs = configs.len() * record.repetitions as usize;
    let mut pending = store.pending_experiments(name, &configs)?;
    let mut summary = RunSummary {
        skipped: total_jobs - pending.len(),
        ..RunSummary::default()
    };

    if record.greedy {
        let mut remaining = Vec::with_capacity(pending.len());
        for (i, rep) in pending {
            match store.find_reusable(&configs[i], &record.executable, rep) {
                Some(found) => {
                    store.adopt_experiment(found.id, name)?;
                    summary.reused += 1;
                }
                None => remaining.push((i, rep)),
            }
        }
        pending = remaining;
    }

    let jobs: Vec<Job> = pending
        .into_iter()
        .map(|(i, rep)| Job {
            config: configs[i].clone(),
            repetition: rep,
        })
        .collect();
    let outcome = run_jobs(store, name, &record.executable, jobs, resolved.parallelism)?;
    summary.executed = outcome.executed;
    summary.failed = outcome.failed;

    summary.finished = store.pending_experiments(name, &configs)?.is_empty();
    store.set_finished(name, summary.finished)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub config: Configuration,
    pub repetition: u32,
}

#[derive(Debug, Default)]
pub(crate) struct JobsOutcome {
    pub executed: usize,
    pub failed: usize,
}

/// Runs the jobs on at most `parallelism` concurrent child processes,
/// recording each result as it arrives. Spawn failures (missing executable)
/// abort the whole run.
pub(crate) fn run_jobs(
    store: &StoreHandle,
    batch: &str,
    executable: &str,
    jobs: Vec<Job>,
    parallelism: usize,
) -> Result<JobsOutcome, RunnerError> {
    let mut outcome = JobsOutcome::default();
    if jobs.is_empty() {
        return Ok(outcome);
    }
    let host = hostname();
    let workers = parallelism.max(1).min(jobs.len());
    let queue = Mutex::new(VecDeque::from(jobs));
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<ExperimentRecord, RunnerError>>();

    let mut fatal: Option<RunnerError> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let stop = &stop;
            let host = host.clone();
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let job = queue.lock().unwrap().pop_front();
                let Some(job) = job else { break };
                let result = execute_one(executable, &job.config, job.repetition, batch, &host);
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for result in rx {
            match result {
                Ok(record) => {
                    outcome.executed += 1;
                    if !record.is_success() {
                        outcome.failed += 1;
                        log::warn!(
                            "experiment failed (exit {}): {}",
                            record.exit_status,
                            record.diagnostic.as_deref().unwrap_or("no diagnostic")
                        );
                    } else {
                        log::info!(
                            "experiment done (repetition {}): {}",
                            record.repetition,
                            crate::expand::format_cll(&record.config).unwrap_or_default()
                        );
                    }
                    if let Err(e) = store.record_experiment(record) {
                        stop.store(true, Ordering::SeqCst);
                        queue.lock().unwrap().clear();
                        fatal.get_or_insert(e.into());
                    }
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    queue.lock().unwrap().clear();
                    fatal.get_or_insert(e);
                }
            }
        }
    });
    match fatal {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

/// Renders the configuration as argv tokens for the child process.
pub fn command_args(config: &Configuration) -> Result<Vec<String>, RunnerError> {
    let mut args = Vec::with_capacity(config.len() * 2);
    for (name, value) in config.params() {
        args.push(format!("--{name}"));
        match value {
            ParamValue::Flag => {}
            ParamValue::Scalar(s) => args.push(render_scalar(s)),
            ParamValue::Interval { .. } => return Err(RunnerError::Unrealized(name.clone())),
        }
    }
    Ok(args)
}

/// Spawns the executable for one job and turns the outcome into a record.
/// Nonzero exit or malformed stdout produce a failed record; only a spawn
/// failure is an error.
pub fn execute_one(
    executable: &str,
    config: &Configuration,
    repetition: u32,
    batch: &str,
    host: &str,
) -> Result<ExperimentRecord, RunnerError> {
    let args = command_args(config)?;
    let started_at = Utc::now();
    let output = Command::new(executable)
        .args(&args)
        .output()
        .map_err(|source| RunnerError::Spawn {
            executable: executable.to_string(),
            source,
        })?;
    let finished_at = Utc::now();
    let exit_status = output.status.code().unwrap_or(-1);
    let stdout = String::from_utf8_lossy(&output.stdout).to_string();

    let (stats, diagnostic) = if exit_status == 0 {
        match serde_json::from_str::<serde_json::Value>(stdout.trim()) {
            Ok(serde_json::Value::Object(map)) => (Some(map), None),
            Ok(_) => (
                None,
                Some(format!("stdout is not a JSON object: {}", stdout.trim())),
            ),
            Err(e) => (
                None,
                Some(format!("stdout is not valid JSON ({e}): {}", stdout.trim())),
            ),
        }
    } else {
        let stderr = String::from_utf8_lossy(&output.stderr);
        (
            None,
            Some(format!("exit status {exit_status}: {}", stderr.trim())),
        )
    };

    Ok(ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        id: 0,
        batch_names: vec![batch.to_string()],
        executable: executable.to_string(),
        config_key: config.normalized_key(),
        config: config.clone(),
        repetition,
        stats,
        diagnostic,
        exit_status,
        started_at,
        finished_at,
        host: host.to_string(),
    })
}
