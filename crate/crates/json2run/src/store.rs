//! Embedded document store for batches and experiments.
//!
//! A store is a directory holding two JSON-lines files:
//!
//! - `batches.jsonl` — one document per batch; updates append a new document
//!   for the same name and the loader keeps the last one; deletes and
//!   renames compact the file.
//! - `experiments.jsonl` — one document per experiment; adopting a record
//!   into another batch appends an updated document for the same id
//!   (last one wins).
//!
//! Writes flush line-by-line, so a killed runner loses at most the line it
//! was writing; the loader silently drops a torn trailing line. Timestamps
//! are ISO-8601 UTC and every document carries `schema_version: 1`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::expand::{render_scalar, Configuration, ParamValue};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store location `{0}` is not a directory")]
    NotADirectory(PathBuf),
    #[error("cannot access store file `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt store file `{path}` at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no batch named `{0}`")]
    NotFound(String),
    #[error("a batch named `{0}` already exists")]
    Conflict(String),
    #[error("batch `{0}` is not a race")]
    NotARace(String),
    #[error("no experiment with id {0}")]
    NoSuchExperiment(u64),
    #[error("batch `{name}` is a race and needs race options (or the converse)")]
    KindMismatch { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Batch,
    Race,
}

impl std::fmt::Display for BatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchKind::Batch => write!(f, "batch"),
            BatchKind::Race => write!(f, "race"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceOptionsRecord {
    pub instance_param: String,
    pub performance_param: String,
    pub seed: i64,
    pub confidence: f64,
}

/// Persisted racing progress. `performance` has one row per completed block
/// and one column per configuration; eliminated configurations keep their
/// historical columns but get no new entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceState {
    pub surviving: Vec<usize>,
    pub instance_order: Vec<ParamValue>,
    pub block_cursor: usize,
    pub performance: Vec<Vec<Option<f64>>>,
    /// Instance-free configurations, in their original indexing.
    pub configs: Vec<Configuration>,
    /// Where the instance parameter is re-inserted per configuration.
    pub instance_slots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub schema_version: u32,
    pub name: String,
    pub kind: BatchKind,
    pub tree_text: String,
    pub executable: String,
    pub repetitions: u32,
    pub greedy: bool,
    pub scm_revision: Option<String>,
    pub host: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub finished: bool,
    /// Jobs per repetition: configurations for a batch, configurations times
    /// instances for a race.
    pub config_count: u64,
    pub race_options: Option<RaceOptionsRecord>,
    pub race_state: Option<RaceState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub id: u64,
    pub batch_names: Vec<String>,
    pub executable: String,
    pub config: Configuration,
    /// Normalized name -> value map identifying the configuration for reuse.
    pub config_key: String,
    pub repetition: u32,
    pub stats: Option<serde_json::Map<String, Value>>,
    pub diagnostic: Option<String>,
    pub exit_status: i32,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub host: String,
}

impl ExperimentRecord {
    pub fn is_success(&self) -> bool {
        self.exit_status == 0 && self.stats.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub name: String,
    pub kind: BatchKind,
    pub host: String,
    pub finished: bool,
    pub completed: u64,
    pub total: u64,
}

struct State {
    batches: BTreeMap<String, BatchRecord>,
    experiments: BTreeMap<u64, ExperimentRecord>,
    next_id: u64,
}

/// Handle to an open store. Mutations are serialized through an internal
/// write lock; reads may run concurrently. Multi-process access is out of
/// scope: one runner owns a store directory at a time.
pub struct StoreHandle {
    dir: PathBuf,
    state: RwLock<State>,
}

/// Opens (or creates) the store in the given directory.
pub fn open_store(dir: impl AsRef<Path>) -> Result<StoreHandle, StoreError> {
    let dir = dir.as_ref().to_path_buf();
    if dir.exists() && !dir.is_dir() {
        return Err(StoreError::NotADirectory(dir));
    }
    fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
        path: dir.clone(),
        source,
    })?;
    let batches_path = dir.join("batches.jsonl");
    let experiments_path = dir.join("experiments.jsonl");

    let mut batches = BTreeMap::new();
    for rec in load_jsonl::<BatchRecord>(&batches_path)? {
        batches.insert(rec.name.clone(), rec);
    }
    let mut experiments = BTreeMap::new();
    for rec in load_jsonl::<ExperimentRecord>(&experiments_path)? {
        experiments.insert(rec.id, rec);
    }
    let next_id = experiments.keys().next_back().map_or(1, |max| max + 1);
    Ok(StoreHandle {
        dir,
        state: RwLock::new(State {
            batches,
            experiments,
            next_id,
        }),
    })
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(rec) => records.push(rec),
            // A torn final line is the footprint of a killed writer; any
            // other malformed line means real corruption.
            Err(e) if i + 1 == lines.len() => {
                log::warn!(
                    "dropping torn trailing line in {}: {e}",
                    path.display()
                );
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

fn append_line<T: Serialize>(path: &Path, record: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(record).expect("record serialization cannot fail");
    line.push('\n');
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    file.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn rewrite_file<T: Serialize>(path: &Path, records: &[&T]) -> Result<(), StoreError> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut text = String::new();
    for rec in records {
        text.push_str(&serde_json::to_string(rec).expect("record serialization cannot fail"));
        text.push('\n');
    }
    fs::write(&tmp, text).map_err(|source| StoreError::Io {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl StoreHandle {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn batches_path(&self) -> PathBuf {
        self.dir.join("batches.jsonl")
    }

    fn experiments_path(&self) -> PathBuf {
        self.dir.join("experiments.jsonl")
    }

    fn rewrite_batches(&self, state: &State) -> Result<(), StoreError> {
        let records: Vec<&BatchRecord> = state.batches.values().collect();
        rewrite_file(&self.batches_path(), &records)
    }

    fn rewrite_experiments(&self, state: &State) -> Result<(), StoreError> {
        let records: Vec<&ExperimentRecord> = state.experiments.values().collect();
        rewrite_file(&self.experiments_path(), &records)
    }

    pub fn create_batch(&self, record: BatchRecord) -> Result<(), StoreError> {
        if (record.kind == BatchKind::Race) != record.race_options.is_some() {
            return Err(StoreError::KindMismatch { name: record.name });
        }
        let mut state = self.state.write().unwrap();
        if state.batches.contains_key(&record.name) {
            return Err(StoreError::Conflict(record.name));
        }
        append_line(&self.batches_path(), &record)?;
        state.batches.insert(record.name.clone(), record);
        Ok(())
    }

    pub fn get_batch(&self, name: &str) -> Result<BatchRecord, StoreError> {
        self.state
            .read()
            .unwrap()
            .batches
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(name.to_string()))
    }

    /// Replaces the stored record with the same name and bumps `updated_at`.
    pub fn update_batch(&self, mut record: BatchRecord) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        if !state.batches.contains_key(&record.name) {
            return Err(StoreError::NotFound(record.name));
        }
        record.updated_at = Utc::now();
        state.batches.insert(record.name.clone(), record);
        self.rewrite_batches(&state)
    }

    pub fn rename_batch(&self, old: &str, new: &str) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        if state.batches.contains_key(new) {
            return Err(StoreError::Conflict(new.to_string()));
        }
        let mut record = state
            .batches
            .remove(old)
            .ok_or_else(|| StoreError::NotFound(old.to_string()))?;
        record.name = new.to_string();
        record.updated_at = Utc::now();
        state.batches.insert(new.to_string(), record);
        for rec in state.experiments.values_mut() {
            for name in rec.batch_names.iter_mut() {
                if name == old {
                    *name = new.to_string();
                }
            }
        }
        self.rewrite_batches(&state)?;
        self.rewrite_experiments(&state)
    }

    /// Deletes the batch, detaches it from shared experiments, and removes
    /// experiments that belonged to no other batch.
    pub fn delete_batch(&self, name: &str) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        if state.batches.remove(name).is_none() {
            return Err(StoreError::NotFound(name.to_string()));
        }
        state.experiments.retain(|_, rec| {
            rec.batch_names.retain(|n| n != name);
            !rec.batch_names.is_empty()
        });
        self.rewrite_batches(&state)?;
        self.rewrite_experiments(&state)
    }

    pub fn set_repetitions(&self, name: &str, repetitions: u32) -> Result<(), StoreError> {
        let mut record = self.get_batch(name)?;
        if repetitions > record.repetitions {
            record.finished = false;
        }
        record.repetitions = repetitions;
        self.update_batch(record)
    }

    pub fn mark_unfinished(&self, name: &str) -> Result<(), StoreError> {
        let mut record = self.get_batch(name)?;
        record.finished = false;
        self.update_batch(record)
    }

    pub fn set_finished(&self, name: &str, finished: bool) -> Result<(), StoreError> {
        let mut record = self.get_batch(name)?;
        record.finished = finished;
        self.update_batch(record)
    }

    pub fn list_batches(&self) -> Vec<BatchSummary> {
        let state = self.state.read().unwrap();
        state
            .batches
            .values()
            .map(|b| BatchSummary {
                name: b.name.clone(),
                kind: b.kind,
                host: b.host.clone(),
                finished: b.finished,
                completed: completed_in(&state, &b.name),
                total: b.config_count * b.repetitions as u64,
            })
            .collect()
    }

    /// Distinct (configuration, repetition) pairs with a successful record.
    pub fn completed_count(&self, name: &str) -> u64 {
        completed_in(&self.state.read().unwrap(), name)
    }

    pub fn record_experiment(&self, mut record: ExperimentRecord) -> Result<u64, StoreError> {
        let mut state = self.state.write().unwrap();
        let id = state.next_id;
        state.next_id += 1;
        record.id = id;
        append_line(&self.experiments_path(), &record)?;
        state.experiments.insert(id, record);
        Ok(id)
    }

    /// Adds `batch_name` to an existing experiment (greedy reuse).
    pub fn adopt_experiment(&self, id: u64, batch_name: &str) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        let record = state
            .experiments
            .get_mut(&id)
            .ok_or(StoreError::NoSuchExperiment(id))?;
        if !record.batch_names.iter().any(|n| n == batch_name) {
            record.batch_names.push(batch_name.to_string());
        }
        let line_rec = record.clone();
        append_line(&self.experiments_path(), &line_rec)
    }

    /// Finds a successful record with the same normalized configuration,
    /// executable and repetition index, regardless of owning batch.
    pub fn find_reusable(
        &self,
        config: &Configuration,
        executable: &str,
        repetition: u32,
    ) -> Option<ExperimentRecord> {
        let key = config.normalized_key();
        let state = self.state.read().unwrap();
        state
            .experiments
            .values()
            .find(|rec| {
                rec.is_success()
                    && rec.executable == executable
                    && rec.repetition == repetition
                    && rec.config_key == key
            })
            .cloned()
    }

    /// Finds a successful record of `batch` for the given configuration key
    /// and repetition.
    pub fn find_in_batch(
        &self,
        batch: &str,
        config_key: &str,
        repetition: u32,
    ) -> Option<ExperimentRecord> {
        let state = self.state.read().unwrap();
        state
            .experiments
            .values()
            .find(|rec| {
                rec.is_success()
                    && rec.repetition == repetition
                    && rec.config_key == config_key
                    && rec.batch_names.iter().any(|n| n == batch)
            })
            .cloned()
    }

    /// All records of a batch, in recording order.
    pub fn experiments_of(&self, batch: &str) -> Vec<ExperimentRecord> {
        let state = self.state.read().unwrap();
        state
            .experiments
            .values()
            .filter(|rec| rec.batch_names.iter().any(|n| n == batch))
            .cloned()
            .collect()
    }

    /// The (configuration index, repetition) jobs of the batch that have no
    /// successful record yet, in dispatch order (repetitions innermost).
    pub fn pending_experiments(
        &self,
        batch: &str,
        configs: &[Configuration],
    ) -> Result<Vec<(usize, u32)>, StoreError> {
        let record = self.get_batch(batch)?;
        let state = self.state.read().unwrap();
        let done: std::collections::HashSet<(String, u32)> = state
            .experiments
            .values()
            .filter(|rec| rec.is_success() && rec.batch_names.iter().any(|n| n == batch))
            .map(|rec| (rec.config_key.clone(), rec.repetition))
            .collect();
        let mut pending = Vec::new();
        for (i, config) in configs.iter().enumerate() {
            let key = config.normalized_key();
            for rep in 0..record.repetitions {
                if !done.contains(&(key.clone(), rep)) {
                    pending.push((i, rep));
                }
            }
        }
        Ok(pending)
    }

    /// Dumps all experiment data of a batch as a CSV table: parameter
    /// columns, then statistic columns, then bookkeeping columns, plus a
    /// `winning` column for races.
    pub fn dump_csv(&self, name: &str) -> Result<String, StoreError> {
        let batch = self.get_batch(name)?;
        let records = self.experiments_of(name);

        let mut param_names: Vec<String> = Vec::new();
        let mut stat_names: Vec<String> = Vec::new();
        for rec in &records {
            for (param, _) in rec.config.params() {
                if !param_names.iter().any(|p| p == param) {
                    param_names.push(param.clone());
                }
            }
            if let Some(stats) = &rec.stats {
                for stat in stats.keys() {
                    if !stat_names.iter().any(|s| s == stat) {
                        stat_names.push(stat.clone());
                    }
                }
            }
        }

        let survivors: Option<(std::collections::HashMap<String, usize>, &RaceState, &str)> =
            match (&batch.race_state, &batch.race_options) {
                (Some(state), Some(options)) => {
                    let index: std::collections::HashMap<String, usize> = state
                        .configs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| (c.normalized_key(), i))
                        .collect();
                    Some((index, state, options.instance_param.as_str()))
                }
                _ => None,
            };

        let mut header: Vec<String> = Vec::new();
        header.extend(param_names.iter().cloned());
        header.extend(stat_names.iter().cloned());
        header.extend(
            ["repetition", "host", "started_at", "exit_status"]
                .iter()
                .map(|s| s.to_string()),
        );
        if survivors.is_some() {
            header.push("winning".to_string());
        }

        let mut out = String::new();
        out.push_str(&crate::expand::csv_line(&header));
        out.push('\n');
        for rec in &records {
            let mut cells: Vec<String> = Vec::with_capacity(header.len());
            for param in &param_names {
                cells.push(match rec.config.get(param) {
                    None => String::new(),
                    Some(ParamValue::Flag) => "true".to_string(),
                    Some(ParamValue::Scalar(s)) => render_scalar(s),
                    Some(ParamValue::Interval { min, max }) => format!("[{min:?}, {max:?}]"),
                });
            }
            for stat in &stat_names {
                cells.push(match rec.stats.as_ref().and_then(|s| s.get(stat)) {
                    None => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                });
            }
            cells.push(rec.repetition.to_string());
            cells.push(rec.host.clone());
            cells.push(rec.started_at.to_rfc3339());
            cells.push(rec.exit_status.to_string());
            if let Some((index, state, instance_param)) = &survivors {
                let key = rec.config.normalized_key_excluding(instance_param);
                let winning = index
                    .get(&key)
                    .map(|i| state.surviving.contains(i))
                    .unwrap_or(false);
                cells.push(winning.to_string());
            }
            out.push_str(&crate::expand::csv_line(&cells));
            out.push('\n');
        }
        Ok(out)
    }
}

fn completed_in(state: &State, batch: &str) -> u64 {
    let distinct: std::collections::HashSet<(&str, u32)> = state
        .experiments
        .values()
        .filter(|rec| rec.is_success() && rec.batch_names.iter().any(|n| n == batch))
        .map(|rec| (rec.config_key.as_str(), rec.repetition))
        .collect();
    distinct.len() as u64
}

/// Convenience constructor filling in bookkeeping fields.
pub fn new_batch_record(
    name: &str,
    kind: BatchKind,
    tree_text: &str,
    executable: &str,
    repetitions: u32,
    greedy: bool,
    config_count: u64,
    host: &str,
) -> BatchRecord {
    let now = Utc::now();
    BatchRecord {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        kind,
        tree_text: tree_text.to_string(),
        executable: executable.to_string(),
        repetitions,
        greedy,
        scm_revision: None,
        host: host.to_string(),
        created_at: now,
        updated_at: now,
        finished: false,
        config_count,
        race_options: None,
        race_state: None,
    }
}
