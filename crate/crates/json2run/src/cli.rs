//! The `j2r` command line: argument parsing, action dispatch, logging.
//!
//! Options are flag-driven (`--action run-batch`), with multi-character
//! short names (`-ip`, `-pp`, `-dh`, ...) matched exactly, which is why the
//! parser is hand-rolled. Stdout carries only data (command lines, CSV,
//! JSON); log messages go to stderr or to `--log-file`. Exit codes: 0 on
//! success, 1 on domain errors, 2 on usage errors.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use log::LevelFilter;
use serde_json::{json, Value};
use thiserror::Error;

use crate::expand::{expand, format_cll, format_csv};
use crate::race::{run_race, show_winning, RaceError, RaceRun};
use crate::runner::{run_batch, BatchRun, RunnerError, ScmKind};
use crate::store::{open_store, StoreError, StoreHandle};
use crate::tree::{parse_experiment, validate, TreeError};

#[derive(Debug, Error)]
pub enum UsageError {
    #[error("unknown option `{0}`")]
    UnknownFlag(String),
    #[error("option `{0}` needs a value")]
    MissingValue(String),
    #[error("unexpected argument `{0}`")]
    UnexpectedArgument(String),
    #[error("invalid value `{value}` for `{flag}`: {message}")]
    InvalidValue {
        flag: String,
        value: String,
        message: String,
    },
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` requires `{flag}`")]
    MissingFlag {
        action: &'static str,
        flag: &'static str,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Expand(#[from] crate::expand::ExpandError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Race(#[from] RaceError),
    #[error("cannot read `{path}`: {source}")]
    Input {
        path: String,
        source: std::io::Error,
    },
    #[error("experiment file is invalid:\n{0}")]
    InvalidTree(String),
    #[error(
        "remote database backends are not available in this build; \
         unset --db-host/--db-port to use the embedded file store"
    )]
    ServerBackend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    PrintCll,
    PrintCsv,
    RunBatch,
    RunRace,
    ListBatches,
    DeleteBatch,
    BatchInfo,
    RenameBatch,
    ShowWinning,
    SetRepetitions,
    DumpExperiments,
    MarkUnfinished,
}

impl Action {
    fn from_name(name: &str) -> Option<Action> {
        Some(match name {
            "print-cll" => Action::PrintCll,
            "print-csv" => Action::PrintCsv,
            "run-batch" => Action::RunBatch,
            "run-race" => Action::RunRace,
            "list-batches" => Action::ListBatches,
            "delete-batch" => Action::DeleteBatch,
            "batch-info" => Action::BatchInfo,
            "rename-batch" => Action::RenameBatch,
            "show-winning" => Action::ShowWinning,
            "set-repetitions" => Action::SetRepetitions,
            "dump-experiments" => Action::DumpExperiments,
            "mark-unfinished" => Action::MarkUnfinished,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Action::PrintCll => "print-cll",
            Action::PrintCsv => "print-csv",
            Action::RunBatch => "run-batch",
            Action::RunRace => "run-race",
            Action::ListBatches => "list-batches",
            Action::DeleteBatch => "delete-batch",
            Action::BatchInfo => "batch-info",
            Action::RenameBatch => "rename-batch",
            Action::ShowWinning => "show-winning",
            Action::SetRepetitions => "set-repetitions",
            Action::DumpExperiments => "dump-experiments",
            Action::MarkUnfinished => "mark-unfinished",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DbOptions {
    pub host: String,
    pub database: String,
    pub user: String,
    pub pass: String,
    pub port: Option<u16>,
}

#[derive(Debug, Clone)]
pub struct CliInvocation {
    pub action: Action,
    pub input: Option<String>,
    pub batch_name: Option<String>,
    pub new_name: Option<String>,
    pub executable: Option<String>,
    pub parallelism: Option<usize>,
    pub repetitions: Option<u32>,
    pub greedy: Option<bool>,
    pub instance_param: Option<String>,
    pub performance_param: Option<String>,
    pub seed: Option<i64>,
    pub confidence: Option<f64>,
    pub db: DbOptions,
    pub log_file: Option<String>,
    pub log_level: LevelFilter,
    pub scm: Option<ScmKind>,
}

struct FlagDef {
    long: &'static str,
    short: Option<&'static str>,
    value: Option<&'static str>,
    help: &'static str,
}

const FLAGS: &[FlagDef] = &[
    FlagDef { long: "input", short: Some("i"), value: Some("FILE"), help: "JSON experiment file" },
    FlagDef { long: "action", short: Some("a"), value: Some("ACTION"), help: "what to do (default: print-cll)" },
    FlagDef { long: "batch-name", short: Some("n"), value: Some("NAME"), help: "batch or race name (the key on the store)" },
    FlagDef { long: "new-name", short: None, value: Some("NAME"), help: "new name for rename-batch" },
    FlagDef { long: "executable", short: Some("e"), value: Some("PATH"), help: "solver executable to run" },
    FlagDef { long: "parallel-threads", short: Some("p"), value: Some("N"), help: "maximum concurrent solver processes (default: number of cores)" },
    FlagDef { long: "repetitions", short: Some("r"), value: Some("N"), help: "repetitions of each experiment (default: 1)" },
    FlagDef { long: "greedy", short: Some("g"), value: Some("true|false"), help: "reuse matching experiments from other batches (default: false)" },
    FlagDef { long: "instance-param", short: Some("ip"), value: Some("NAME"), help: "parameter that designates the instance (races)" },
    FlagDef { long: "performance-param", short: Some("pp"), value: Some("NAME"), help: "solver statistic used to compare configurations (races)" },
    FlagDef { long: "seed", short: Some("s"), value: Some("N"), help: "seed for shuffling instances (default: 0)" },
    FlagDef { long: "confidence", short: None, value: Some("ALPHA"), help: "significance level for the race tests (default: 0.05)" },
    FlagDef { long: "db-host", short: Some("dh"), value: Some("HOST"), help: "database host (default: localhost)" },
    FlagDef { long: "db-database", short: Some("dd"), value: Some("NAME"), help: "database name, doubles as the store directory (default: j2r)" },
    FlagDef { long: "db-user", short: Some("du"), value: Some("USER"), help: "database user (default: j2r)" },
    FlagDef { long: "db-pass", short: Some("dx"), value: Some("PASS"), help: "database password (default: j2r)" },
    FlagDef { long: "db-port", short: Some("dp"), value: Some("PORT"), help: "database port" },
    FlagDef { long: "log-file", short: None, value: Some("FILE"), help: "write the log here instead of stderr" },
    FlagDef { long: "log-level", short: None, value: Some("LEVEL"), help: "warning, error or info (default: info)" },
    FlagDef { long: "scm", short: None, value: Some("KIND"), help: "record the code revision via git or mercurial" },
    FlagDef { long: "help", short: Some("h"), value: None, help: "print this summary" },
];

const ACTIONS: &[(&str, &str)] = &[
    ("print-cll", "print the generated configurations as command lines (default)"),
    ("print-csv", "print the generated configurations as a CSV table"),
    ("run-batch", "start or resume a batch of experiments"),
    ("run-race", "start or resume a race among the configurations"),
    ("list-batches", "list stored batches with summary information"),
    ("delete-batch", "delete a batch and its unshared experiments"),
    ("batch-info", "print detailed batch information as JSON"),
    ("rename-batch", "rename a batch"),
    ("show-winning", "print the winning configurations of a race"),
    ("set-repetitions", "change the repetition count of a batch"),
    ("dump-experiments", "dump all experiment data of a batch as CSV"),
    ("mark-unfinished", "mark a batch unfinished so it can be restarted"),
];

pub fn usage() -> String {
    let mut out = String::from("usage: j2r [options]\n\nactions (via --action/-a):\n");
    for (name, help) in ACTIONS {
        out.push_str(&format!("  {name:<18} {help}\n"));
    }
    out.push_str("\noptions:\n");
    for flag in FLAGS {
        let mut left = String::new();
        if let Some(short) = flag.short {
            left.push_str(&format!("-{short}, "));
        }
        left.push_str(&format!("--{}", flag.long));
        if let Some(metavar) = flag.value {
            left.push_str(&format!(" <{metavar}>"));
        }
        out.push_str(&format!("  {left:<36} {}\n", flag.help));
    }
    out.push_str(
        "\nenvironment:\n  J2R_STORE_DIR    directory of the embedded store (overrides --db-database)\n",
    );
    out
}

enum Parsed {
    Help,
    Invocation(CliInvocation),
}

fn lookup_flag(token: &str) -> Option<&'static FlagDef> {
    if let Some(long) = token.strip_prefix("--") {
        FLAGS.iter().find(|f| f.long == long)
    } else if let Some(short) = token.strip_prefix('-') {
        FLAGS.iter().find(|f| f.short == Some(short))
    } else {
        None
    }
}

fn parse_args(argv: &[String]) -> Result<Parsed, UsageError> {
    let mut values: Vec<(&'static str, String)> = Vec::new();
    let mut iter = argv.iter();
    while let Some(token) = iter.next() {
        if !token.starts_with('-') {
            return Err(UsageError::UnexpectedArgument(token.clone()));
        }
        let flag = lookup_flag(token).ok_or_else(|| UsageError::UnknownFlag(token.clone()))?;
        if flag.long == "help" {
            return Ok(Parsed::Help);
        }
        let value = iter
            .next()
            .ok_or_else(|| UsageError::MissingValue(token.clone()))?;
        values.push((flag.long, value.clone()));
    }

    let get = |name: &str| -> Option<&String> {
        values
            .iter()
            .rev()
            .find(|(flag, _)| *flag == name)
            .map(|(_, v)| v)
    };
    fn parse_value<T: std::str::FromStr>(
        flag: &str,
        value: &str,
        expect: &str,
    ) -> Result<T, UsageError> {
        value.parse().map_err(|_| UsageError::InvalidValue {
            flag: format!("--{flag}"),
            value: value.to_string(),
            message: expect.to_string(),
        })
    }

    let action = match get("action") {
        None => Action::PrintCll,
        Some(name) => {
            Action::from_name(name).ok_or_else(|| UsageError::UnknownAction(name.clone()))?
        }
    };

    let greedy = match get("greedy").map(String::as_str) {
        None => None,
        Some("true") => Some(true),
        Some("false") => Some(false),
        Some(other) => {
            return Err(UsageError::InvalidValue {
                flag: "--greedy".into(),
                value: other.to_string(),
                message: "expected true or false".into(),
            })
        }
    };
    let log_level = match get("log-level").map(String::as_str) {
        None | Some("info") => LevelFilter::Info,
        Some("warning") => LevelFilter::Warn,
        Some("error") => LevelFilter::Error,
        Some(other) => {
            return Err(UsageError::InvalidValue {
                flag: "--log-level".into(),
                value: other.to_string(),
                message: "expected warning, error or info".into(),
            })
        }
    };
    let scm = match get("scm") {
        None => None,
        Some(v) => Some(v.parse::<ScmKind>().map_err(|message| UsageError::InvalidValue {
            flag: "--scm".into(),
            value: v.clone(),
            message,
        })?),
    };
    let parallelism = match get("parallel-threads") {
        None => None,
        Some(v) => {
            let n: usize = parse_value("parallel-threads", v, "expected a positive integer")?;
            if n == 0 {
                return Err(UsageError::InvalidValue {
                    flag: "--parallel-threads".into(),
                    value: v.clone(),
                    message: "must be at least 1".into(),
                });
            }
            Some(n)
        }
    };
    let repetitions = match get("repetitions") {
        None => None,
        Some(v) => {
            let n: u32 = parse_value("repetitions", v, "expected a positive integer")?;
            if n == 0 {
                return Err(UsageError::InvalidValue {
                    flag: "--repetitions".into(),
                    value: v.clone(),
                    message: "must be at least 1".into(),
                });
            }
            Some(n)
        }
    };
    let confidence = match get("confidence") {
        None => None,
        Some(v) => {
            let c: f64 = parse_value("confidence", v, "expected a number in (0, 1)")?;
            if c <= 0.0 || c >= 1.0 {
                return Err(UsageError::InvalidValue {
                    flag: "--confidence".into(),
                    value: v.clone(),
                    message: "must lie strictly between 0 and 1".into(),
                });
            }
            Some(c)
        }
    };
    let seed = match get("seed") {
        None => None,
        Some(v) => Some(parse_value::<i64>("seed", v, "expected an integer")?),
    };
    let port = match get("db-port") {
        None => None,
        Some(v) => Some(parse_value::<u16>("db-port", v, "expected a port number")?),
    };

    let invocation = CliInvocation {
        action,
        input: get("input").cloned(),
        batch_name: get("batch-name").cloned(),
        new_name: get("new-name").cloned(),
        executable: get("executable").cloned(),
        parallelism,
        repetitions,
        greedy,
        instance_param: get("instance-param").cloned(),
        performance_param: get("performance-param").cloned(),
        seed,
        confidence,
        db: DbOptions {
            host: get("db-host").cloned().unwrap_or_else(|| "localhost".into()),
            database: get("db-database").cloned().unwrap_or_else(|| "j2r".into()),
            user: get("db-user").cloned().unwrap_or_else(|| "j2r".into()),
            pass: get("db-pass").cloned().unwrap_or_else(|| "j2r".into()),
            port,
        },
        log_file: get("log-file").cloned(),
        log_level,
        scm,
    };
    check_mandatory(&invocation)?;
    Ok(Parsed::Invocation(invocation))
}

fn check_mandatory(inv: &CliInvocation) -> Result<(), UsageError> {
    let action = inv.action;
    let need = |present: bool, flag: &'static str| {
        if present {
            Ok(())
        } else {
            Err(UsageError::MissingFlag {
                action: action.name(),
                flag,
            })
        }
    };
    match action {
        Action::PrintCll | Action::PrintCsv => need(inv.input.is_some(), "--input")?,
        Action::ListBatches => {}
        Action::RenameBatch => {
            need(inv.batch_name.is_some(), "--batch-name")?;
            need(inv.new_name.is_some(), "--new-name")?;
        }
        Action::SetRepetitions => {
            need(inv.batch_name.is_some(), "--batch-name")?;
            need(inv.repetitions.is_some(), "--repetitions")?;
        }
        _ => need(inv.batch_name.is_some(), "--batch-name")?,
    }
    Ok(())
}

enum LogSink {
    Stderr,
    File(std::fs::File),
}

struct CliLogger {
    level: LevelFilter,
    sink: Mutex<LogSink>,
}

impl log::Log for CliLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!("[{}] {}\n", record.level(), record.args());
        let mut sink = self.sink.lock().unwrap();
        let _ = match &mut *sink {
            LogSink::Stderr => std::io::stderr().write_all(line.as_bytes()),
            LogSink::File(f) => f.write_all(line.as_bytes()),
        };
    }

    fn flush(&self) {}
}

fn init_logging(inv: &CliInvocation) {
    let sink = match &inv.log_file {
        None => LogSink::Stderr,
        Some(path) => match std::fs::OpenOptions::new().create(true).append(true).open(path) {
            Ok(f) => LogSink::File(f),
            Err(e) => {
                eprintln!("cannot open log file `{path}`: {e}; logging to stderr");
                LogSink::Stderr
            }
        },
    };
    let logger = CliLogger {
        level: inv.log_level,
        sink: Mutex::new(sink),
    };
    // Tests drive `run` repeatedly in one process; only the first logger
    // sticks and that is fine.
    if log::set_boxed_logger(Box::new(logger)).is_ok() {
        log::set_max_level(inv.log_level);
    }
}

/// Parses argv, runs the requested action, and returns the process exit
/// code (0 success, 1 domain error, 2 usage error).
pub fn run(argv: &[String]) -> i32 {
    match parse_args(argv) {
        Ok(Parsed::Help) => {
            print!("{}", usage());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("run `j2r --help` for a summary of the options");
            2
        }
        Ok(Parsed::Invocation(inv)) => {
            init_logging(&inv);
            match dispatch(&inv) {
                Ok(()) => 0,
                Err(e) => {
                    log::error!("{e}");
                    1
                }
            }
        }
    }
}

fn store_dir(inv: &CliInvocation) -> Result<PathBuf, CliError> {
    if inv.db.host != "localhost" || inv.db.port.is_some() {
        return Err(CliError::ServerBackend);
    }
    if let Ok(dir) = std::env::var("J2R_STORE_DIR") {
        if !dir.is_empty() {
            return Ok(PathBuf::from(dir));
        }
    }
    Ok(PathBuf::from(&inv.db.database))
}

fn open_inv_store(inv: &CliInvocation) -> Result<StoreHandle, CliError> {
    Ok(open_store(store_dir(inv)?)?)
}

fn load_tree_text(inv: &CliInvocation) -> Result<Option<String>, CliError> {
    match &inv.input {
        None => Ok(None),
        Some(path) => Ok(Some(std::fs::read_to_string(path).map_err(|source| {
            CliError::Input {
                path: path.clone(),
                source,
            }
        })?)),
    }
}

fn parse_and_validate(text: &str) -> Result<crate::tree::ParamTree, CliError> {
    let tree = parse_experiment(text)?;
    let report = validate(&tree);
    if !report.is_valid() {
        return Err(CliError::InvalidTree(report.to_string()));
    }
    Ok(tree)
}

fn dispatch(inv: &CliInvocation) -> Result<(), CliError> {
    match inv.action {
        Action::PrintCll => {
            let text = load_tree_text(inv)?.expect("checked mandatory");
            let tree = parse_and_validate(&text)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for config in expand(&tree)? {
                let line = format_cll(&config)?;
                writeln!(out, "{line}").expect("stdout write");
            }
            Ok(())
        }
        Action::PrintCsv => {
            let text = load_tree_text(inv)?.expect("checked mandatory");
            let tree = parse_and_validate(&text)?;
            let table = format_csv(expand(&tree)?)?;
            print!("{table}");
            Ok(())
        }
        Action::RunBatch => {
            let store = open_inv_store(inv)?;
            let name = inv.batch_name.as_deref().expect("checked mandatory");
            let run = BatchRun {
                tree_text: load_tree_text(inv)?,
                executable: inv.executable.clone(),
                parallelism: inv.parallelism,
                repetitions: inv.repetitions,
                greedy: inv.greedy,
                scm: inv.scm,
            };
            let summary = run_batch(&store, name, &run)?;
            log::info!(
                "batch `{name}`: executed {}, reused {}, skipped {}, failed {}, finished: {}",
                summary.executed,
                summary.reused,
                summary.skipped,
                summary.failed,
                summary.finished
            );
            Ok(())
        }
        Action::RunRace => {
            let store = open_inv_store(inv)?;
            let name = inv.batch_name.as_deref().expect("checked mandatory");
            let run = RaceRun {
                batch: BatchRun {
                    tree_text: load_tree_text(inv)?,
                    executable: inv.executable.clone(),
                    parallelism: inv.parallelism,
                    repetitions: inv.repetitions,
                    greedy: inv.greedy,
                    scm: inv.scm,
                },
                instance_param: inv.instance_param.clone(),
                performance_param: inv.performance_param.clone(),
                seed: inv.seed,
                confidence: inv.confidence,
            };
            let summary = run_race(&store, name, &run)?;
            log::info!(
                "race `{name}`: executed {}, reused {}, blocks {}, survivors {:?}",
                summary.executed,
                summary.reused,
                summary.blocks_completed,
                summary.survivors
            );
            Ok(())
        }
        Action::ListBatches => {
            let store = open_inv_store(inv)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for summary in store.list_batches() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}/{}",
                    summary.name,
                    summary.kind,
                    summary.host,
                    if summary.finished { "finished" } else { "unfinished" },
                    summary.completed,
                    summary.total
                )
                .expect("stdout write");
            }
            Ok(())
        }
        Action::DeleteBatch => {
            let store = open_inv_store(inv)?;
            store.delete_batch(inv.batch_name.as_deref().expect("checked mandatory"))?;
            Ok(())
        }
        Action::BatchInfo => {
            let store = open_inv_store(inv)?;
            let info =
                batch_info_json(&store, inv.batch_name.as_deref().expect("checked mandatory"))?;
            println!("{}", serde_json::to_string_pretty(&info).expect("json"));
            Ok(())
        }
        Action::RenameBatch => {
            let store = open_inv_store(inv)?;
            store.rename_batch(
                inv.batch_name.as_deref().expect("checked mandatory"),
                inv.new_name.as_deref().expect("checked mandatory"),
            )?;
            Ok(())
        }
        Action::ShowWinning => {
            let store = open_inv_store(inv)?;
            let winners =
                show_winning(&store, inv.batch_name.as_deref().expect("checked mandatory"))?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for config in winners {
                writeln!(out, "{}", format_cll(&config)?).expect("stdout write");
            }
            Ok(())
        }
        Action::SetRepetitions => {
            let store = open_inv_store(inv)?;
            store.set_repetitions(
                inv.batch_name.as_deref().expect("checked mandatory"),
                inv.repetitions.expect("checked mandatory"),
            )?;
            Ok(())
        }
        Action::DumpExperiments => {
            let store = open_inv_store(inv)?;
            let csv = store.dump_csv(inv.batch_name.as_deref().expect("checked mandatory"))?;
            print!("{csv}");
            Ok(())
        }
        Action::MarkUnfinished => {
            let store = open_inv_store(inv)?;
            store.mark_unfinished(inv.batch_name.as_deref().expect("checked mandatory"))?;
            Ok(())
        }
    }
}

/// Detailed JSON description of a batch: identity, progress, race state and
/// the original experiment tree.
fn batch_info_json(store: &StoreHandle, name: &str) -> Result<Value, CliError> {
    let record = store.get_batch(name)?;
    let completed = store.completed_count(name);
    let total = record.config_count * record.repetitions as u64;

    let mut info = serde_json::Map::new();
    info.insert("name".into(), json!(record.name));
    info.insert("kind".into(), json!(record.kind.to_string()));
    info.insert("host".into(), json!(record.host));
    info.insert("executable".into(), json!(record.executable));
    info.insert("repetitions".into(), json!(record.repetitions));
    info.insert("greedy".into(), json!(record.greedy));
    info.insert("finished".into(), json!(record.finished));
    info.insert("created_at".into(), json!(record.created_at.to_rfc3339()));
    info.insert("updated_at".into(), json!(record.updated_at.to_rfc3339()));
    info.insert("scm_revision".into(), json!(record.scm_revision));
    info.insert("completed".into(), json!(completed));
    info.insert("total".into(), json!(total));

    if let (Some(options), Some(state)) = (&record.race_options, &record.race_state) {
        let winning: Result<Vec<String>, _> = state
            .surviving
            .iter()
            .map(|&i| format_cll(&state.configs[i]))
            .collect();
        info.insert(
            "race".into(),
            json!({
                "instance_param": options.instance_param,
                "performance_param": options.performance_param,
                "seed": options.seed,
                "confidence": options.confidence,
                "block_cursor": state.block_cursor,
                "total_blocks": state.instance_order.len() * record.repetitions as usize,
                "configurations": state.configs.len(),
                "surviving": state.surviving,
                "winning": winning?,
            }),
        );
    }

    // Greedy reuse may adopt records produced under a different code
    // revision; surface that prominently.
    let mut conflicts: Vec<String> = Vec::new();
    for rec in store.experiments_of(name) {
        for other in &rec.batch_names {
            if other == name {
                continue;
            }
            if let Ok(other_batch) = store.get_batch(other) {
                if let (Some(mine), Some(theirs)) = (&record.scm_revision, &other_batch.scm_revision)
                {
                    if mine != theirs && !conflicts.contains(theirs) {
                        conflicts.push(theirs.clone());
                    }
                }
            }
        }
    }
    if !conflicts.is_empty() {
        info.insert("revision_conflicts".into(), json!(conflicts));
    }

    match serde_json::from_str::<Value>(&record.tree_text) {
        Ok(tree) => info.insert("tree".into(), tree),
        Err(_) => info.insert("tree".into(), json!(record.tree_text)),
    };
    Ok(Value::Object(info))
}
