//! Racing configurations across instances with rank-based elimination.
//!
//! A race runs all surviving configurations on one (instance, repetition)
//! block at a time. After each block (once at least [`MIN_BLOCKS`] have
//! accumulated) the accumulated performance matrix is tested: the Friedman
//! rank test decides whether any configuration differs, and if it does, a
//! rank-based post-hoc comparison against the incumbent eliminates the
//! configurations shown inferior at the configured significance level. With
//! two survivors the exact two-sided sign test takes over. Lower
//! performance values are better.
//!
//! The race terminates when one survivor remains or the blocks are
//! exhausted; progress persists inside the batch record after every block,
//! so a stopped race resumes exactly where it left off.

pub mod stats;

use serde_json::Value;
use thiserror::Error;

use crate::expand::{expand, format_cll, Configuration, ParamValue};
use crate::rng::SplitMix64;
use crate::runner::{resolve_batch, run_jobs, BatchRun, Job, RunnerError};
use crate::store::{BatchKind, RaceOptionsRecord, RaceState, StoreError, StoreHandle};

/// Blocks to accumulate before the first statistical test.
pub const MIN_BLOCKS: usize = 5;

#[derive(Debug, Error)]
pub enum RaceError {
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Expand(#[from] crate::expand::ExpandError),
    #[error("a fresh race needs the {0} option")]
    MissingOption(&'static str),
    #[error("race `{name}` already exists with a different {what}; refusing to redefine it")]
    OptionConflict { name: String, what: String },
    #[error("configuration `{config}` has no `{param}` parameter; every expanded configuration must carry the instance parameter")]
    MissingInstanceParam { param: String, config: String },
    #[error("the expansion is not a full cross product of configurations and instances: {0}; a race needs every configuration paired with every instance")]
    NotCrossProduct(String),
    #[error("rank test needs at least 2 blocks and 2 configurations, got {blocks} and {configs}")]
    InsufficientData { blocks: usize, configs: usize },
    #[error("statistic `{param}` is missing or not numeric in experiment {experiment}")]
    PerformanceParam { param: String, experiment: u64 },
    #[error("block (repetition {repetition}) has no successful record for `{config}`; resume the race to retry")]
    BlockIncomplete { config: String, repetition: u32 },
    #[error("race `{0}` has no persisted race state")]
    MissingState(String),
    #[error("batch `{0}` is not a race")]
    NotARace(String),
}

/// Outcome of the Friedman rank test over a blocks-by-configurations matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// Ranks one block ascending (best = 1), averaging ranks over ties.
fn row_ranks(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("performance values are ordered"));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn rank_matrix(perf: &[Vec<f64>]) -> Vec<Vec<f64>> {
    perf.iter().map(|row| row_ranks(row)).collect()
}

/// Friedman test: within-block ranks, statistic
/// chi2 = 12 / (b k (k+1)) * sum_j R_j^2 - 3 b (k+1), upper-tail p-value
/// from the chi-squared distribution with k-1 degrees of freedom.
pub fn friedman(perf: &[Vec<f64>]) -> Result<FriedmanResult, RaceError> {
    let b = perf.len();
    let k = perf.first().map_or(0, Vec::len);
    if b < 2 || k < 2 {
        return Err(RaceError::InsufficientData { blocks: b, configs: k });
    }
    let ranks = rank_matrix(perf);
    let mut rank_sums = vec![0.0; k];
    for row in &ranks {
        for (j, r) in row.iter().enumerate() {
            rank_sums[j] += r;
        }
    }
    let bf = b as f64;
    let kf = k as f64;
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let statistic = 12.0 / (bf * kf * (kf + 1.0)) * sum_sq - 3.0 * bf * (kf + 1.0);
    let statistic = statistic.max(0.0);
    let degrees_of_freedom = k - 1;
    Ok(FriedmanResult {
        statistic,
        degrees_of_freedom,
        p_value: stats::chi2_sf(statistic, degrees_of_freedom),
        mean_ranks: rank_sums.iter().map(|r| r / bf).collect(),
    })
}

/// Post-hoc comparison against the incumbent (minimal rank sum) after a
/// Friedman rejection: configuration j is eliminated when
/// (R_j - R_best) / se exceeds the two-sided t critical value with
/// (b-1)(k-1) degrees of freedom, where
/// se^2 = 2b (1 - chi2/(b(k-1))) (sum of squared ranks - b k (k+1)^2 / 4)
///        / ((b-1)(k-1)).
/// Returns the surviving column indices; the incumbent always survives.
pub fn posthoc_eliminate(perf: &[Vec<f64>], alpha: f64) -> Vec<usize> {
    let b = perf.len();
    let k = perf.first().map_or(0, Vec::len);
    debug_assert!(b >= 2 && k >= 2);
    let ranks = rank_matrix(perf);
    let mut rank_sums = vec![0.0; k];
    let mut sum_sq_all = 0.0;
    for row in &ranks {
        for (j, r) in row.iter().enumerate() {
            rank_sums[j] += r;
            sum_sq_all += r * r;
        }
    }
    let best = rank_sums
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let bf = b as f64;
    let kf = k as f64;
    let chi = friedman(perf).expect("dimensions checked").statistic;
    let spread = sum_sq_all - bf * kf * (kf + 1.0) * (kf + 1.0) / 4.0;
    let variance_factor = (1.0 - chi / (bf * (kf - 1.0))).max(0.0);
    let df = (b - 1) * (k - 1);
    let se = (2.0 * bf * variance_factor * spread / df as f64).sqrt();
    let t_crit = stats::student_t_quantile(1.0 - alpha / 2.0, df);

    (0..k)
        .filter(|&j| {
            let diff = rank_sums[j] - rank_sums[best];
            if diff <= 0.0 {
                return true;
            }
            if se == 0.0 {
                // Unanimous rankings: any rank-sum gap is decisive.
                return false;
            }
            diff / se <= t_crit
        })
        .collect()
}

/// Exact two-sided sign test for two surviving configurations. Returns the
/// column index of the loser when the win counts differ significantly.
pub fn sign_test_loser(perf: &[Vec<f64>], alpha: f64) -> Option<usize> {
    debug_assert!(perf.iter().all(|row| row.len() == 2));
    let mut wins = [0u64; 2];
    for row in perf {
        if row[0] < row[1] {
            wins[0] += 1;
        } else if row[1] < row[0] {
            wins[1] += 1;
        }
    }
    let trials = wins[0] + wins[1];
    if trials == 0 || wins[0] == wins[1] {
        return None;
    }
    let p = stats::sign_test_p(trials, wins[0].max(wins[1]));
    if p < alpha {
        Some(if wins[0] < wins[1] { 0 } else { 1 })
    } else {
        None
    }
}

/// The expansion of a race tree, split into instances and instance-free
/// configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitExpansion {
    /// Distinct instance values, in first-appearance order.
    pub instances: Vec<ParamValue>,
    /// Distinct configurations with the instance parameter removed, in
    /// first-appearance order.
    pub configs: Vec<Configuration>,
    /// Original position of the instance parameter in each configuration.
    pub instance_slots: Vec<usize>,
}

/// Splits an expansion into instances and configurations, verifying that
/// every configuration pairs with every instance.
pub fn split_configs<I>(stream: I, instance_param: &str) -> Result<SplitExpansion, RaceError>
where
    I: IntoIterator<Item = Configuration>,
{
    use std::collections::{HashMap, HashSet};
    let mut instances: Vec<ParamValue> = Vec::new();
    let mut instance_index: HashMap<String, usize> = HashMap::new();
    let mut configs: Vec<Configuration> = Vec::new();
    let mut instance_slots: Vec<usize> = Vec::new();
    let mut config_index: HashMap<String, usize> = HashMap::new();
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();

    for full in stream {
        let slot = full.position(instance_param).ok_or_else(|| {
            RaceError::MissingInstanceParam {
                param: instance_param.to_string(),
                config: format_cll(&full).unwrap_or_else(|_| format!("{full:?}")),
            }
        })?;
        let instance_value = full.params()[slot].1.clone();
        let instance_key = instance_value.canonical();
        let ii = *instance_index.entry(instance_key).or_insert_with(|| {
            instances.push(instance_value.clone());
            instances.len() - 1
        });
        let stripped = full.without(instance_param);
        let config_key = stripped.normalized_key();
        let ci = *config_index.entry(config_key).or_insert_with(|| {
            configs.push(stripped.clone());
            instance_slots.push(slot);
            configs.len() - 1
        });
        pairs.insert((ci, ii));
    }
    let expected = configs.len() * instances.len();
    if pairs.len() != expected {
        return Err(RaceError::NotCrossProduct(format!(
            "{} distinct configurations and {} instances require {} pairs, found {}",
            configs.len(),
            instances.len(),
            expected,
            pairs.len()
        )));
    }
    Ok(SplitExpansion {
        instances,
        configs,
        instance_slots,
    })
}

/// Deterministic Fisher-Yates shuffle of the instance list, driven by
/// SplitMix64 seeded with `seed`.
pub fn shuffle_instances(instances: &[ParamValue], seed: i64) -> Vec<ParamValue> {
    let mut out = instances.to_vec();
    let mut rng = SplitMix64::new(seed as u64);
    for i in (1..out.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        out.swap(i, j);
    }
    out
}

fn with_instance(
    config: &Configuration,
    slot: usize,
    name: &str,
    value: &ParamValue,
) -> Configuration {
    let mut full = config.clone();
    full.insert_at(slot, name, value.clone());
    full
}

/// Race-specific run options on top of the shared batch options.
#[derive(Debug, Clone, Default)]
pub struct RaceRun {
    pub batch: BatchRun,
    pub instance_param: Option<String>,
    pub performance_param: Option<String>,
    pub seed: Option<i64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaceSummary {
    pub executed: usize,
    pub reused: usize,
    pub skipped: usize,
    pub blocks_completed: usize,
    pub survivors: Vec<usize>,
    pub finished: bool,
}

/// Starts or resumes a race.
pub fn run_race(store: &StoreHandle, name: &str, run: &RaceRun) -> Result<RaceSummary, RaceError> {
    let resolved = resolve_batch(store, name, &run.batch, BatchKind::Race, |_| Ok(0))?;
    let mut record = resolved.record;
    let options: RaceOptionsRecord;
    let mut state: RaceState;

    if resolved.created {
        let instance_param = run
            .instance_param
            .clone()
            .ok_or(RaceError::MissingOption("--instance-param"))?;
        let performance_param = run
            .performance_param
            .clone()
            .ok_or(RaceError::MissingOption("--performance-param"))?;
        options = RaceOptionsRecord {
            instance_param,
            performance_param,
            seed: run.seed.unwrap_or(0),
            confidence: run.confidence.unwrap_or(0.05),
        };
        let tree = resolved.tree;
        let split = split_configs(expand(&tree)?, &options.instance_param)?;
        state = RaceState {
            surviving: (0..split.configs.len()).collect(),
            instance_order: shuffle_instances(&split.instances, options.seed),
            block_cursor: 0,
            performance: Vec::new(),
            configs: split.configs,
            instance_slots: split.instance_slots,
        };
        record.config_count = (state.configs.len() * state.instance_order.len()) as u64;
        record.race_options = Some(options.clone());
        record.race_state = Some(state.clone());
        store.create_batch(record.clone())?;
        log::info!(
            "race `{name}` starts with {} configurations over {} instances",
            state.configs.len(),
            state.instance_order.len()
        );
    } else {
        options = record
            .race_options
            .clone()
            .ok_or_else(|| RaceError::MissingState(name.to_string()))?;
        let conflict = |what: &str| RaceError::OptionConflict {
            name: name.to_string(),
            what: what.to_string(),
        };
        if run.instance_param.as_ref().is_some_and(|v| *v != options.instance_param) {
            return Err(conflict("instance parameter"));
        }
        if run
            .performance_param
            .as_ref()
            .is_some_and(|v| *v != options.performance_param)
        {
            return Err(conflict("performance parameter"));
        }
        if run.seed.is_some_and(|v| v != options.seed) {
            return Err(conflict("seed"));
        }
        if run.confidence.is_some_and(|v| v != options.confidence) {
            return Err(conflict("confidence"));
        }
        state = record
            .race_state
            .clone()
            .ok_or_else(|| RaceError::MissingState(name.to_string()))?;
    }

    let repetitions = record.repetitions.max(1) as usize;
    let total_blocks = state.instance_order.len() * repetitions;
    let alpha = options.confidence;
    let mut summary = RaceSummary::default();

    while state.surviving.len() > 1 && state.block_cursor < total_blocks {
        let instance = state.instance_order[state.block_cursor / repetitions].clone();
        let repetition = (state.block_cursor % repetitions) as u32;

        let block: Vec<(usize, Configuration)> = state
            .surviving
            .iter()
            .map(|&idx| {
                (
                    idx,
                    with_instance(
                        &state.configs[idx],
                        state.instance_slots[idx],
                        &options.instance_param,
                        &instance,
                    ),
                )
            })
            .collect();

        let mut jobs = Vec::new();
        for (_, config) in &block {
            if store
                .find_in_batch(name, &config.normalized_key(), repetition)
                .is_some()
            {
                summary.skipped += 1;
                continue;
            }
            if record.greedy {
                if let Some(found) = store.find_reusable(config, &record.executable, repetition) {
                    store.adopt_experiment(found.id, name)?;
                    summary.reused += 1;
                    continue;
                }
            }
            jobs.push(Job {
                config: config.clone(),
                repetition,
            });
        }
        let outcome = run_jobs(store, name, &record.executable, jobs, resolved.parallelism)?;
        summary.executed += outcome.executed;

        let mut row: Vec<Option<f64>> = vec![None; state.configs.len()];
        for (idx, config) in &block {
            let rec = store
                .find_in_batch(name, &config.normalized_key(), repetition)
                .ok_or_else(|| RaceError::BlockIncomplete {
                    config: format_cll(config).unwrap_or_default(),
                    repetition,
                })?;
            let value = rec
                .stats
                .as_ref()
                .and_then(|s| s.get(&options.performance_param))
                .and_then(Value::as_f64)
                .ok_or_else(|| RaceError::PerformanceParam {
                    param: options.performance_param.clone(),
                    experiment: rec.id,
                })?;
            row[*idx] = Some(value);
        }
        state.performance.push(row);
        state.block_cursor += 1;

        if state.block_cursor >= MIN_BLOCKS {
            let submatrix: Vec<Vec<f64>> = state
                .performance
                .iter()
                .map(|row| {
                    state
                        .surviving
                        .iter()
                        .map(|&j| row[j].expect("survivors ran every block"))
                        .collect()
                })
                .collect();
            let eliminated: Vec<usize> = if state.surviving.len() == 2 {
                match sign_test_loser(&submatrix, alpha) {
                    Some(loser) => vec![state.surviving[loser]],
                    None => Vec::new(),
                }
            } else {
                let result = friedman(&submatrix)?;
                if result.p_value < alpha {
                    let kept = posthoc_eliminate(&submatrix, alpha);
                    state
                        .surviving
                        .iter()
                        .enumerate()
                        .filter(|(sub, _)| !kept.contains(sub))
                        .map(|(_, &orig)| orig)
                        .collect()
                } else {
                    Vec::new()
                }
            };
            if !eliminated.is_empty() {
                state.surviving.retain(|idx| !eliminated.contains(idx));
                log::info!(
                    "block {}: eliminated {:?}, {} configuration(s) remain",
                    state.block_cursor,
                    eliminated,
                    state.surviving.len()
                );
            }
        }

        record.race_state = Some(state.clone());
        store.update_batch(record.clone())?;
    }

    record.race_state = Some(state.clone());
    record.finished = true;
    store.update_batch(record)?;
    summary.blocks_completed = state.block_cursor;
    summary.survivors = state.surviving;
    summary.finished = true;
    Ok(summary)
}

/// The surviving (winning-so-far, or final) configurations of a race.
pub fn show_winning(store: &StoreHandle, name: &str) -> Result<Vec<Configuration>, RaceError> {
    let record = store.get_batch(name)?;
    if record.kind != BatchKind::Race {
        return Err(RaceError::NotARace(name.to_string()));
    }
    let state = record
        .race_state
        .ok_or_else(|| RaceError::MissingState(name.to_string()))?;
    Ok(state
        .surviving
        .iter()
        .map(|&i| state.configs[i].clone())
        .collect())
}
