//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its pinned tolerance when it holds.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::{Duration, Instant};

use common::*;
use json2run::expand::{expand, format_cll, Configuration, ParamValue};
use json2run::lowdisc::{hammersley_point, nth_prime};
use json2run::postproc::{self, PostprocError};
use json2run::race::{friedman, run_race, show_winning, RaceRun};
use json2run::rng::SplitMix64;
use json2run::runner::{run_batch, BatchRun};
use json2run::store::open_store;
use json2run::tree::{parse_experiment, PostProcessorSpec, RoundingSpec};

fn pass(n: u32, what: &str) {
    println!("criterion {n:2}: PASS - {what}");
}

#[test]
fn criterion_01_golden_expansion_nested_or() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write_tree(dir.path(), "experiments.json", INTRO_TREE);
    let started = Instant::now();
    let output = run_j2r(&["-i", tree.to_str().unwrap()], dir.path());
    let elapsed = started.elapsed();
    assert!(output.status.success());
    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 30);
    assert_eq!(lines[0], "--a foo --b1 0.0");
    assert_eq!(lines[1], "--a foo --b1 0.25");
    assert_eq!(lines[28], "--a baz --b2 8.0");
    assert_eq!(lines[29], "--a baz --b2 10.0");
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    pass(1, "30 command lines, first/last two byte-exact, under 1 s");
}

#[test]
fn criterion_02_golden_expansion_grid() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write_tree(dir.path(), "experiments.json", SA_TREE);
    let output = run_j2r(&["-i", tree.to_str().unwrap()], dir.path());
    assert!(output.status.success());
    let expected = [
        "--initial_temperature 10.0 --cooling_schedule 0.999",
        "--initial_temperature 10.0 --cooling_schedule 0.99",
        "--initial_temperature 10.0 --cooling_schedule 0.9",
        "--initial_temperature 20.0 --cooling_schedule 0.999",
        "--initial_temperature 20.0 --cooling_schedule 0.99",
        "--initial_temperature 20.0 --cooling_schedule 0.9",
        "--initial_temperature 30.0 --cooling_schedule 0.999",
        "--initial_temperature 30.0 --cooling_schedule 0.99",
        "--initial_temperature 30.0 --cooling_schedule 0.9",
    ];
    assert_eq!(stdout_lines(&output), expected);
    pass(2, "9-line grid listing byte-exact, implicit range renders 10.0/20.0/30.0");
}

#[test]
fn criterion_03_golden_expansion_alternatives() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write_tree(dir.path(), "experiments.json", SA_TS_TREE);
    let output = run_j2r(&["-i", tree.to_str().unwrap()], dir.path());
    assert!(output.status.success());
    let expected = [
        "--algorithm sa --initial_temperature 10.0 --cooling_schedule 0.999",
        "--algorithm sa --initial_temperature 10.0 --cooling_schedule 0.99",
        "--algorithm sa --initial_temperature 20.0 --cooling_schedule 0.999",
        "--algorithm sa --initial_temperature 20.0 --cooling_schedule 0.99",
        "--algorithm ts --tabu_list_length 10",
        "--algorithm ts --tabu_list_length 15",
        "--algorithm ts --tabu_list_length 20",
    ];
    assert_eq!(stdout_lines(&output), expected);
    pass(3, "7-line alternatives listing byte-exact, no cross-branch leakage");
}

/// Independent digit-reversal oracle: reverse the base-b digits of i into an
/// exact integer numerator over base^digits.
fn oracle_radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut numerator: u128 = 0;
    let mut denominator: u128 = 1;
    while i > 0 {
        numerator = numerator * base as u128 + (i % base) as u128;
        denominator *= base as u128;
        i /= base;
    }
    numerator as f64 / denominator as f64
}

#[test]
fn criterion_04_hammersley_oracle_equivalence() {
    for n in 1..=64u64 {
        for k in 1..=4usize {
            for i in 0..n {
                let point = hammersley_point(i, n, k).unwrap();
                assert!((point[0] - i as f64 / n as f64).abs() < 1e-12);
                for j in 1..k {
                    let base = nth_prime(j - 1);
                    assert!(
                        (point[j] - oracle_radical_inverse(i, base)).abs() < 1e-12,
                        "i={i} n={n} k={k} j={j}"
                    );
                }
            }
        }
    }
    assert_eq!(nth_prime(0), 2);
    assert_eq!(nth_prime(1), 3);
    assert_eq!(nth_prime(2), 5);

    // Scaled sampling through the whole pipeline: boxes respected and
    // n * (input count) configurations produced.
    let tree = parse_experiment(
        r#"{
        "type": "and",
        "descendants": [
            {"type": "discrete", "name": "mode", "values": ["a", "b"]},
            {"type": "continuous", "name": "c1", "values": {"min": -2.0, "max": 3.0}},
            {"type": "continuous", "name": "c2", "values": {"min": 10.0, "max": 11.0}}
        ],
        "postprocessors": [{"type": "hammersley", "points": 16}]
    }"#,
    )
    .unwrap();
    let configs: Vec<Configuration> = expand(&tree).unwrap().collect();
    assert_eq!(configs.len(), 2 * 16);
    for config in &configs {
        let c1 = config.get("c1").unwrap().as_f64().unwrap();
        let c2 = config.get("c2").unwrap().as_f64().unwrap();
        assert!((-2.0..=3.0).contains(&c1));
        assert!((10.0..=11.0).contains(&c2));
    }
    pass(4, "points match the digit-reversal oracle to 1e-12 for n<=64, k<=4; samples in box");
}

#[test]
fn criterion_05_friedman_oracle() {
    let unanimous = vec![
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![0.3, 0.6, 0.9],
        vec![7.0, 8.0, 9.0],
    ];
    let result = friedman(&unanimous).unwrap();
    assert!((result.statistic - 8.0).abs() < 1e-9, "{}", result.statistic);
    assert_eq!(result.degrees_of_freedom, 2);
    // Chi-squared upper tail at 8.0 with 2 dof is exp(-4) = 0.018315639.
    assert!((result.p_value - 0.0183).abs() < 1e-3, "{}", result.p_value);

    let tied = vec![vec![5.0, 5.0, 5.0], vec![6.0, 6.0, 6.0], vec![7.0, 7.0, 7.0]];
    let result = friedman(&tied).unwrap();
    assert_eq!(result.statistic, 0.0);
    assert_eq!(result.p_value, 1.0);
    pass(5, "statistic 8.0 +/- 1e-9, df 2, p 0.0183 +/- 1e-3; tied matrix gives 0 and 1");
}

#[test]
fn criterion_06_race_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("db");
    let count_file = dir.path().join("count.txt");
    let solver = biased_solver(dir.path(), Some(&count_file));
    let tree = write_tree(dir.path(), "race.json", RACE_TREE);

    let started = Instant::now();
    let output = run_j2r(
        &[
            "-a", "run-race", "-n", "bias_race",
            "-i", tree.to_str().unwrap(),
            "-e", solver.to_str().unwrap(),
            "-ip", "instance", "-pp", "cost",
        ],
        &store_dir,
    );
    let elapsed = started.elapsed();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");

    let executions = std::fs::read_to_string(&count_file).unwrap().lines().count();
    assert!(executions < 60, "expected fewer than 60 executions, got {executions}");
    assert!(executions > 0);

    let winning = run_j2r(&["-a", "show-winning", "-n", "bias_race"], &store_dir);
    assert!(winning.status.success());
    assert_eq!(stdout_lines(&winning), vec!["--alpha 0"]);

    let store = open_store(&store_dir).unwrap();
    let record = store.get_batch("bias_race").unwrap();
    assert!(record.finished);
    assert_eq!(record.race_state.unwrap().surviving.len(), 1);
    pass(6, "sole survivor is the zero-bias configuration after fewer than 60 runs");
}

#[test]
fn criterion_07_crash_resume_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("db");
    let solver = write_executable(
        dir.path(),
        "slow_solver.sh",
        "#!/bin/sh\nsleep 0.3\nprintf '{\"cost\": 1}\\n'\n",
    );
    let tree = write_tree(
        dir.path(),
        "batch.json",
        r#"{"type": "discrete", "name": "alpha", "values": [1, 2, 3]}"#,
    );

    let mut child = std::process::Command::new(j2r_bin())
        .args([
            "-a", "run-batch", "-n", "killed",
            "-i", tree.to_str().unwrap(),
            "-e", solver.to_str().unwrap(),
            "-r", "2", "-p", "1",
        ])
        .env("J2R_STORE_DIR", &store_dir)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();

    // Kill the runner as soon as three records are durable.
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        assert!(Instant::now() < deadline, "runner never recorded 3 experiments");
        if let Ok(store) = open_store(&store_dir) {
            let done = store
                .experiments_of("killed")
                .iter()
                .filter(|r| r.is_success())
                .count();
            if done >= 3 {
                break;
            }
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let recorded_at_kill = {
        let store = open_store(&store_dir).unwrap();
        assert!(!store.get_batch("killed").unwrap().finished);
        store
            .experiments_of("killed")
            .iter()
            .filter(|r| r.is_success())
            .count()
    };
    assert!(recorded_at_kill < 6, "kill came too late to be interesting");

    let resume = run_j2r(&["-a", "run-batch", "-n", "killed"], &store_dir);
    assert!(resume.status.success(), "{}", String::from_utf8_lossy(&resume.stderr));

    let store = open_store(&store_dir).unwrap();
    let records = store.experiments_of("killed");
    let successful: Vec<_> = records.iter().filter(|r| r.is_success()).collect();
    assert_eq!(successful.len(), 6, "exactly one successful record per job");
    let mut pairs: Vec<(String, u32)> = successful
        .iter()
        .map(|r| (r.config_key.clone(), r.repetition))
        .collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 6, "no duplicate (configuration, repetition) pairs");
    assert!(store.get_batch("killed").unwrap().finished);
    pass(7, "killed mid-batch, resumed via run-batch, 6 records with no duplicates");
}

#[test]
fn criterion_08_greedy_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("db");
    let count_file = dir.path().join("count.txt");
    let solver = biased_solver(dir.path(), Some(&count_file));
    let tree = write_tree(
        dir.path(),
        "batch.json",
        r#"{"type": "discrete", "name": "alpha", "values": [1, 2, 3]}"#,
    );
    let count = || {
        std::fs::read_to_string(&count_file)
            .map(|s| s.lines().count())
            .unwrap_or(0)
    };

    let first = run_j2r(
        &[
            "-a", "run-batch", "-n", "first",
            "-i", tree.to_str().unwrap(), "-e", solver.to_str().unwrap(), "-r", "2",
        ],
        &store_dir,
    );
    assert!(first.status.success());
    assert_eq!(count(), 6);

    let greedy = run_j2r(
        &[
            "-a", "run-batch", "-n", "second",
            "-i", tree.to_str().unwrap(), "-e", solver.to_str().unwrap(), "-r", "2",
            "-g", "true",
        ],
        &store_dir,
    );
    assert!(greedy.status.success());
    assert_eq!(count(), 6, "greedy batch must execute no child process");

    let store = open_store(&store_dir).unwrap();
    assert!(store.get_batch("second").unwrap().finished);
    let shared = store
        .experiments_of("second")
        .iter()
        .filter(|r| r.batch_names.len() == 2)
        .count();
    assert_eq!(shared, 6, "all records adopted from the first batch");
    drop(store);

    let non_greedy = run_j2r(
        &[
            "-a", "run-batch", "-n", "third",
            "-i", tree.to_str().unwrap(), "-e", solver.to_str().unwrap(), "-r", "2",
            "-g", "false",
        ],
        &store_dir,
    );
    assert!(non_greedy.status.success());
    assert_eq!(count(), 12, "non-greedy batch re-executes everything");
    pass(8, "greedy run adopts all 6 records with 0 executions; non-greedy runs all 6");
}

#[test]
fn criterion_09_statistics_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("db");
    let solver = write_executable(
        dir.path(),
        "solver.sh",
        "#!/bin/sh\n\
         mode=good\n\
         while [ $# -gt 0 ]; do\n\
         case \"$1\" in --mode) mode=$2; shift 2;; *) shift;; esac\n\
         done\n\
         if [ \"$mode\" = bad ]; then echo ok; else printf '{\"cost\":161.12,\"time\":500}'; fi\n",
    );
    let tree = write_tree(
        dir.path(),
        "batch.json",
        r#"{"type": "discrete", "name": "mode", "values": ["good", "bad"]}"#,
    );
    let store = open_store(&store_dir).unwrap();
    let summary = run_batch(
        &store,
        "protocol",
        &BatchRun {
            tree_text: Some(std::fs::read_to_string(&tree).unwrap()),
            executable: Some(solver.to_string_lossy().into_owned()),
            ..BatchRun::default()
        },
    )
    .unwrap();
    assert_eq!(summary.executed, 2);
    assert_eq!(summary.failed, 1);
    assert!(!summary.finished);

    let records = store.experiments_of("protocol");
    assert_eq!(records.len(), 2);
    let good = records
        .iter()
        .find(|r| r.config.get("mode") == Some(&ParamValue::str("good")))
        .unwrap();
    assert!(good.is_success());
    let stats = good.stats.as_ref().unwrap();
    assert_eq!(stats.get("cost").unwrap().as_f64().unwrap(), 161.12);
    assert_eq!(stats.get("time").unwrap().as_i64().unwrap(), 500);
    let bad = records
        .iter()
        .find(|r| r.config.get("mode") == Some(&ParamValue::str("bad")))
        .unwrap();
    assert!(!bad.is_success());
    assert!(bad.stats.is_none());
    assert!(bad.diagnostic.as_ref().unwrap().contains("ok"));
    pass(9, "JSON stats captured (cost 161.12, time 500); non-JSON job fails without aborting");
}

#[test]
fn criterion_10_postprocessor_suite() {
    // Rounding rounds half away from zero rather than truncating.
    let spec = RoundingSpec {
        rules: vec![("x".into(), 2)],
        force_precision: false,
    };
    let configs = vec![Configuration::from_params(vec![(
        "x".into(),
        ParamValue::float(0.005),
    )])];
    let rounded = postproc::pp_rounding(&spec, configs).unwrap();
    assert_eq!(rounded[0].get("x").unwrap().as_f64().unwrap(), 0.01);

    // Power expression followed by ignore, end to end through the tree.
    let tree = parse_experiment(
        r#"{
        "type": "and",
        "descendants": [
            {"type": "discrete", "name": "p1", "values": [2]},
            {"type": "discrete", "name": "p2", "values": [3]}
        ],
        "postprocessors": [
            {"type": "expression", "match": "p1|p2", "result": "p3",
             "expression": "pow(p1.value, p2.value)"},
            {"type": "ignore", "match": "p1|p2"}
        ]
    }"#,
    )
    .unwrap();
    let configs: Vec<Configuration> = expand(&tree).unwrap().collect();
    assert_eq!(configs.len(), 1);
    assert_eq!(format_cll(&configs[0]).unwrap(), "--p3 8.0");

    // Same processors in the wrong order: the operands are gone.
    let reversed = parse_experiment(
        r#"{
        "type": "and",
        "descendants": [
            {"type": "discrete", "name": "p1", "values": [2]},
            {"type": "discrete", "name": "p2", "values": [3]}
        ],
        "postprocessors": [
            {"type": "ignore", "match": "p1|p2"},
            {"type": "expression", "match": "p1|p2", "result": "p3",
             "expression": "pow(p1.value, p2.value)"}
        ]
    }"#,
    )
    .unwrap();
    let err = expand(&reversed).err().expect("ordering error");
    assert!(err.to_string().contains("not bound"), "{err}");

    // The ordering error for rounding an unsampled interval is also pinned.
    let premature = postproc::pp_rounding(
        &RoundingSpec {
            rules: vec![("c".into(), 2)],
            force_precision: false,
        },
        vec![Configuration::from_params(vec![(
            "c".into(),
            ParamValue::Interval { min: 0.0, max: 1.0 },
        )])],
    );
    assert!(matches!(premature, Err(PostprocError::RoundingUnrealized { .. })));
    pass(10, "0.005 -> 0.01, pow gives 8.0, ignore-after-expression works, reversal errors");
}

#[test]
fn criterion_11_csv_dump() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("db");
    let solver = biased_solver(dir.path(), None);
    let tree = write_tree(
        dir.path(),
        "batch.json",
        r#"{"type": "discrete", "name": "alpha", "values": [1, 2]}"#,
    );
    let store = open_store(&store_dir).unwrap();
    run_batch(
        &store,
        "dumpme",
        &BatchRun {
            tree_text: Some(std::fs::read_to_string(&tree).unwrap()),
            executable: Some(solver.to_string_lossy().into_owned()),
            repetitions: Some(2),
            ..BatchRun::default()
        },
    )
    .unwrap();

    let csv = store.dump_csv("dumpme").unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(
        header,
        vec!["alpha", "cost", "time", "repetition", "host", "started_at", "exit_status"]
    );
    let records = store.experiments_of("dumpme");
    assert_eq!(records.len(), 4);
    for (line, record) in lines[1..].iter().zip(&records) {
        let cells: Vec<&str> = line.split(',').collect();
        let alpha = record.config.get("alpha").unwrap().as_f64().unwrap();
        assert_eq!(cells[0].parse::<f64>().unwrap(), alpha);
        let stats = record.stats.as_ref().unwrap();
        assert_eq!(cells[1].parse::<f64>().unwrap(), stats["cost"].as_f64().unwrap());
        assert_eq!(cells[2].parse::<f64>().unwrap(), stats["time"].as_f64().unwrap());
        assert_eq!(cells[3].parse::<u32>().unwrap(), record.repetition);
        assert_eq!(cells[4], record.host);
        assert_eq!(cells[6].parse::<i32>().unwrap(), record.exit_status);
    }

    // Race dump carries a correct `winning` column.
    let race_tree = write_tree(
        dir.path(),
        "race.json",
        r#"{
        "type": "and",
        "descendants": [
            {"type": "discrete", "name": "alpha", "values": [0, 10, 20]},
            {"type": "discrete", "name": "instance", "values": [1,2,3,4,5,6,7,8]}
        ]
    }"#,
    );
    run_race(
        &store,
        "dumprace",
        &RaceRun {
            batch: BatchRun {
                tree_text: Some(std::fs::read_to_string(&race_tree).unwrap()),
                executable: Some(solver.to_string_lossy().into_owned()),
                ..BatchRun::default()
            },
            instance_param: Some("instance".into()),
            performance_param: Some("cost".into()),
            ..RaceRun::default()
        },
    )
    .unwrap();
    let winners = show_winning(&store, "dumprace").unwrap();
    assert_eq!(winners.len(), 1);
    let csv = store.dump_csv("dumprace").unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].ends_with(",winning"));
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        let alpha: f64 = cells[0].parse().unwrap();
        let winning: bool = cells[cells.len() - 1].parse().unwrap();
        assert_eq!(winning, alpha == 0.0, "{line}");
    }
    pass(11, "4 data rows match the store cell for cell; race dump has a correct winning column");
}

/// One-dimensional star discrepancy of a sample in [0, 1).
fn star_discrepancy(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let up = (i as f64 + 1.0) / n - x;
            let down = x - i as f64 / n;
            up.max(down)
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_12_low_discrepancy_beats_uniform() {
    let n = 256u64;
    let coords: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            (0..n)
                .map(|i| hammersley_point(i, n, 4).unwrap()[j])
                .collect()
        })
        .collect();
    for (j, coordinate) in coords.iter().enumerate() {
        let hammersley_d = star_discrepancy(coordinate);
        let mut wins = 0;
        for seed in 0..100u64 {
            let mut rng = SplitMix64::new(1000 + seed);
            let random: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            if hammersley_d < star_discrepancy(&random) {
                wins += 1;
            }
        }
        assert!(wins >= 99, "coordinate {j}: won only {wins}/100 trials");
    }
    pass(12, "each coordinate's star discrepancy beats uniform sampling in >=99/100 seeded trials");
}
