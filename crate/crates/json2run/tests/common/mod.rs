#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn j2r_bin() -> &'static str {
    env!("CARGO_BIN_EXE_j2r")
}

pub fn run_j2r(args: &[&str], store_dir: &Path) -> Output {
    Command::new(j2r_bin())
        .args(args)
        .env("J2R_STORE_DIR", store_dir)
        .output()
        .expect("j2r binary runs")
}

pub fn stdout_lines(output: &Output) -> Vec<String> {
    String::from_utf8_lossy(&output.stdout)
        .lines()
        .map(str::to_string)
        .collect()
}

pub fn write_executable(dir: &Path, name: &str, content: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    let mut perms = std::fs::metadata(&path).unwrap().permissions();
    perms.set_mode(0o755);
    std::fs::set_permissions(&path, perms).unwrap();
    path
}

/// A solver whose cost is the sum of its numeric `--alpha` and `--instance`
/// arguments; appends one line to `count_file` per invocation when given.
pub fn biased_solver(dir: &Path, count_file: Option<&Path>) -> PathBuf {
    let count = match count_file {
        Some(path) => format!("echo x >> {}\n", path.display()),
        None => String::new(),
    };
    write_executable(
        dir,
        "solver.sh",
        &format!(
            "#!/bin/sh\n\
             alpha=0; inst=0\n\
             while [ $# -gt 0 ]; do\n\
             case \"$1\" in\n\
             --alpha) alpha=$2; shift 2;;\n\
             --instance) inst=$2; shift 2;;\n\
             *) shift;;\n\
             esac\n\
             done\n\
             {count}\
             printf '{{\"cost\": %d, \"time\": 7}}\\n' $((alpha + inst))\n"
        ),
    )
}

pub fn write_tree(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub const INTRO_TREE: &str = r#"{
    "type": "and",
    "descendants": [
        {
            "type": "discrete",
            "name": "a",
            "values": [ "foo", "bar", "baz" ]
        },
        {
            "type": "or",
            "descendants": [
                {
                    "type": "discrete",
                    "name": "b1",
                    "values": { "min": 0.0, "max": 1.0, "step": 0.25 }
                },
                {
                    "type": "discrete",
                    "name": "b2",
                    "values": { "min": 2.0, "max": 10.0, "step": 2.0 }
                }
            ]
        }
    ]
}"#;

pub const SA_TREE: &str = r#"{
    "type": "and",
    "descendants": [
        {
            "type": "discrete",
            "name": "initial_temperature",
            "values": { "min": 10, "max": 30, "step": 10 }
        },
        {
            "type": "discrete",
            "name": "cooling_schedule",
            "values": [ 0.999, 0.99, 0.9 ]
        }
    ]
}"#;

pub const SA_TS_TREE: &str = r#"{
    "type": "or",
    "descendants": [
        {
            "type": "and",
            "descendants": [
                { "type": "discrete", "name": "algorithm", "values": [ "sa" ] },
                {
                    "type": "discrete",
                    "name": "initial_temperature",
                    "values": { "min": 10, "max": 20, "step": 10 }
                },
                { "type": "discrete", "name": "cooling_schedule", "values": [ 0.999, 0.99 ] }
            ]
        },
        {
            "type": "and",
            "descendants": [
                { "type": "discrete", "name": "algorithm", "values": [ "ts" ] },
                { "type": "discrete", "name": "tabu_list_length", "values": [ 10, 15, 20 ] }
            ]
        }
    ]
}"#;

/// Three configurations crossed with twenty instances; solver cost is
/// alpha + instance, so alpha 0 dominates on every instance.
pub const RACE_TREE: &str = r#"{
    "type": "and",
    "descendants": [
        {"type": "discrete", "name": "alpha", "values": [0, 10, 20]},
        {"type": "discrete", "name": "instance",
         "values": [1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20]}
    ]
}"#;
