//! Describe experiments as JSON parameter trees, expand them into
//! configurations, run them in parallel against an external executable, and
//! race configurations with rank-based statistical elimination to find the
//! best parameter settings.
//!
//! The `j2r` binary exposes everything as a command line tool; this crate is
//! the library behind it. A quick tour:
//!
//! ```
//! use json2run::{expand, format_cll, parse_experiment};
//!
//! let tree = parse_experiment(r#"{
//!     "type": "and",
//!     "descendants": [
//!         {"type": "discrete", "name": "a", "values": ["foo", "bar"]},
//!         {"type": "discrete", "name": "b", "values": {"min": 0, "max": 1, "step": 0.5}}
//!     ]
//! }"#).unwrap();
//! let lines: Vec<String> = expand(&tree).unwrap()
//!     .map(|c| format_cll(&c).unwrap())
//!     .collect();
//! assert_eq!(lines[0], "--a foo --b 0.0");
//! assert_eq!(lines.len(), 6);
//! ```
//!
//! ## Module map
//!
//! - [`tree`] — parse and validate the JSON experiment file.
//! - [`expand`] — turn a tree into the ordered configuration stream and
//!   render it as command lines or CSV.
//! - [`postproc`] — the six post-processors (`expression`, `ignore`,
//!   `sorting`, `hammersley`, `rounding`, `renaming`).
//! - [`lowdisc`] — the scaled Hammersley point set.
//! - [`store`] — the embedded JSON-lines document store for batches and
//!   experiments.
//! - [`runner`] — parallel batch execution with resume and greedy reuse.
//! - [`race`] — rank-based racing with Friedman/post-hoc elimination.
//! - [`cli`] — the `j2r` argument surface and action dispatch.
//!
//! ## Runnable examples
//!
//! One example per capability lives in `examples/`:
//!
//! ```bash
//! cargo run --example print_command_lines
//! cargo run --example print_csv
//! cargo run --example hammersley_sampling
//! cargo run --example postprocessor_pipeline
//! cargo run --example run_batch
//! cargo run --example run_race
//! cargo run --example inspect_store
//! ```

pub mod cli;
pub mod expand;
pub mod lowdisc;
mod pattern;
pub mod postproc;
pub mod race;
pub mod rng;
pub mod runner;
pub mod store;
pub mod tree;

pub use expand::{expand, format_cll, format_csv, ConfigStream, Configuration, ParamValue};
pub use race::{run_race, show_winning, RaceRun};
pub use runner::{run_batch, BatchRun};
pub use store::{open_store, StoreHandle};
pub use tree::{parse_experiment, validate, ParamTree, ValidationReport};
