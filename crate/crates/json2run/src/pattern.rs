//! Anchored pattern matching for parameter names.
//!
//! Every `match` field in an experiment file is applied to the *whole*
//! candidate string, so `p1|p2` selects exactly the parameters named `p1`
//! and `p2` and nothing else.

use regex::Regex;

/// Compiles `pat` so that it must match the entire candidate string.
pub fn compile_anchored(pat: &str) -> Result<Regex, regex::Error> {
    Regex::new(&format!("^(?:{pat})$"))
}
