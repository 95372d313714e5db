//! Expansion of a parameter tree into the ordered stream of configurations.
//!
//! `and` nodes produce the cartesian product of their descendants with the
//! leftmost descendant varying slowest, `or` nodes concatenate their
//! descendants in order, leaves produce one single-parameter configuration
//! per value. A node's post-processors run after its own combination step
//! and receive the node's configuration list as a whole.
//!
//! Expansion is streaming: cartesian products are never materialized, only
//! the per-descendant value lists and the sub-lists of nodes that carry
//! post-processors are.

use std::collections::BTreeSet;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::pattern::compile_anchored;
use crate::postproc::{self, PostprocError};
use crate::tree::{DiscreteValues, InnerKind, Node, ParamTree, Scalar};

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("leaf `{name}` generated no values from `{path}`")]
    EmptyLeaf { name: String, path: String },
    #[error("invalid pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        source: regex::Error,
    },
    #[error("{node}: parameter `{name}` would appear more than once in a combined configuration")]
    DuplicateParam { name: String, node: String },
    #[error("{node}: {source}")]
    Postproc {
        node: String,
        source: PostprocError,
    },
    #[error("parameter `{name}` is an unsampled continuous interval and cannot be rendered")]
    UnrealizedValue { name: String },
    #[error("node is not a leaf")]
    NotALeaf,
}

/// A realized or still-unrealized parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Scalar(Scalar),
    /// A value-less flag parameter.
    Flag,
    /// A continuous interval awaiting a hammersley post-processor.
    Interval { min: f64, max: f64 },
}

impl ParamValue {
    pub fn int(i: i64) -> Self {
        ParamValue::Scalar(Scalar::Int(i))
    }

    pub fn float(v: f64) -> Self {
        ParamValue::Scalar(Scalar::float(v))
    }

    pub fn str(s: impl Into<String>) -> Self {
        ParamValue::Scalar(Scalar::Str(s.into()))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Scalar(s) => s.as_f64(),
            _ => None,
        }
    }

    /// Canonical form used for configuration equality: numbers compare by
    /// value (10 == 10.0), rendering hints are ignored.
    pub fn canonical(&self) -> String {
        match self {
            ParamValue::Scalar(Scalar::Int(i)) => {
                if *i as f64 as i64 == *i {
                    format!("n:{:?}", *i as f64)
                } else {
                    format!("n:{i}")
                }
            }
            ParamValue::Scalar(Scalar::Float { value, .. }) => format!("n:{value:?}"),
            ParamValue::Scalar(Scalar::Str(s)) => format!("s:{s}"),
            ParamValue::Scalar(Scalar::Bool(b)) => format!("b:{b}"),
            ParamValue::Flag => "flag".to_string(),
            ParamValue::Interval { min, max } => format!("i:{min:?}..{max:?}"),
        }
    }
}

/// One complete assignment of values to parameters, in rendering order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configuration {
    params: Vec<(String, ParamValue)>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: Vec<(String, ParamValue)>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[(String, ParamValue)] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<(String, ParamValue)> {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|(n, _)| n == name)
    }

    pub fn insert_at(&mut self, index: usize, name: impl Into<String>, value: ParamValue) {
        let index = index.min(self.params.len());
        self.params.insert(index, (name.into(), value));
    }

    pub fn without(&self, name: &str) -> Configuration {
        Configuration {
            params: self
                .params
                .iter()
                .filter(|(n, _)| n != name)
                .cloned()
                .collect(),
        }
    }

    /// Order-insensitive key identifying this configuration for reuse: a
    /// sorted name -> canonical-value map rendered as JSON.
    pub fn normalized_key(&self) -> String {
        let map: std::collections::BTreeMap<&str, String> = self
            .params
            .iter()
            .map(|(n, v)| (n.as_str(), v.canonical()))
            .collect();
        serde_json::to_string(&map).expect("key serialization cannot fail")
    }

    pub fn normalized_key_excluding(&self, name: &str) -> String {
        self.without(name).normalized_key()
    }
}

fn param_value_to_json(v: &ParamValue) -> Value {
    match v {
        ParamValue::Scalar(Scalar::Int(i)) => Value::from(*i),
        ParamValue::Scalar(Scalar::Float {
            value,
            decimals: None,
        }) => Value::from(*value),
        ParamValue::Scalar(Scalar::Float {
            value,
            decimals: Some(d),
        }) => serde_json::json!({"value": value, "decimals": d}),
        ParamValue::Scalar(Scalar::Str(s)) => Value::from(s.clone()),
        ParamValue::Scalar(Scalar::Bool(b)) => Value::from(*b),
        ParamValue::Flag => serde_json::json!({"flag": true}),
        ParamValue::Interval { min, max } => serde_json::json!({"interval": [min, max]}),
    }
}

fn param_value_from_json(v: &Value) -> Result<ParamValue, String> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(ParamValue::int(i))
            } else {
                Ok(ParamValue::float(n.as_f64().ok_or("unrepresentable number")?))
            }
        }
        Value::String(s) => Ok(ParamValue::str(s.clone())),
        Value::Bool(b) => Ok(ParamValue::Scalar(Scalar::Bool(*b))),
        Value::Object(map) => {
            if map.get("flag").is_some() {
                Ok(ParamValue::Flag)
            } else if let Some(bounds) = map.get("interval").and_then(Value::as_array) {
                let min = bounds.first().and_then(Value::as_f64).ok_or("bad interval")?;
                let max = bounds.get(1).and_then(Value::as_f64).ok_or("bad interval")?;
                Ok(ParamValue::Interval { min, max })
            } else if let Some(value) = map.get("value").and_then(Value::as_f64) {
                let decimals = map.get("decimals").and_then(Value::as_u64).map(|d| d as u32);
                Ok(ParamValue::Scalar(Scalar::Float { value, decimals }))
            } else {
                Err(format!("unrecognized parameter value object: {v}"))
            }
        }
        other => Err(format!("unrecognized parameter value: {other}")),
    }
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        param_value_to_json(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        param_value_from_json(&value).map_err(D::Error::custom)
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(String, Value)> = self
            .params
            .iter()
            .map(|(n, v)| (n.clone(), param_value_to_json(v)))
            .collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(String, Value)>::deserialize(deserializer)?;
        let mut params = Vec::with_capacity(pairs.len());
        for (name, value) in pairs {
            params.push((name, param_value_from_json(&value).map_err(D::Error::custom)?));
        }
        Ok(Configuration { params })
    }
}

/// The ordered, lazily produced sequence of configurations of a tree.
pub struct ConfigStream {
    inner: Box<dyn Iterator<Item = Configuration>>,
}

impl Iterator for ConfigStream {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        self.inner.next()
    }
}

/// Produces the ordered values of a leaf node. Implicit ranges are realized
/// here; a value is included while min + i*step <= max + step*1e-9.
pub fn leaf_values(leaf: &Node) -> Result<Vec<ParamValue>, ExpandError> {
    match leaf {
        Node::Discrete(d) => Ok(match &d.values {
            DiscreteValues::Explicit(scalars) => scalars
                .iter()
                .map(|s| ParamValue::Scalar(s.clone()))
                .collect(),
            DiscreteValues::Range { min, max, step } => {
                let mut values = Vec::new();
                let eps = step * 1e-9;
                let mut i = 0u64;
                loop {
                    let v = min + i as f64 * step;
                    if v > max + eps {
                        break;
                    }
                    values.push(ParamValue::float(v));
                    i += 1;
                }
                values
            }
        }),
        Node::File(f) => {
            let re = compile_anchored(&f.pattern).map_err(|source| ExpandError::Pattern {
                pattern: f.pattern.clone(),
                source,
            })?;
            let text = std::fs::read_to_string(&f.path).map_err(|source| ExpandError::Io {
                path: f.path.clone(),
                source,
            })?;
            let values: Vec<ParamValue> = text
                .lines()
                .filter(|line| re.is_match(line))
                .map(ParamValue::str)
                .collect();
            if values.is_empty() {
                return Err(ExpandError::EmptyLeaf {
                    name: f.name.clone(),
                    path: f.path.clone(),
                });
            }
            Ok(values)
        }
        Node::Directory(d) => {
            let re = compile_anchored(&d.pattern).map_err(|source| ExpandError::Pattern {
                pattern: d.pattern.clone(),
                source,
            })?;
            let entries = std::fs::read_dir(&d.path).map_err(|source| ExpandError::Io {
                path: d.path.clone(),
                source,
            })?;
            let mut names = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|source| ExpandError::Io {
                    path: d.path.clone(),
                    source,
                })?;
                let name = entry.file_name().to_string_lossy().to_string();
                if re.is_match(&name) {
                    names.push(name);
                }
            }
            names.sort();
            if names.is_empty() {
                return Err(ExpandError::EmptyLeaf {
                    name: d.name.clone(),
                    path: d.path.clone(),
                });
            }
            Ok(names
                .into_iter()
                .map(|n| {
                    ParamValue::str(
                        std::path::Path::new(&d.path)
                            .join(n)
                            .to_string_lossy()
                            .to_string(),
                    )
                })
                .collect())
        }
        Node::Flag(_) => Ok(vec![ParamValue::Flag]),
        Node::Continuous(c) => Ok(vec![ParamValue::Interval {
            min: c.min,
            max: c.max,
        }]),
        Node::Inner(_) => Err(ExpandError::NotALeaf),
    }
}

fn leaf_name(leaf: &Node) -> &str {
    match leaf {
        Node::Discrete(d) => &d.name,
        Node::Continuous(c) => &c.name,
        Node::File(f) => &f.name,
        Node::Directory(d) => &d.name,
        Node::Flag(f) => &f.name,
        Node::Inner(_) => unreachable!("inner nodes have no parameter name"),
    }
}

struct CartesianProduct {
    lists: Vec<Vec<Configuration>>,
    indices: Vec<usize>,
    done: bool,
}

impl CartesianProduct {
    fn new(lists: Vec<Vec<Configuration>>) -> Self {
        let done = lists.iter().any(Vec::is_empty);
        let indices = vec![0; lists.len()];
        Self { lists, indices, done }
    }
}

impl Iterator for CartesianProduct {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        if self.done {
            return None;
        }
        let mut params = Vec::new();
        for (list, &i) in self.lists.iter().zip(&self.indices) {
            params.extend(list[i].params.iter().cloned());
        }
        // Advance the rightmost index first so the leftmost varies slowest.
        let mut pos = self.lists.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.indices[pos] += 1;
            if self.indices[pos] < self.lists[pos].len() {
                break;
            }
            self.indices[pos] = 0;
        }
        Some(Configuration { params })
    }
}

fn build(node: &Node, path: &str) -> Result<Box<dyn Iterator<Item = Configuration>>, ExpandError> {
    match node {
        Node::Inner(inner) => {
            let combined: Box<dyn Iterator<Item = Configuration>> = match inner.kind {
                InnerKind::Or => {
                    let mut chained: Box<dyn Iterator<Item = Configuration>> =
                        Box::new(std::iter::empty());
                    for (i, d) in inner.descendants.iter().enumerate() {
                        let child = build(d, &format!("{path}.descendants[{i}]"))?;
                        chained = Box::new(chained.chain(child));
                    }
                    chained
                }
                InnerKind::And => {
                    let mut lists = Vec::with_capacity(inner.descendants.len());
                    let mut seen_names: BTreeSet<String> = BTreeSet::new();
                    for (i, d) in inner.descendants.iter().enumerate() {
                        let child: Vec<Configuration> =
                            build(d, &format!("{path}.descendants[{i}]"))?.collect();
                        // A name produced by two descendants always pairs up
                        // somewhere in the full product.
                        for config in &child {
                            for (name, _) in config.params() {
                                if seen_names.contains(name) {
                                    return Err(ExpandError::DuplicateParam {
                                        name: name.clone(),
                                        node: path.to_string(),
                                    });
                                }
                            }
                        }
                        for config in &child {
                            for (name, _) in config.params() {
                                seen_names.insert(name.clone());
                            }
                        }
                        lists.push(child);
                    }
                    Box::new(CartesianProduct::new(lists))
                }
            };
            if inner.postprocessors.is_empty() {
                Ok(combined)
            } else {
                let materialized: Vec<Configuration> = combined.collect();
                let processed = postproc::apply_postprocessors(&inner.postprocessors, materialized)
                    .map_err(|source| ExpandError::Postproc {
                        node: path.to_string(),
                        source,
                    })?;
                Ok(Box::new(processed.into_iter()))
            }
        }
        leaf => {
            let name = leaf_name(leaf).to_string();
            let values = leaf_values(leaf)?;
            let configs: Vec<Configuration> = values
                .into_iter()
                .map(|v| Configuration {
                    params: vec![(name.clone(), v)],
                })
                .collect();
            Ok(Box::new(configs.into_iter()))
        }
    }
}

/// Expands a tree into its configuration stream. All file access and every
/// post-processor runs during this call; iteration itself cannot fail.
pub fn expand(tree: &ParamTree) -> Result<ConfigStream, ExpandError> {
    Ok(ConfigStream {
        inner: build(&tree.root, "root")?,
    })
}

/// Renders a scalar the way it will appear on a command line. Integers keep
/// their integer form, floats use the shortest round-trip representation
/// (always with a decimal point or exponent), pinned-precision floats render
/// with exactly that many decimals.
pub fn render_scalar(s: &Scalar) -> String {
    match s {
        Scalar::Int(i) => i.to_string(),
        Scalar::Float {
            value,
            decimals: None,
        } => format!("{value:?}"),
        Scalar::Float {
            value,
            decimals: Some(d),
        } => format!("{value:.*}", *d as usize),
        Scalar::Str(s) => s.clone(),
        Scalar::Bool(b) => b.to_string(),
    }
}

/// Renders a configuration as one command line: `--name value` per
/// parameter, flags as bare `--name`, joined by single spaces.
pub fn format_cll(config: &Configuration) -> Result<String, ExpandError> {
    let mut parts = Vec::with_capacity(config.len());
    for (name, value) in config.params() {
        match value {
            ParamValue::Flag => parts.push(format!("--{name}")),
            ParamValue::Scalar(s) => parts.push(format!("--{name} {}", render_scalar(s))),
            ParamValue::Interval { .. } => {
                return Err(ExpandError::UnrealizedValue { name: name.clone() })
            }
        }
    }
    Ok(parts.join(" "))
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn csv_line(cells: &[String]) -> String {
    cells
        .iter()
        .map(|c| csv_cell(c))
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders a configuration stream as a CSV table. The header is the union
/// of parameter names in first-appearance order; flags render as `true`,
/// absent parameters as empty cells.
pub fn format_csv<I>(stream: I) -> Result<String, ExpandError>
where
    I: IntoIterator<Item = Configuration>,
{
    let configs: Vec<Configuration> = stream.into_iter().collect();
    let mut header: Vec<String> = Vec::new();
    for config in &configs {
        for (name, _) in config.params() {
            if !header.iter().any(|h| h == name) {
                header.push(name.clone());
            }
        }
    }
    let mut out = String::new();
    out.push_str(&csv_line(&header));
    out.push('\n');
    for config in &configs {
        let mut cells = Vec::with_capacity(header.len());
        for name in &header {
            let cell = match config.get(name) {
                None => String::new(),
                Some(ParamValue::Flag) => "true".to_string(),
                Some(ParamValue::Scalar(s)) => render_scalar(s),
                Some(ParamValue::Interval { .. }) => {
                    return Err(ExpandError::UnrealizedValue { name: name.clone() })
                }
            };
            cells.push(cell);
        }
        out.push_str(&csv_line(&cells));
        out.push('\n');
    }
    Ok(out)
}
