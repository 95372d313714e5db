//! Parsing and validation of JSON experiment files.
//!
//! An experiment file is a tree of JSON objects, each with at least a `type`
//! field. Inner nodes (`and`, `or`) combine or alternate their descendants
//! and may carry an ordered `postprocessors` list; leaf nodes generate values
//! for a single parameter. Unknown object fields are ignored, so free-form
//! `comment` entries are legal anywhere.

use serde_json::Value;
use thiserror::Error;

use crate::pattern::compile_anchored;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("the experiment file must be a single JSON object")]
    NotAnObject,
    #[error("{path}: {message}")]
    Structure { path: String, message: String },
}

fn structure(path: &str, message: impl Into<String>) -> TreeError {
    TreeError::Structure {
        path: path.to_string(),
        message: message.into(),
    }
}

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree {
    pub root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerKind {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Inner(InnerNode),
    Discrete(DiscreteLeaf),
    Continuous(ContinuousLeaf),
    File(FileLeaf),
    Directory(DirectoryLeaf),
    Flag(FlagLeaf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerNode {
    pub kind: InnerKind,
    pub descendants: Vec<Node>,
    pub postprocessors: Vec<PostProcessorSpec>,
}

/// A scalar value as it appears in the experiment file. Integer and float
/// forms are kept distinct because they render differently on the generated
/// command lines (`10` vs `10.0`); `decimals` pins a fixed number of decimal
/// digits when a rounding post-processor ran with `force_precision`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float { value: f64, decimals: Option<u32> },
    Str(String),
    Bool(bool),
}

impl Scalar {
    pub fn float(value: f64) -> Self {
        Scalar::Float {
            value,
            decimals: None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float { value, .. } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteValues {
    Explicit(Vec<Scalar>),
    /// min, min+step, min+2*step, ... for every value <= max (+ step*1e-9).
    Range { min: f64, max: f64, step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLeaf {
    pub name: String,
    pub values: DiscreteValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLeaf {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileLeaf {
    pub name: String,
    pub path: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryLeaf {
    pub name: String,
    pub path: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagLeaf {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostProcessorSpec {
    Expression(ExpressionSpec),
    Ignore { pattern: String },
    Sorting { order: Vec<String> },
    Hammersley { points: u64 },
    Rounding(RoundingSpec),
    Renaming { rename: Vec<(String, String)> },
}

impl PostProcessorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PostProcessorSpec::Expression(_) => "expression",
            PostProcessorSpec::Ignore { .. } => "ignore",
            PostProcessorSpec::Sorting { .. } => "sorting",
            PostProcessorSpec::Hammersley { .. } => "hammersley",
            PostProcessorSpec::Rounding(_) => "rounding",
            PostProcessorSpec::Renaming { .. } => "renaming",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSpec {
    pub pattern: String,
    pub result: String,
    pub kind: ExpressionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpressionKind {
    /// Evaluates to the value of a new discrete parameter.
    Discrete { expression: String },
    /// Evaluates the bounds of a new continuous parameter.
    Continuous { min: String, max: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundingSpec {
    /// (pattern, decimal digits) pairs, applied in order.
    pub rules: Vec<(String, u32)>,
    pub force_precision: bool,
}

/// Parses the text of an experiment file into a typed tree.
pub fn parse_experiment(text: &str) -> Result<ParamTree, TreeError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TreeError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if !value.is_object() {
        return Err(TreeError::NotAnObject);
    }
    let root = parse_node(&value, "root")?;
    Ok(ParamTree { root })
}

fn require_field<'a>(obj: &'a Value, field: &str, path: &str) -> Result<&'a Value, TreeError> {
    obj.get(field)
        .ok_or_else(|| structure(path, format!("missing mandatory field `{field}`")))
}

fn require_str(obj: &Value, field: &str, path: &str) -> Result<String, TreeError> {
    require_field(obj, field, path)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| structure(path, format!("field `{field}` must be a string")))
}

fn require_name(obj: &Value, path: &str) -> Result<String, TreeError> {
    let name = require_str(obj, "name", path)?;
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(structure(
            path,
            format!("parameter name {name:?} must be non-empty and contain no whitespace"),
        ));
    }
    Ok(name)
}

fn number_field(obj: &Value, field: &str, path: &str) -> Result<f64, TreeError> {
    require_field(obj, field, path)?
        .as_f64()
        .ok_or_else(|| structure(path, format!("field `{field}` must be a number")))
}

fn parse_scalar(v: &Value, path: &str) -> Result<Scalar, TreeError> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Scalar::Int(i))
            } else if let Some(f) = n.as_f64() {
                Ok(Scalar::float(f))
            } else {
                Err(structure(path, format!("unrepresentable number {n}")))
            }
        }
        Value::String(s) => Ok(Scalar::Str(s.clone())),
        Value::Bool(b) => Ok(Scalar::Bool(*b)),
        other => Err(structure(
            path,
            format!("values must be numbers, strings or booleans, found {other}"),
        )),
    }
}

fn parse_node(v: &Value, path: &str) -> Result<Node, TreeError> {
    if !v.is_object() {
        return Err(structure(path, "node must be a JSON object"));
    }
    let node_type = require_str(v, "type", path)?;
    match node_type.as_str() {
        "and" | "or" => {
            let kind = if node_type == "and" {
                InnerKind::And
            } else {
                InnerKind::Or
            };
            let descendants_value = require_field(v, "descendants", path)?;
            let list = descendants_value
                .as_array()
                .ok_or_else(|| structure(path, "field `descendants` must be an array"))?;
            if list.is_empty() {
                return Err(structure(path, "field `descendants` must not be empty"));
            }
            let mut descendants = Vec::with_capacity(list.len());
            for (i, d) in list.iter().enumerate() {
                descendants.push(parse_node(d, &format!("{path}.descendants[{i}]"))?);
            }
            let mut postprocessors = Vec::new();
            if let Some(pp) = v.get("postprocessors") {
                let list = pp
                    .as_array()
                    .ok_or_else(|| structure(path, "field `postprocessors` must be an array"))?;
                for (i, p) in list.iter().enumerate() {
                    postprocessors
                        .push(parse_postprocessor(p, &format!("{path}.postprocessors[{i}]"))?);
                }
            }
            Ok(Node::Inner(InnerNode {
                kind,
                descendants,
                postprocessors,
            }))
        }
        "discrete" => {
            let name = require_name(v, path)?;
            let values = require_field(v, "values", path)?;
            let values = match values {
                Value::Array(items) => {
                    let mut scalars = Vec::with_capacity(items.len());
                    for (i, item) in items.iter().enumerate() {
                        scalars.push(parse_scalar(item, &format!("{path}.values[{i}]"))?);
                    }
                    if scalars.is_empty() {
                        return Err(structure(path, "explicit `values` must not be empty"));
                    }
                    DiscreteValues::Explicit(scalars)
                }
                Value::Object(_) => {
                    let min = number_field(values, "min", path)?;
                    let max = number_field(values, "max", path)?;
                    let step = number_field(values, "step", path)?;
                    if step <= 0.0 {
                        return Err(structure(path, "implicit `step` must be positive"));
                    }
                    if min > max {
                        return Err(structure(path, "implicit `min` must not exceed `max`"));
                    }
                    DiscreteValues::Range { min, max, step }
                }
                _ => {
                    return Err(structure(
                        path,
                        "field `values` must be an array or a {min, max, step} object",
                    ))
                }
            };
            Ok(Node::Discrete(DiscreteLeaf { name, values }))
        }
        "continuous" => {
            let name = require_name(v, path)?;
            let values = require_field(v, "values", path)?;
            if !values.is_object() {
                return Err(structure(path, "field `values` must be a {min, max} object"));
            }
            let min = number_field(values, "min", path)?;
            let max = number_field(values, "max", path)?;
            if min >= max {
                return Err(structure(path, "continuous `min` must be strictly below `max`"));
            }
            Ok(Node::Continuous(ContinuousLeaf { name, min, max }))
        }
        "file" => Ok(Node::File(FileLeaf {
            name: require_name(v, path)?,
            path: require_str(v, "path", path)?,
            pattern: require_str(v, "match", path)?,
        })),
        "directory" => Ok(Node::Directory(DirectoryLeaf {
            name: require_name(v, path)?,
            path: require_str(v, "path", path)?,
            pattern: require_str(v, "match", path)?,
        })),
        "flag" => Ok(Node::Flag(FlagLeaf {
            name: require_name(v, path)?,
        })),
        other => Err(structure(path, format!("unknown node type `{other}`"))),
    }
}

fn parse_postprocessor(v: &Value, path: &str) -> Result<PostProcessorSpec, TreeError> {
    if !v.is_object() {
        return Err(structure(path, "post-processor must be a JSON object"));
    }
    let pp_type = require_str(v, "type", path)?;
    match pp_type.as_str() {
        "expression" => {
            let pattern = require_str(v, "match", path)?;
            let result = require_str(v, "result", path)?;
            if result.is_empty() || result.chars().any(char::is_whitespace) {
                return Err(structure(path, "field `result` must be a valid parameter name"));
            }
            let expression = v.get("expression");
            let min = v.get("min");
            let max = v.get("max");
            let kind = match (expression, min, max) {
                (Some(e), None, None) => ExpressionKind::Discrete {
                    expression: e
                        .as_str()
                        .ok_or_else(|| structure(path, "field `expression` must be a string"))?
                        .to_string(),
                },
                (None, Some(lo), Some(hi)) => ExpressionKind::Continuous {
                    min: lo
                        .as_str()
                        .ok_or_else(|| structure(path, "field `min` must be a string"))?
                        .to_string(),
                    max: hi
                        .as_str()
                        .ok_or_else(|| structure(path, "field `max` must be a string"))?
                        .to_string(),
                },
                _ => {
                    return Err(structure(
                        path,
                        "expression post-processor needs either `expression` or both `min` and `max`",
                    ))
                }
            };
            Ok(PostProcessorSpec::Expression(ExpressionSpec {
                pattern,
                result,
                kind,
            }))
        }
        "ignore" => Ok(PostProcessorSpec::Ignore {
            pattern: require_str(v, "match", path)?,
        }),
        "sorting" => {
            let order_value = require_field(v, "order", path)?;
            let list = order_value
                .as_array()
                .ok_or_else(|| structure(path, "field `order` must be an array"))?;
            let mut order = Vec::with_capacity(list.len());
            for item in list {
                order.push(
                    item.as_str()
                        .ok_or_else(|| structure(path, "`order` entries must be strings"))?
                        .to_string(),
                );
            }
            Ok(PostProcessorSpec::Sorting { order })
        }
        "hammersley" => {
            let points = require_field(v, "points", path)?
                .as_u64()
                .ok_or_else(|| structure(path, "field `points` must be a positive integer"))?;
            if points == 0 {
                return Err(structure(path, "field `points` must be at least 1"));
            }
            Ok(PostProcessorSpec::Hammersley { points })
        }
        "rounding" | "round" => {
            let force_precision = match v.get("force_precision") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => {
                    return Err(structure(path, "field `force_precision` must be a boolean"))
                }
            };
            let mut rules = Vec::new();
            if let Some(m) = v.get("match") {
                let pattern = m
                    .as_str()
                    .ok_or_else(|| structure(path, "field `match` must be a string"))?
                    .to_string();
                let digits = require_field(v, "decimal_digits", path)?
                    .as_u64()
                    .ok_or_else(|| {
                        structure(path, "field `decimal_digits` must be a non-negative integer")
                    })?;
                rules.push((pattern, digits as u32));
            } else if let Some(compact) = v.get("round") {
                match compact {
                    Value::Object(map) => {
                        for (pattern, digits) in map {
                            let digits = digits.as_u64().ok_or_else(|| {
                                structure(path, "`round` digits must be non-negative integers")
                            })?;
                            rules.push((pattern.clone(), digits as u32));
                        }
                    }
                    Value::Array(items) => {
                        for item in items {
                            let map = item.as_object().ok_or_else(|| {
                                structure(path, "`round` entries must be {pattern: digits} objects")
                            })?;
                            for (pattern, digits) in map {
                                let digits = digits.as_u64().ok_or_else(|| {
                                    structure(path, "`round` digits must be non-negative integers")
                                })?;
                                rules.push((pattern.clone(), digits as u32));
                            }
                        }
                    }
                    _ => {
                        return Err(structure(
                            path,
                            "field `round` must be an object or an array of objects",
                        ))
                    }
                }
                if rules.is_empty() {
                    return Err(structure(path, "field `round` must not be empty"));
                }
            } else {
                return Err(structure(path, "missing mandatory field `match`"));
            }
            Ok(PostProcessorSpec::Rounding(RoundingSpec {
                rules,
                force_precision,
            }))
        }
        "renaming" => {
            let map = require_field(v, "rename", path)?
                .as_object()
                .ok_or_else(|| structure(path, "field `rename` must be an object"))?;
            let mut rename = Vec::with_capacity(map.len());
            for (old, new) in map {
                let new = new
                    .as_str()
                    .ok_or_else(|| structure(path, "`rename` values must be strings"))?;
                rename.push((old.clone(), new.to_string()));
            }
            Ok(PostProcessorSpec::Renaming { rename })
        }
        other => Err(structure(path, format!("unknown post-processor type `{other}`"))),
    }
}

impl ParamTree {
    /// Renders the tree back to its JSON representation.
    pub fn to_json(&self) -> Value {
        node_to_json(&self.root)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("tree serialization cannot fail")
    }
}

fn scalar_to_json(s: &Scalar) -> Value {
    match s {
        Scalar::Int(i) => Value::from(*i),
        Scalar::Float { value, .. } => Value::from(*value),
        Scalar::Str(s) => Value::from(s.clone()),
        Scalar::Bool(b) => Value::from(*b),
    }
}

fn node_to_json(node: &Node) -> Value {
    let mut obj = serde_json::Map::new();
    match node {
        Node::Inner(inner) => {
            obj.insert(
                "type".into(),
                Value::from(match inner.kind {
                    InnerKind::And => "and",
                    InnerKind::Or => "or",
                }),
            );
            obj.insert(
                "descendants".into(),
                Value::Array(inner.descendants.iter().map(node_to_json).collect()),
            );
            if !inner.postprocessors.is_empty() {
                obj.insert(
                    "postprocessors".into(),
                    Value::Array(
                        inner
                            .postprocessors
                            .iter()
                            .map(postprocessor_to_json)
                            .collect(),
                    ),
                );
            }
        }
        Node::Discrete(leaf) => {
            obj.insert("type".into(), Value::from("discrete"));
            obj.insert("name".into(), Value::from(leaf.name.clone()));
            let values = match &leaf.values {
                DiscreteValues::Explicit(scalars) => {
                    Value::Array(scalars.iter().map(scalar_to_json).collect())
                }
                DiscreteValues::Range { min, max, step } => serde_json::json!({
                    "min": min, "max": max, "step": step
                }),
            };
            obj.insert("values".into(), values);
        }
        Node::Continuous(leaf) => {
            obj.insert("type".into(), Value::from("continuous"));
            obj.insert("name".into(), Value::from(leaf.name.clone()));
            obj.insert(
                "values".into(),
                serde_json::json!({"min": leaf.min, "max": leaf.max}),
            );
        }
        Node::File(leaf) => {
            obj.insert("type".into(), Value::from("file"));
            obj.insert("name".into(), Value::from(leaf.name.clone()));
            obj.insert("path".into(), Value::from(leaf.path.clone()));
            obj.insert("match".into(), Value::from(leaf.pattern.clone()));
        }
        Node::Directory(leaf) => {
            obj.insert("type".into(), Value::from("directory"));
            obj.insert("name".into(), Value::from(leaf.name.clone()));
            obj.insert("path".into(), Value::from(leaf.path.clone()));
            obj.insert("match".into(), Value::from(leaf.pattern.clone()));
        }
        Node::Flag(leaf) => {
            obj.insert("type".into(), Value::from("flag"));
            obj.insert("name".into(), Value::from(leaf.name.clone()));
        }
    }
    Value::Object(obj)
}

fn postprocessor_to_json(spec: &PostProcessorSpec) -> Value {
    match spec {
        PostProcessorSpec::Expression(e) => {
            let mut obj = serde_json::Map::new();
            obj.insert("type".into(), Value::from("expression"));
            obj.insert("match".into(), Value::from(e.pattern.clone()));
            obj.insert("result".into(), Value::from(e.result.clone()));
            match &e.kind {
                ExpressionKind::Discrete { expression } => {
                    obj.insert("expression".into(), Value::from(expression.clone()));
                }
                ExpressionKind::Continuous { min, max } => {
                    obj.insert("min".into(), Value::from(min.clone()));
                    obj.insert("max".into(), Value::from(max.clone()));
                }
            }
            Value::Object(obj)
        }
        PostProcessorSpec::Ignore { pattern } => serde_json::json!({
            "type": "ignore", "match": pattern
        }),
        PostProcessorSpec::Sorting { order } => serde_json::json!({
            "type": "sorting", "order": order
        }),
        PostProcessorSpec::Hammersley { points } => serde_json::json!({
            "type": "hammersley", "points": points
        }),
        PostProcessorSpec::Rounding(r) => {
            let mut obj = serde_json::Map::new();
            if r.rules.len() == 1 {
                obj.insert("type".into(), Value::from("rounding"));
                obj.insert("match".into(), Value::from(r.rules[0].0.clone()));
                obj.insert("decimal_digits".into(), Value::from(r.rules[0].1));
            } else {
                obj.insert("type".into(), Value::from("round"));
                let mut map = serde_json::Map::new();
                for (pattern, digits) in &r.rules {
                    map.insert(pattern.clone(), Value::from(*digits));
                }
                obj.insert("round".into(), Value::Object(map));
            }
            if r.force_precision {
                obj.insert("force_precision".into(), Value::from(true));
            }
            Value::Object(obj)
        }
        PostProcessorSpec::Renaming { rename } => {
            let mut map = serde_json::Map::new();
            for (old, new) in rename {
                map.insert(old.clone(), Value::from(new.clone()));
            }
            serde_json::json!({"type": "renaming", "rename": map})
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A continuous leaf with no hammersley post-processor on any ancestor.
    UnsampledContinuousLeaf,
    /// A continuous expression result never consumed by a later hammersley.
    UnsampledContinuousExpression,
    /// A rounding pattern that can only ever match unrealized continuous
    /// parameters.
    RoundingOnUnrealized,
    /// A `match` field that is not a valid pattern.
    InvalidPattern,
    /// Two parameters with the same name combined under one `and`.
    DuplicateName,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Tracks whether a parameter holds a realized value or still an interval at
/// a given point of the static walk. `Mixed` means it depends on the branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamState {
    Realized,
    Continuous,
    Mixed,
}

/// Statically checks a parsed tree and reports everything that would fail or
/// silently misbehave at expansion time. An empty report means valid.
pub fn validate(tree: &ParamTree) -> ValidationReport {
    let mut report = ValidationReport::default();
    analyze(&tree.root, "root", false, &mut report);
    report
}

fn check_pattern(pattern: &str, path: &str, report: &mut ValidationReport) -> bool {
    match compile_anchored(pattern) {
        Ok(_) => true,
        Err(e) => {
            report.violations.push(Violation {
                kind: ViolationKind::InvalidPattern,
                path: path.to_string(),
                message: format!("invalid pattern {pattern:?}: {e}"),
            });
            false
        }
    }
}

fn analyze(
    node: &Node,
    path: &str,
    hammersley_above: bool,
    report: &mut ValidationReport,
) -> Vec<(String, ParamState)> {
    match node {
        Node::Discrete(leaf) => vec![(leaf.name.clone(), ParamState::Realized)],
        Node::Flag(leaf) => vec![(leaf.name.clone(), ParamState::Realized)],
        Node::File(leaf) => {
            check_pattern(&leaf.pattern, path, report);
            vec![(leaf.name.clone(), ParamState::Realized)]
        }
        Node::Directory(leaf) => {
            check_pattern(&leaf.pattern, path, report);
            vec![(leaf.name.clone(), ParamState::Realized)]
        }
        Node::Continuous(leaf) => {
            if !hammersley_above {
                report.violations.push(Violation {
                    kind: ViolationKind::UnsampledContinuousLeaf,
                    path: path.to_string(),
                    message: format!(
                        "continuous parameter `{}` has no hammersley post-processor on any \
                         ancestor, so it can never be realized",
                        leaf.name
                    ),
                });
            }
            vec![(leaf.name.clone(), ParamState::Continuous)]
        }
        Node::Inner(inner) => {
            let here = inner
                .postprocessors
                .iter()
                .any(|p| matches!(p, PostProcessorSpec::Hammersley { .. }));
            let below = hammersley_above || here;
            let mut params: Vec<(String, ParamState)> = Vec::new();
            for (i, d) in inner.descendants.iter().enumerate() {
                let child = analyze(d, &format!("{path}.descendants[{i}]"), below, report);
                match inner.kind {
                    InnerKind::And => {
                        for (name, state) in child {
                            if params.iter().any(|(n, _)| *n == name) {
                                report.violations.push(Violation {
                                    kind: ViolationKind::DuplicateName,
                                    path: path.to_string(),
                                    message: format!(
                                        "parameter `{name}` is combined more than once under \
                                         this `and` node"
                                    ),
                                });
                            } else {
                                params.push((name, state));
                            }
                        }
                    }
                    InnerKind::Or => {
                        for (name, state) in child {
                            match params.iter_mut().find(|(n, _)| *n == name) {
                                Some((_, existing)) if *existing != state => {
                                    *existing = ParamState::Mixed
                                }
                                Some(_) => {}
                                None => params.push((name, state)),
                            }
                        }
                    }
                }
            }
            simulate_postprocessors(inner, path, hammersley_above, &mut params, report);
            params
        }
    }
}

fn simulate_postprocessors(
    inner: &InnerNode,
    path: &str,
    hammersley_above: bool,
    params: &mut Vec<(String, ParamState)>,
    report: &mut ValidationReport,
) {
    for (i, spec) in inner.postprocessors.iter().enumerate() {
        let spec_path = format!("{path}.postprocessors[{i}]");
        match spec {
            PostProcessorSpec::Expression(e) => {
                check_pattern(&e.pattern, &spec_path, report);
                let state = match &e.kind {
                    ExpressionKind::Discrete { .. } => ParamState::Realized,
                    ExpressionKind::Continuous { .. } => {
                        let later_hammersley = inner.postprocessors[i + 1..]
                            .iter()
                            .any(|p| matches!(p, PostProcessorSpec::Hammersley { .. }));
                        if !later_hammersley && !hammersley_above {
                            report.violations.push(Violation {
                                kind: ViolationKind::UnsampledContinuousExpression,
                                path: spec_path.clone(),
                                message: format!(
                                    "continuous result `{}` is never consumed by a later \
                                     hammersley post-processor",
                                    e.result
                                ),
                            });
                        }
                        ParamState::Continuous
                    }
                };
                match params.iter_mut().find(|(n, _)| *n == e.result) {
                    Some((_, existing)) => *existing = state,
                    None => params.push((e.result.clone(), state)),
                }
            }
            PostProcessorSpec::Ignore { pattern } => {
                if check_pattern(pattern, &spec_path, report) {
                    let re = compile_anchored(pattern).unwrap();
                    params.retain(|(n, _)| !re.is_match(n));
                }
            }
            PostProcessorSpec::Sorting { .. } => {}
            PostProcessorSpec::Hammersley { .. } => {
                for (_, state) in params.iter_mut() {
                    if *state == ParamState::Continuous {
                        *state = ParamState::Realized;
                    }
                }
            }
            PostProcessorSpec::Rounding(r) => {
                for (pattern, _) in &r.rules {
                    if !check_pattern(pattern, &spec_path, report) {
                        continue;
                    }
                    let re = compile_anchored(pattern).unwrap();
                    let matched: Vec<&ParamState> = params
                        .iter()
                        .filter(|(n, _)| re.is_match(n))
                        .map(|(_, s)| s)
                        .collect();
                    if !matched.is_empty()
                        && matched.iter().all(|s| **s == ParamState::Continuous)
                    {
                        report.violations.push(Violation {
                            kind: ViolationKind::RoundingOnUnrealized,
                            path: spec_path.clone(),
                            message: format!(
                                "pattern {pattern:?} only matches continuous parameters that \
                                 are not yet sampled; place rounding after hammersley"
                            ),
                        });
                    }
                }
            }
            PostProcessorSpec::Renaming { rename } => {
                for (name, _) in params.iter_mut() {
                    if let Some((_, new)) = rename.iter().find(|(old, _)| old == name) {
                        *name = new.clone();
                    }
                }
            }
        }
    }
}
