//! The six post-processors that transform a node's configuration list.
//!
//! Each processor receives the full list produced by its node's combination
//! step and returns the replacement list. Order matters: processors run in
//! declaration order, so an `ignore` that discards expression operands must
//! come after the `expression` that uses them.

pub mod expr;

use std::collections::HashMap;

use thiserror::Error;

pub use expr::{eval_expr, parse_expression, BoundValue, EvalError, ExprAst, ExprError};

use crate::expand::{Configuration, ParamValue};
use crate::lowdisc::{hammersley_point, scale_point};
use crate::pattern::compile_anchored;
use crate::tree::{ExpressionKind, ExpressionSpec, PostProcessorSpec, RoundingSpec, Scalar};

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("post-processor {index} ({kind}): {source}")]
    At {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<PostprocError>,
    },
    #[error("invalid pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        source: regex::Error,
    },
    #[error("invalid expression {text:?}: {source}")]
    Expression { text: String, source: ExprError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bounds of `{result}` are empty: min {min} is not below max {max}")]
    EmptyInterval {
        result: String,
        min: f64,
        max: f64,
    },
    #[error(
        "parameter `{param}` is still a continuous interval; place rounding after the \
         hammersley post-processor that samples it"
    )]
    RoundingUnrealized { param: String },
    #[error("cannot round non-numeric parameter `{param}`")]
    RoundingNonNumeric { param: String },
    #[error("hammersley found no continuous parameters to sample")]
    NoContinuousParams,
    #[error(
        "hammersley needs the same continuous parameters in every configuration: \
         expected {expected:?}, found {found:?}"
    )]
    InconsistentContinuous {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("renaming to `{name}` collides with an existing parameter")]
    RenameCollision { name: String },
}

/// Folds the processors over the list in declaration order.
pub fn apply_postprocessors(
    specs: &[PostProcessorSpec],
    mut configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    for (index, spec) in specs.iter().enumerate() {
        configs = apply_one(spec, configs).map_err(|source| PostprocError::At {
            index,
            kind: spec.kind_name(),
            source: Box::new(source),
        })?;
    }
    Ok(configs)
}

fn apply_one(
    spec: &PostProcessorSpec,
    configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    match spec {
        PostProcessorSpec::Expression(e) => pp_expression(e, configs),
        PostProcessorSpec::Ignore { pattern } => pp_ignore(pattern, configs),
        PostProcessorSpec::Sorting { order } => Ok(pp_sorting(order, configs)),
        PostProcessorSpec::Hammersley { points } => pp_hammersley(*points, configs),
        PostProcessorSpec::Rounding(r) => pp_rounding(r, configs),
        PostProcessorSpec::Renaming { rename } => pp_renaming(rename, configs),
    }
}

fn bound_value(v: &ParamValue) -> BoundValue {
    match v {
        ParamValue::Scalar(Scalar::Int(i)) => BoundValue::Num(*i as f64),
        ParamValue::Scalar(Scalar::Float { value, .. }) => BoundValue::Num(*value),
        ParamValue::Scalar(Scalar::Str(_)) => BoundValue::NonNumeric("string"),
        ParamValue::Scalar(Scalar::Bool(_)) => BoundValue::NonNumeric("boolean"),
        ParamValue::Flag => BoundValue::NonNumeric("flag"),
        ParamValue::Interval { .. } => BoundValue::NonNumeric("unsampled continuous interval"),
    }
}

/// Appends (or replaces in place) the `result` parameter of each
/// configuration with the value of the expression, or with a continuous
/// interval when the spec carries `min`/`max` expressions. Operands stay in
/// the configuration; discarding them takes a separate `ignore`.
pub fn pp_expression(
    spec: &ExpressionSpec,
    mut configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    let re = compile_anchored(&spec.pattern).map_err(|source| PostprocError::Pattern {
        pattern: spec.pattern.clone(),
        source,
    })?;
    let parse = |text: &str| {
        parse_expression(text).map_err(|source| PostprocError::Expression {
            text: text.to_string(),
            source,
        })
    };
    enum Parsed {
        Discrete(ExprAst),
        Continuous(ExprAst, ExprAst),
    }
    let parsed = match &spec.kind {
        ExpressionKind::Discrete { expression } => Parsed::Discrete(parse(expression)?),
        ExpressionKind::Continuous { min, max } => {
            Parsed::Continuous(parse(min)?, parse(max)?)
        }
    };
    for config in &mut configs {
        let bindings: HashMap<String, BoundValue> = config
            .params()
            .iter()
            .filter(|(name, _)| re.is_match(name))
            .map(|(name, value)| (name.clone(), bound_value(value)))
            .collect();
        let value = match &parsed {
            Parsed::Discrete(ast) => ParamValue::float(eval_expr(ast, &bindings)?),
            Parsed::Continuous(lo_ast, hi_ast) => {
                let min = eval_expr(lo_ast, &bindings)?;
                let max = eval_expr(hi_ast, &bindings)?;
                if min >= max {
                    return Err(PostprocError::EmptyInterval {
                        result: spec.result.clone(),
                        min,
                        max,
                    });
                }
                ParamValue::Interval { min, max }
            }
        };
        match config.position(&spec.result) {
            Some(pos) => config.params_mut()[pos].1 = value,
            None => config.params_mut().push((spec.result.clone(), value)),
        }
    }
    Ok(configs)
}

/// Removes every parameter whose name matches the pattern. Configurations
/// left empty stay in the list.
pub fn pp_ignore(
    pattern: &str,
    mut configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    let re = compile_anchored(pattern).map_err(|source| PostprocError::Pattern {
        pattern: pattern.to_string(),
        source,
    })?;
    for config in &mut configs {
        config.params_mut().retain(|(name, _)| !re.is_match(name));
    }
    Ok(configs)
}

/// Moves the parameters named in `order` to the front (in that order,
/// skipping absent names); the rest keep their relative order.
pub fn pp_sorting(order: &[String], mut configs: Vec<Configuration>) -> Vec<Configuration> {
    for config in &mut configs {
        let params = config.params_mut();
        let mut front = Vec::new();
        for name in order {
            if let Some(pos) = params.iter().position(|(n, _)| n == name) {
                front.push(params.remove(pos));
            }
        }
        front.append(params);
        *params = front;
    }
    configs
}

/// Expands each configuration into `points` configurations by replacing its
/// continuous parameters with the scaled Hammersley point set.
pub fn pp_hammersley(
    points: u64,
    configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    if configs.is_empty() {
        return Ok(configs);
    }
    let continuous_names = |config: &Configuration| -> Vec<String> {
        let mut names: Vec<String> = config
            .params()
            .iter()
            .filter(|(_, v)| matches!(v, ParamValue::Interval { .. }))
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    };
    let expected = continuous_names(&configs[0]);
    if expected.is_empty() {
        return Err(PostprocError::NoContinuousParams);
    }
    for config in &configs {
        let found = continuous_names(config);
        if found != expected {
            return Err(PostprocError::InconsistentContinuous {
                expected,
                found,
            });
        }
    }
    let k = expected.len();
    let mut out = Vec::with_capacity(configs.len() * points as usize);
    for config in &configs {
        let slots: Vec<usize> = config
            .params()
            .iter()
            .enumerate()
            .filter(|(_, (_, v))| matches!(v, ParamValue::Interval { .. }))
            .map(|(i, _)| i)
            .collect();
        let bounds: Vec<(f64, f64)> = slots
            .iter()
            .map(|&i| match &config.params()[i].1 {
                ParamValue::Interval { min, max } => (*min, *max),
                _ => unreachable!(),
            })
            .collect();
        for i in 0..points {
            let point = hammersley_point(i, points, k).expect("index below point count");
            let scaled = scale_point(&point, &bounds).expect("dimensions match");
            let mut sampled = config.clone();
            for (j, &slot) in slots.iter().enumerate() {
                sampled.params_mut()[slot].1 = ParamValue::float(scaled[j]);
            }
            out.push(sampled);
        }
    }
    Ok(out)
}

fn round_to(value: f64, digits: u32) -> f64 {
    if digits >= 18 {
        return value;
    }
    let factor = 10f64.powi(digits as i32);
    (value * factor).round() / factor
}

/// Rounds matched numeric values half-away-from-zero to the given number of
/// decimal digits; `force_precision` additionally pins the rendering to
/// exactly that many decimals.
pub fn pp_rounding(
    spec: &RoundingSpec,
    mut configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    for (pattern, digits) in &spec.rules {
        let re = compile_anchored(pattern).map_err(|source| PostprocError::Pattern {
            pattern: pattern.clone(),
            source,
        })?;
        for config in &mut configs {
            for (name, value) in config.params_mut().iter_mut() {
                if !re.is_match(name) {
                    continue;
                }
                match value {
                    ParamValue::Scalar(Scalar::Float { value: v, decimals }) => {
                        *v = round_to(*v, *digits);
                        *decimals = spec.force_precision.then_some(*digits);
                    }
                    ParamValue::Scalar(Scalar::Int(i)) => {
                        if spec.force_precision {
                            *value = ParamValue::Scalar(Scalar::Float {
                                value: *i as f64,
                                decimals: Some(*digits),
                            });
                        }
                    }
                    ParamValue::Interval { .. } => {
                        return Err(PostprocError::RoundingUnrealized { param: name.clone() })
                    }
                    _ => return Err(PostprocError::RoundingNonNumeric { param: name.clone() }),
                }
            }
        }
    }
    Ok(configs)
}

/// Renames parameters by exact name. The whole map applies simultaneously,
/// so swaps are legal; a rename that collides with a name still present
/// afterwards is an error.
pub fn pp_renaming(
    rename: &[(String, String)],
    mut configs: Vec<Configuration>,
) -> Result<Vec<Configuration>, PostprocError> {
    for config in &mut configs {
        let new_names: Vec<String> = config
            .params()
            .iter()
            .map(|(name, _)| {
                rename
                    .iter()
                    .find(|(old, _)| old == name)
                    .map(|(_, new)| new.clone())
                    .unwrap_or_else(|| name.clone())
            })
            .collect();
        for (i, a) in new_names.iter().enumerate() {
            if new_names[..i].contains(a) {
                return Err(PostprocError::RenameCollision { name: a.clone() });
            }
        }
        for ((name, _), new_name) in config.params_mut().iter_mut().zip(new_names) {
            *name = new_name;
        }
    }
    Ok(configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expand::format_cll;

    fn cfg(pairs: &[(&str, ParamValue)]) -> Configuration {
        Configuration::from_params(
            pairs
                .iter()
                .map(|(n, v)| (n.to_string(), v.clone()))
                .collect(),
        )
    }

    fn expr_spec(pattern: &str, result: &str, expression: &str) -> ExpressionSpec {
        ExpressionSpec {
            pattern: pattern.into(),
            result: result.into(),
            kind: ExpressionKind::Discrete {
                expression: expression.into(),
            },
        }
    }

    #[test]
    fn expression_appends_result() {
        let configs = vec![cfg(&[("p1", ParamValue::int(2)), ("p2", ParamValue::int(3))])];
        let out = pp_expression(
            &expr_spec("p1|p2", "p3", "pow(p1.value, p2.value)"),
            configs,
        )
        .unwrap();
        assert_eq!(
            out[0],
            cfg(&[
                ("p1", ParamValue::int(2)),
                ("p2", ParamValue::int(3)),
                ("p3", ParamValue::float(8.0)),
            ])
        );
    }

    #[test]
    fn expression_continuous_result() {
        let configs = vec![cfg(&[("p1", ParamValue::int(10)), ("p2", ParamValue::int(2))])];
        let spec = ExpressionSpec {
            pattern: "p1|p2".into(),
            result: "p3".into(),
            kind: ExpressionKind::Continuous {
                min: "0.1*p1.value".into(),
                max: "5*p2.value".into(),
            },
        };
        let out = pp_expression(&spec, configs).unwrap();
        assert_eq!(out[0].get("p3"), Some(&ParamValue::Interval { min: 1.0, max: 10.0 }));
    }

    #[test]
    fn expression_empty_interval_is_an_error() {
        let configs = vec![cfg(&[("p1", ParamValue::int(1))])];
        let spec = ExpressionSpec {
            pattern: "p1".into(),
            result: "r".into(),
            kind: ExpressionKind::Continuous {
                min: "p1.value".into(),
                max: "p1.value".into(),
            },
        };
        assert!(matches!(
            pp_expression(&spec, configs),
            Err(PostprocError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn constant_expression_with_empty_match() {
        let configs = vec![cfg(&[("x", ParamValue::int(1))])];
        let out = pp_expression(&expr_spec("", "r", "1+1"), configs).unwrap();
        assert_eq!(out[0].get("r"), Some(&ParamValue::float(2.0)));
    }

    #[test]
    fn expression_replaces_existing_result_in_place() {
        let configs = vec![cfg(&[("r", ParamValue::int(0)), ("p", ParamValue::int(5))])];
        let out = pp_expression(&expr_spec("p", "r", "p.value*2"), configs).unwrap();
        assert_eq!(
            out[0],
            cfg(&[("r", ParamValue::float(10.0)), ("p", ParamValue::int(5))])
        );
    }

    #[test]
    fn expression_then_ignore_pipeline() {
        let specs = vec![
            PostProcessorSpec::Expression(expr_spec("p1|p2", "p3", "p1.value + p2.value")),
            PostProcessorSpec::Ignore { pattern: "p1|p2".into() },
        ];
        let configs = vec![cfg(&[("p1", ParamValue::int(1)), ("p2", ParamValue::int(2))])];
        let out = apply_postprocessors(&specs, configs).unwrap();
        assert_eq!(out, vec![cfg(&[("p3", ParamValue::float(3.0))])]);
    }

    #[test]
    fn ignore_before_expression_is_an_ordering_error() {
        let specs = vec![
            PostProcessorSpec::Ignore { pattern: "p1|p2".into() },
            PostProcessorSpec::Expression(expr_spec("p1|p2", "p3", "p1.value + p2.value")),
        ];
        let configs = vec![cfg(&[("p1", ParamValue::int(1)), ("p2", ParamValue::int(2))])];
        let err = apply_postprocessors(&specs, configs).unwrap_err();
        assert!(err.to_string().contains("post-processor 1"), "{err}");
        assert!(err.to_string().contains("not bound"), "{err}");
    }

    #[test]
    fn ignore_cases() {
        let configs = vec![cfg(&[
            ("p1", ParamValue::int(1)),
            ("p2", ParamValue::int(2)),
            ("p3", ParamValue::int(3)),
        ])];
        let out = pp_ignore("p1|p2", configs.clone()).unwrap();
        assert_eq!(out, vec![cfg(&[("p3", ParamValue::int(3))])]);

        let untouched = pp_ignore("zzz", configs.clone()).unwrap();
        assert_eq!(untouched, configs);

        let emptied = pp_ignore(".*", configs).unwrap();
        assert_eq!(emptied.len(), 1);
        assert!(emptied[0].is_empty());
    }

    #[test]
    fn ignore_is_idempotent() {
        let configs = vec![cfg(&[("p1", ParamValue::int(1)), ("q", ParamValue::int(2))])];
        let once = pp_ignore("p1", configs).unwrap();
        let twice = pp_ignore("p1", once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn sorting_cases() {
        let configs = vec![cfg(&[
            ("a", ParamValue::int(1)),
            ("b", ParamValue::int(2)),
            ("c", ParamValue::int(3)),
        ])];
        let out = pp_sorting(&["b".into(), "a".into()], configs.clone());
        assert_eq!(
            out,
            vec![cfg(&[
                ("b", ParamValue::int(2)),
                ("a", ParamValue::int(1)),
                ("c", ParamValue::int(3)),
            ])]
        );

        let missing = pp_sorting(&["x".into()], vec![cfg(&[("a", ParamValue::int(1))])]);
        assert_eq!(missing, vec![cfg(&[("a", ParamValue::int(1))])]);

        assert_eq!(pp_sorting(&[], configs.clone()), configs);

        let once = pp_sorting(&["b".into()], configs);
        let twice = pp_sorting(&["b".into()], once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn hammersley_single_dimension() {
        let configs = vec![cfg(&[("c", ParamValue::Interval { min: 0.0, max: 10.0 })])];
        let out = pp_hammersley(4, configs).unwrap();
        let values: Vec<f64> = out.iter().map(|c| c.get("c").unwrap().as_f64().unwrap()).collect();
        assert_eq!(values, vec![0.0, 2.5, 5.0, 7.5]);
    }

    #[test]
    fn hammersley_two_dimensions() {
        let configs = vec![cfg(&[
            ("u", ParamValue::Interval { min: 0.0, max: 1.0 }),
            ("v", ParamValue::Interval { min: 0.0, max: 1.0 }),
        ])];
        let out = pp_hammersley(2, configs).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].get("u").unwrap().as_f64().unwrap(), 0.0);
        assert_eq!(out[0].get("v").unwrap().as_f64().unwrap(), 0.0);
        assert_eq!(out[1].get("u").unwrap().as_f64().unwrap(), 0.5);
        assert_eq!(out[1].get("v").unwrap().as_f64().unwrap(), 0.5);
    }

    #[test]
    fn hammersley_single_point_is_the_lower_corner() {
        let configs = vec![cfg(&[("c", ParamValue::Interval { min: 3.0, max: 9.0 })])];
        let out = pp_hammersley(1, configs).unwrap();
        assert_eq!(out[0].get("c").unwrap().as_f64().unwrap(), 3.0);
    }

    #[test]
    fn hammersley_keeps_discrete_context_and_multiplies() {
        let configs = vec![
            cfg(&[("mode", ParamValue::str("a")), ("c", ParamValue::Interval { min: 0.0, max: 1.0 })]),
            cfg(&[("mode", ParamValue::str("b")), ("c", ParamValue::Interval { min: 0.0, max: 1.0 })]),
        ];
        let out = pp_hammersley(3, configs).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].get("mode"), Some(&ParamValue::str("a")));
        assert_eq!(out[3].get("mode"), Some(&ParamValue::str("b")));
    }

    #[test]
    fn hammersley_errors() {
        let no_continuous = vec![cfg(&[("x", ParamValue::int(1))])];
        assert!(matches!(
            pp_hammersley(2, no_continuous),
            Err(PostprocError::NoContinuousParams)
        ));

        let inconsistent = vec![
            cfg(&[("c", ParamValue::Interval { min: 0.0, max: 1.0 })]),
            cfg(&[("d", ParamValue::Interval { min: 0.0, max: 1.0 })]),
        ];
        assert!(matches!(
            pp_hammersley(2, inconsistent),
            Err(PostprocError::InconsistentContinuous { .. })
        ));
    }

    #[test]
    fn rounding_rounds_not_truncates() {
        let spec = RoundingSpec {
            rules: vec![("x".into(), 2)],
            force_precision: false,
        };
        let out = pp_rounding(&spec, vec![cfg(&[("x", ParamValue::float(3.14159))])]).unwrap();
        assert_eq!(out[0].get("x"), Some(&ParamValue::float(3.14)));
        let out = pp_rounding(&spec, vec![cfg(&[("x", ParamValue::float(0.005))])]).unwrap();
        assert_eq!(out[0].get("x"), Some(&ParamValue::float(0.01)));
    }

    #[test]
    fn rounding_force_precision_pins_rendering() {
        let spec = RoundingSpec {
            rules: vec![("x".into(), 3)],
            force_precision: true,
        };
        let out = pp_rounding(&spec, vec![cfg(&[("x", ParamValue::float(0.5))])]).unwrap();
        assert_eq!(format_cll(&out[0]).unwrap(), "--x 0.500");
    }

    #[test]
    fn rounding_is_idempotent_and_bounded() {
        let spec = RoundingSpec {
            rules: vec![(".*".into(), 2)],
            force_precision: false,
        };
        for v in [3.14159, -2.71828, 0.005, 123.456] {
            let once = pp_rounding(&spec, vec![cfg(&[("x", ParamValue::float(v))])]).unwrap();
            let rounded = once[0].get("x").unwrap().as_f64().unwrap();
            assert!((rounded - v).abs() <= 0.5 * 1e-2 + 1e-12, "{v} -> {rounded}");
            let twice = pp_rounding(&spec, once.clone()).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn rounding_on_interval_is_an_ordering_error() {
        let spec = RoundingSpec {
            rules: vec![("c".into(), 2)],
            force_precision: false,
        };
        let err = pp_rounding(
            &spec,
            vec![cfg(&[("c", ParamValue::Interval { min: 0.0, max: 1.0 })])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("after the hammersley"), "{err}");
    }

    #[test]
    fn rounding_on_string_is_a_type_error() {
        let spec = RoundingSpec {
            rules: vec![("s".into(), 2)],
            force_precision: false,
        };
        assert!(matches!(
            pp_rounding(&spec, vec![cfg(&[("s", ParamValue::str("foo"))])]),
            Err(PostprocError::RoundingNonNumeric { .. })
        ));
    }

    #[test]
    fn renaming_cases() {
        let rename = vec![("old_1".to_string(), "new_1".to_string())];
        let out = pp_renaming(&rename, vec![cfg(&[("old_1", ParamValue::int(5))])]).unwrap();
        assert_eq!(out, vec![cfg(&[("new_1", ParamValue::int(5))])]);

        let identity = pp_renaming(&[], vec![cfg(&[("a", ParamValue::int(1))])]).unwrap();
        assert_eq!(identity, vec![cfg(&[("a", ParamValue::int(1))])]);

        let collision = pp_renaming(
            &[("a".to_string(), "b".to_string())],
            vec![cfg(&[("a", ParamValue::int(1)), ("b", ParamValue::int(2))])],
        );
        assert!(matches!(collision, Err(PostprocError::RenameCollision { .. })));
    }

    #[test]
    fn renaming_swap_is_legal() {
        let rename = vec![
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "a".to_string()),
        ];
        let out = pp_renaming(
            &rename,
            vec![cfg(&[("a", ParamValue::int(1)), ("b", ParamValue::int(2))])],
        )
        .unwrap();
        assert_eq!(out, vec![cfg(&[("b", ParamValue::int(1)), ("a", ParamValue::int(2))])]);
    }

    #[test]
    fn empty_spec_list_is_identity() {
        let configs = vec![cfg(&[("a", ParamValue::int(1))])];
        assert_eq!(apply_postprocessors(&[], configs.clone()).unwrap(), configs);
    }
}
