//! The arithmetic expression language of `expression` post-processors.
//!
//! Grammar (binding from loosest to tightest): `+ -`, `* / %`, unary `-`,
//! `**` (right associative), atoms. Atoms are numeric literals, operand
//! references written `name.value`, parenthesized expressions and calls to
//! the fixed function set. Exponentiation binds tighter than unary minus on
//! its left, so `-x**2` is `-(x**2)`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character `{0}` in expression")]
    UnexpectedChar(char),
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("expected `.value` or `(` after identifier `{0}`")]
    BareIdentifier(String),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at `{0}`")]
    UnexpectedToken(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("operand `{0}` is not bound to any matched parameter")]
    Unbound(String),
    #[error("operand `{name}` holds a {kind} value, not a number")]
    NonNumeric { name: String, kind: String },
    #[error("cannot evaluate `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Pow,
    Sqrt,
    Exp,
    Log,
    Log2,
    Log10,
    Floor,
    Ceil,
    Abs,
    Min,
    Max,
    Round,
    Sin,
    Cos,
    Tan,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "pow" => Func::Pow,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "log2" => Func::Log2,
            "log10" => Func::Log10,
            "floor" => Func::Floor,
            "ceil" => Func::Ceil,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "round" => Func::Round,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Pow => "pow",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Log2 => "log2",
            Func::Log10 => "log10",
            Func::Floor => "floor",
            Func::Ceil => "ceil",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Round => "round",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
        }
    }

    /// (min arity, max arity); `usize::MAX` means unbounded.
    fn arity(self) -> (usize, usize, &'static str) {
        match self {
            Func::Pow => (2, 2, "exactly 2"),
            Func::Min | Func::Max => (2, usize::MAX, "at least 2"),
            _ => (1, 1, "exactly 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Num(f64),
    /// Reference to a matched parameter, written `name.value`.
    Operand(String),
    Neg(Box<ExprAst>),
    Bin(BinOp, Box<ExprAst>, Box<ExprAst>),
    Call(Func, Vec<ExprAst>),
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprAst::Num(n) => write!(f, "{n:?}"),
            ExprAst::Operand(name) => write!(f, "{name}.value"),
            ExprAst::Neg(inner) => write!(f, "(-{inner})"),
            ExprAst::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            ExprAst::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    DblStar,
    Slash,
    Percent,
    LParen,
    RParen,
    Comma,
    Dot,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ExprError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                if chars.get(i + 1) == Some(&'*') {
                    toks.push(Tok::DblStar);
                    i += 2;
                } else {
                    toks.push(Tok::Star);
                    i += 1;
                }
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '%' => {
                toks.push(Tok::Percent);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '.' => {
                toks.push(Tok::Dot);
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n = text
                    .parse::<f64>()
                    .map_err(|_| ExprError::BadNumber(text.clone()))?;
                toks.push(Tok::Num(n));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(ExprError::UnexpectedChar(other)),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: &Tok) -> Result<(), ExprError> {
        match self.next() {
            Some(t) if t == *tok => Ok(()),
            Some(t) => Err(ExprError::UnexpectedToken(format!("{t:?}"))),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn parse_expr(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.parse_term()?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.parse_term()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.parse_unary()?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Rem,
                _ => break,
            };
            self.next();
            let rhs = self.parse_unary()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<ExprAst, ExprError> {
        if self.peek() == Some(&Tok::Minus) {
            self.next();
            let inner = self.parse_unary()?;
            return Ok(ExprAst::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<ExprAst, ExprError> {
        let base = self.parse_atom()?;
        if self.peek() == Some(&Tok::DblStar) {
            self.next();
            // Right associative; the exponent may carry its own unary minus.
            let exponent = self.parse_unary()?;
            return Ok(ExprAst::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<ExprAst, ExprError> {
        match self.next() {
            Some(Tok::Num(n)) => Ok(ExprAst::Num(n)),
            Some(Tok::LParen) => {
                let inner = self.parse_expr()?;
                self.expect(&Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match self.peek() {
                Some(Tok::Dot) => {
                    self.next();
                    match self.next() {
                        Some(Tok::Ident(field)) if field == "value" => Ok(ExprAst::Operand(name)),
                        _ => Err(ExprError::BareIdentifier(name)),
                    }
                }
                Some(Tok::LParen) => {
                    self.next();
                    let func = Func::from_name(&name)
                        .ok_or_else(|| ExprError::UnknownFunction(name.clone()))?;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.parse_expr()?);
                            match self.peek() {
                                Some(Tok::Comma) => {
                                    self.next();
                                }
                                _ => break,
                            }
                        }
                    }
                    self.expect(&Tok::RParen)?;
                    let (lo, hi, text) = func.arity();
                    if args.len() < lo || args.len() > hi {
                        return Err(ExprError::Arity {
                            name: func.name(),
                            expected: text,
                            got: args.len(),
                        });
                    }
                    Ok(ExprAst::Call(func, args))
                }
                _ => Err(ExprError::BareIdentifier(name)),
            },
            Some(other) => Err(ExprError::UnexpectedToken(format!("{other:?}"))),
            None => Err(ExprError::UnexpectedEnd),
        }
    }
}

/// Parses an expression string into its syntax tree.
pub fn parse_expression(text: &str) -> Result<ExprAst, ExprError> {
    let toks = tokenize(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let ast = parser.parse_expr()?;
    if parser.pos != parser.toks.len() {
        return Err(ExprError::UnexpectedToken(format!(
            "{:?}",
            parser.toks[parser.pos]
        )));
    }
    Ok(ast)
}

/// What an operand reference resolves to. Non-numeric parameters may be
/// captured by a match pattern but referencing them is a type error.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundValue {
    Num(f64),
    NonNumeric(&'static str),
}

fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Evaluates an expression tree against a set of operand bindings.
pub fn eval_expr(ast: &ExprAst, bindings: &HashMap<String, BoundValue>) -> Result<f64, EvalError> {
    let value = eval_inner(ast, bindings)?;
    if !value.is_finite() {
        return Err(EvalError::Domain {
            expr: ast.to_string(),
            reason: "result is not a finite number".into(),
        });
    }
    Ok(value)
}

fn eval_inner(ast: &ExprAst, bindings: &HashMap<String, BoundValue>) -> Result<f64, EvalError> {
    match ast {
        ExprAst::Num(n) => Ok(*n),
        ExprAst::Operand(name) => match bindings.get(name) {
            Some(BoundValue::Num(v)) => Ok(*v),
            Some(BoundValue::NonNumeric(kind)) => Err(EvalError::NonNumeric {
                name: name.clone(),
                kind: kind.to_string(),
            }),
            None => Err(EvalError::Unbound(name.clone())),
        },
        ExprAst::Neg(inner) => Ok(-eval_inner(inner, bindings)?),
        ExprAst::Bin(op, a, b) => {
            let lhs = eval_inner(a, bindings)?;
            let rhs = eval_inner(b, bindings)?;
            match op {
                BinOp::Add => Ok(lhs + rhs),
                BinOp::Sub => Ok(lhs - rhs),
                BinOp::Mul => Ok(lhs * rhs),
                BinOp::Div => {
                    if rhs == 0.0 {
                        Err(EvalError::Domain {
                            expr: ast.to_string(),
                            reason: "division by zero".into(),
                        })
                    } else {
                        Ok(lhs / rhs)
                    }
                }
                BinOp::Rem => {
                    if rhs == 0.0 {
                        Err(EvalError::Domain {
                            expr: ast.to_string(),
                            reason: "remainder by zero".into(),
                        })
                    } else {
                        Ok(lhs % rhs)
                    }
                }
                BinOp::Pow => Ok(lhs.powf(rhs)),
            }
        }
        ExprAst::Call(func, args) => {
            let mut values = Vec::with_capacity(args.len());
            for a in args {
                values.push(eval_inner(a, bindings)?);
            }
            let domain_err = |reason: &str| EvalError::Domain {
                expr: ast.to_string(),
                reason: reason.into(),
            };
            match func {
                Func::Pow => Ok(values[0].powf(values[1])),
                Func::Sqrt => {
                    if values[0] < 0.0 {
                        Err(domain_err("square root of a negative number"))
                    } else {
                        Ok(values[0].sqrt())
                    }
                }
                Func::Exp => Ok(values[0].exp()),
                Func::Log | Func::Log2 | Func::Log10 => {
                    if values[0] <= 0.0 {
                        Err(domain_err("logarithm of a non-positive number"))
                    } else {
                        Ok(match func {
                            Func::Log => values[0].ln(),
                            Func::Log2 => values[0].log2(),
                            _ => values[0].log10(),
                        })
                    }
                }
                Func::Floor => Ok(values[0].floor()),
                Func::Ceil => Ok(values[0].ceil()),
                Func::Abs => Ok(values[0].abs()),
                Func::Min => Ok(values.iter().copied().fold(f64::INFINITY, f64::min)),
                Func::Max => Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                Func::Round => Ok(round_half_away(values[0])),
                Func::Sin => Ok(values[0].sin()),
                Func::Cos => Ok(values[0].cos()),
                Func::Tan => Ok(values[0].tan()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, f64)]) -> HashMap<String, BoundValue> {
        pairs
            .iter()
            .map(|(n, v)| (n.to_string(), BoundValue::Num(*v)))
            .collect()
    }

    fn eval_str(text: &str, pairs: &[(&str, f64)]) -> Result<f64, EvalError> {
        eval_expr(&parse_expression(text).unwrap(), &bind(pairs))
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval_str("1+2*3", &[]).unwrap(), 7.0);
        assert_eq!(eval_str("(1+2)*3", &[]).unwrap(), 9.0);
        assert_eq!(eval_str("2**3**2", &[]).unwrap(), 512.0);
        assert_eq!(eval_str("-2**2", &[]).unwrap(), -4.0);
        assert_eq!(eval_str("2**-1", &[]).unwrap(), 0.5);
        assert_eq!(eval_str("7%3", &[]).unwrap(), 1.0);
        assert_eq!(eval_str("1+1", &[]).unwrap(), 2.0);
    }

    #[test]
    fn operand_references() {
        assert_eq!(eval_str("pow(p1.value, p2.value)", &[("p1", 2.0), ("p2", 3.0)]).unwrap(), 8.0);
        assert_eq!(eval_str("0.1*p1.value", &[("p1", 10.0)]).unwrap(), 1.0);
        assert_eq!(
            eval_str("p1.value", &[]),
            Err(EvalError::Unbound("p1".into()))
        );
    }

    #[test]
    fn functions() {
        assert_eq!(eval_str("sqrt(9)", &[]).unwrap(), 3.0);
        assert_eq!(eval_str("log(exp(1))", &[]).unwrap(), 1.0);
        assert_eq!(eval_str("log2(8)", &[]).unwrap(), 3.0);
        assert_eq!(eval_str("log10(1000)", &[]).unwrap(), 3.0);
        assert_eq!(eval_str("min(3, 1, 2)", &[]).unwrap(), 1.0);
        assert_eq!(eval_str("max(3, 1, 2)", &[]).unwrap(), 3.0);
        assert_eq!(eval_str("round(2.5)", &[]).unwrap(), 3.0);
        assert_eq!(eval_str("round(-2.5)", &[]).unwrap(), -3.0);
        assert_eq!(eval_str("floor(1.9)", &[]).unwrap(), 1.0);
        assert_eq!(eval_str("ceil(1.1)", &[]).unwrap(), 2.0);
        assert_eq!(eval_str("abs(-4)", &[]).unwrap(), 4.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval_str("log(p1.value)", &[("p1", 0.0)]), Err(EvalError::Domain { .. })));
        assert!(matches!(eval_str("sqrt(-1)", &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(eval_str("1/0", &[]), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn non_numeric_operand_is_a_type_error() {
        let mut bindings = HashMap::new();
        bindings.insert("p1".to_string(), BoundValue::NonNumeric("string"));
        let ast = parse_expression("p1.value + 1").unwrap();
        assert!(matches!(
            eval_expr(&ast, &bindings),
            Err(EvalError::NonNumeric { .. })
        ));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_expression("foo(1)"), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(parse_expression("p1"), Err(ExprError::BareIdentifier(_))));
        assert!(matches!(parse_expression("pow(1)"), Err(ExprError::Arity { .. })));
        assert!(matches!(parse_expression("1 +"), Err(ExprError::UnexpectedEnd)));
        assert!(matches!(parse_expression("1 @ 2"), Err(ExprError::UnexpectedChar('@'))));
        assert!(matches!(parse_expression("1 2"), Err(ExprError::UnexpectedToken(_))));
    }

    #[test]
    fn rendering_reparses_to_the_same_tree() {
        for src in ["1+2*3", "pow(p1.value, -p2.value)", "min(1, 2, 3) ** 2 % 5"] {
            let ast = parse_expression(src).unwrap();
            let rendered = ast.to_string();
            assert_eq!(parse_expression(&rendered).unwrap(), ast, "{rendered}");
        }
    }
}
