//! Rate expressions attached to rules.
//!
//! A rate is a small arithmetic expression over the neighbor counts
//! `m[<state>]`, the node degree `k`, numeric literals and named constants
//! bound by the model file. Constants are substituted at parse time, so a
//! parsed [`RateExpr`] is always closed.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | 'k' | 'm[' ident ']' | ident | '-' factor | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown state `{name}` at byte {pos}")]
    UnknownState { name: String, pos: usize },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("division by constant zero at byte {pos}")]
    DivisionByZero { pos: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
}

/// Parsed rate expression.
#[derive(Debug, Clone, PartialEq)]
pub enum RateExpr {
    Const(f64),
    Degree,
    /// Number of neighbors in the state with this ordinal.
    Count(usize),
    Neg(Box<RateExpr>),
    Add(Box<RateExpr>, Box<RateExpr>),
    Sub(Box<RateExpr>, Box<RateExpr>),
    Mul(Box<RateExpr>, Box<RateExpr>),
    Div(Box<RateExpr>, Box<RateExpr>),
}

/// Name resolution for [`parse_rate`].
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub states: &'a [String],
    pub constants: Option<&'a BTreeMap<String, f64>>,
}

impl<'a> Scope<'a> {
    pub fn new(states: &'a [String]) -> Self {
        Self { states, constants: None }
    }

    pub fn with_constants(mut self, constants: &'a BTreeMap<String, f64>) -> Self {
        self.constants = Some(constants);
        self
    }
}

pub fn parse_rate(text: &str, scope: Scope<'_>) -> Result<RateExpr, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, scope };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a, 's> {
    src: &'a [u8],
    pos: usize,
    scope: Scope<'s>,
}

impl Parser<'_, '_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<RateExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = RateExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = RateExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<RateExpr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = RateExpr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let at = self.pos;
                    let rhs = self.factor()?;
                    if rhs.constant_value() == Some(0.0) {
                        return Err(ParseError::DivisionByZero { pos: at });
                    }
                    lhs = RateExpr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<RateExpr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(RateExpr::Neg(Box::new(self.factor()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                let name = self.ident();
                if name == "m" && self.peek() == Some(b'[') {
                    self.pos += 1;
                    self.skip_ws();
                    let at = self.pos;
                    let state = self.ident();
                    if state.is_empty() {
                        return Err(self.syntax("expected state name"));
                    }
                    self.expect(b']')?;
                    return match self.scope.states.iter().position(|s| *s == state) {
                        Some(i) => Ok(RateExpr::Count(i)),
                        None => Err(ParseError::UnknownState { name: state, pos: at }),
                    };
                }
                if name == "k" {
                    return Ok(RateExpr::Degree);
                }
                match self.scope.constants.and_then(|c| c.get(&name)) {
                    Some(v) => Ok(RateExpr::Const(*v)),
                    None => Err(ParseError::UnknownIdentifier { name, pos: start }),
                }
            }
            Some(_) => Err(self.syntax("expected a number, `k`, `m[...]`, `-` or `(`")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<RateExpr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
                return Err(self.syntax("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(RateExpr::Const)
            .map_err(|_| ParseError::Syntax { pos: start, msg: "malformed number".into() })
    }
}

impl RateExpr {
    /// Value of the expression if it does not depend on the neighborhood.
    pub fn constant_value(&self) -> Option<f64> {
        use RateExpr::*;
        Some(match self {
            Const(v) => *v,
            Degree | Count(_) => return None,
            Neg(a) => -a.constant_value()?,
            Add(a, b) => a.constant_value()? + b.constant_value()?,
            Sub(a, b) => a.constant_value()? - b.constant_value()?,
            Mul(a, b) => a.constant_value()? * b.constant_value()?,
            Div(a, b) => a.constant_value()? / b.constant_value()?,
        })
    }

    /// Evaluates the rate at a (possibly fractional) neighborhood `m` of degree `k`.
    pub fn eval(&self, m: &[f64], k: f64) -> Result<f64, EvalError> {
        use RateExpr::*;
        Ok(match self {
            Const(v) => *v,
            Degree => k,
            Count(s) => m[*s],
            Neg(a) => -a.eval(m, k)?,
            Add(a, b) => a.eval(m, k)? + b.eval(m, k)?,
            Sub(a, b) => a.eval(m, k)? - b.eval(m, k)?,
            Mul(a, b) => a.eval(m, k)? * b.eval(m, k)?,
            Div(a, b) => {
                let d = b.eval(m, k)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero(self.to_string()));
                }
                a.eval(m, k)? / d
            }
        })
    }

    /// Shorthand for integer neighborhoods; the degree is the sum of counts.
    pub fn eval_counts(&self, m: &[u32]) -> Result<f64, EvalError> {
        let real: Vec<f64> = m.iter().map(|&c| c as f64).collect();
        let k = real.iter().sum();
        self.eval(&real, k)
    }

    /// Largest state ordinal referenced, if any.
    pub fn max_state(&self) -> Option<usize> {
        use RateExpr::*;
        match self {
            Const(_) | Degree => None,
            Count(s) => Some(*s),
            Neg(a) => a.max_state(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.max_state().max(b.max_state()),
        }
    }

    /// Renders the expression with state names substituted for ordinals.
    pub fn display<'a>(&'a self, states: &'a [String]) -> Display<'a> {
        Display { expr: self, states: Some(states) }
    }
}

pub struct Display<'a> {
    expr: &'a RateExpr,
    states: Option<&'a [String]>,
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use RateExpr::*;
        let sub = |e| Display { expr: e, states: self.states };
        match self.expr {
            Const(v) => write!(f, "{v:?}"),
            Degree => write!(f, "k"),
            Count(s) => match self.states.and_then(|n| n.get(*s)) {
                Some(name) => write!(f, "m[{name}]"),
                None => write!(f, "m[#{s}]"),
            },
            Neg(a) => write!(f, "-{}", sub(a)),
            Add(a, b) => write!(f, "({} + {})", sub(a), sub(b)),
            Sub(a, b) => write!(f, "({} - {})", sub(a), sub(b)),
            Mul(a, b) => write!(f, "({} * {})", sub(a), sub(b)),
            Div(a, b) => write!(f, "({} / {})", sub(a), sub(b)),
        }
    }
}

impl fmt::Display for RateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Display { expr: self, states: None }.fmt(f)
    }
}
