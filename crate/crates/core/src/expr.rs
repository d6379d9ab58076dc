//! Scalar expressions over state variables `x1..xn` and control variables `u1..um`.
//!
//! The grammar is deliberately small:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-"? base ("^" uint)?
//! base   := number | ident | "(" expr ")" | func "(" expr ")"
//! ```
//!
//! Precedence is `^` > unary `-` > `*` `/` > `+` `-`; there is no implicit
//! multiplication and whitespace is ignored. `cbrt` is the real cube root, so
//! `cbrt(-8)` is `-2`.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// A variable reference. Indices are zero-based; `x1` is `State(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    State(usize),
    Control(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Control(i) => write!(f, "u{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Cbrt,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "cbrt" => Func::Cbrt,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Cbrt => "cbrt",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree. Immutable once built; `Clone` is a deep copy.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("malformed number `{0}`")]
    MalformedNumber(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    /// Byte offset into the source text.
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Failures of otherwise well-formed evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DomainError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("variable {0} is not bound")]
    Unbound(Var),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        Parser::new(text).parse()
    }

    /// Evaluates with `x` bound to the state variables and `u` to the controls.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, DomainError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => {
                let slot = match *var {
                    Var::State(i) => x.get(i),
                    Var::Control(i) => u.get(i),
                };
                *slot.ok_or(DomainError::Unbound(*var))?
            }
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, u)?;
                let b = b.eval(x, u)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(DomainError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(a, k) => powi(a.eval(x, u)?, *k),
            Expr::Call(func, a) => {
                let a = a.eval(x, u)?;
                match func {
                    Func::Cbrt => libm::cbrt(a),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(DomainError::SqrtOfNegative(a));
                        }
                        libm::sqrt(a)
                    }
                    Func::Sin => libm::sin(a),
                    Func::Cos => libm::cos(a),
                    Func::Exp => libm::exp(a),
                    Func::Abs => libm::fabs(a),
                }
            }
        })
    }

    /// Exact partial derivative with respect to `var`, lightly constant-folded.
    ///
    /// `d cbrt(a)` is `a' / (3 cbrt(a)^2)`, which fails to evaluate at `a = 0`.
    pub fn derivative(&self, var: Var) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Bin(op, a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinOp::Div => {
                        if is_zero(&db) {
                            div(da, (**b).clone())
                        } else {
                            div(
                                sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                                pow((**b).clone(), 2),
                            )
                        }
                    }
                }
            }
            Expr::Pow(a, k) => match k {
                0 => Expr::Num(0.0),
                k => mul(mul(Expr::Num(*k as f64), pow((**a).clone(), k - 1)), a.derivative(var)),
            },
            Expr::Call(func, a) => {
                let da = a.derivative(var);
                if is_zero(&da) {
                    return Expr::Num(0.0);
                }
                let inner = (**a).clone();
                let outer = match func {
                    Func::Cbrt => return div(da, mul(Expr::Num(3.0), pow(call(Func::Cbrt, inner), 2))),
                    Func::Sqrt => return div(da, mul(Expr::Num(2.0), call(Func::Sqrt, inner))),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Abs => div(inner.clone(), call(Func::Abs, inner)),
                };
                mul(outer, da)
            }
        }
    }

    /// Visits every variable occurrence.
    pub fn for_each_var(&self, visit: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => visit(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.for_each_var(visit),
            Expr::Bin(_, a, b) => {
                a.for_each_var(visit);
                b.for_each_var(visit);
            }
        }
    }

    /// First variable outside `x1..xn`, `u1..um`, if any.
    pub fn unbound_var(&self, n: usize, m: usize) -> Option<Var> {
        let mut bad = None;
        self.for_each_var(&mut |v| {
            let ok = match v {
                Var::State(i) => i < n,
                Var::Control(i) => i < m,
            };
            if !ok && bad.is_none() {
                bad = Some(v);
            }
        });
        bad
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            f.write_str("(")?;
            self.fmt_at(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{}", v)
                }
            }
            Expr::Var(v) => write!(f, "{}", v),
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_at(f, 4)
            }
            Expr::Bin(op, a, b) => {
                let (sym, lhs, rhs) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => ("*", 2, 3),
                    BinOp::Div => ("/", 2, 3),
                };
                a.fmt_at(f, lhs)?;
                f.write_str(sym)?;
                b.fmt_at(f, rhs)
            }
            Expr::Pow(a, k) => {
                a.fmt_at(f, 5)?;
                write!(f, "^{}", k)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_at(f, 0)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

impl core::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

fn powi(base: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        b *= b;
        e >>= 1;
    }
    acc
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Num(v) if *v == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Num(v) if *v == 1.0)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (a, b) if is_zero(&b) => a,
        (a, b) if is_zero(&a) => b,
        (a, b) => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (a, b) if is_zero(&b) => a,
        (a, b) if is_zero(&a) => neg(b),
        (a, b) => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (a, b) if is_zero(&a) || is_zero(&b) => Expr::Num(0.0),
        (a, b) if is_one(&a) => b,
        (a, b) if is_one(&b) => a,
        (a, b) => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, _) if is_zero(&a) => Expr::Num(0.0),
        (a, b) if is_one(&b) => a,
        (a, b) => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: u32) -> Expr {
    match k {
        0 => Expr::Num(1.0),
        1 => a,
        k => match a {
            Expr::Num(v) => Expr::Num(powi(v, k)),
            a => Expr::Pow(Box::new(a), k),
        },
    }
}

fn call(func: Func, a: Expr) -> Expr {
    Expr::Call(func, Box::new(a))
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.pos == self.bytes.len() {
            return Err(self.syntax("empty expression"));
        }
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn syntax(&self, msg: &str) -> ParseError {
        ParseError {
            offset: self.pos,
            kind: ParseErrorKind::Syntax(msg.to_string()),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(match c {
                b')' => "expected `)`",
                b'(' => "expected `(`",
                _ => "unexpected token",
            }))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let negate = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let mut base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.syntax("exponent must be a non-negative integer literal"));
            }
            let k: u32 = self.src[start..self.pos].parse().map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::MalformedNumber(self.src[start..self.pos].to_string()),
            })?;
            base = Expr::Pow(Box::new(base), k);
        }
        Ok(if negate { Expr::Neg(Box::new(base)) } else { base })
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.syntax("unexpected token")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            i += 1;
            if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                i += 1;
            }
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        // Swallow glued identifier characters so `2x1` reports as malformed.
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'.') {
            i += 1;
        }
        let text = &self.src[start..i];
        self.pos = i;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::MalformedNumber(text.to_string()),
            }),
        }
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(func) = Func::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        parse_var(name).map(Expr::Var).ok_or_else(|| ParseError {
            offset: start,
            kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
        })
    }
}

fn parse_var(name: &str) -> Option<Var> {
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    let idx: usize = digits.parse().ok()?;
    match head {
        "x" => Some(Var::State(idx - 1)),
        "u" => Some(Var::Control(idx - 1)),
        _ => None,
    }
}

/// Parses each string, returning the first failure tagged with its position.
pub fn parse_all<'s>(texts: impl IntoIterator<Item = &'s str>) -> Result<Vec<Expr>, (usize, ParseError)> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Expr::parse(t).map_err(|e| (i, e)))
        .collect()
}
