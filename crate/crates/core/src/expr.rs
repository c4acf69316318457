//! Scalar expressions over `t`, `x1..xn`, `u1..um`.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp ln sqrt sin cos abs sign pow(a, b)`. Every node can be
//! differentiated symbolically with respect to any variable.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// State coordinate, zero based.
    X(usize),
    /// Control coordinate, zero based.
    U(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Abs,
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Evaluation point `(t, x, u)`.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
}

impl<'a> Point<'a> {
    pub fn new(t: f64, x: &'a [f64], u: &'a [f64]) -> Self {
        Point { t, x, u }
    }

    pub fn time(t: f64) -> Point<'static> {
        Point { t, x: &[], u: &[] }
    }

    fn domain_error(&self, func: &'static str, arg: f64) -> Error {
        Error::Domain {
            func,
            arg,
            t: self.t,
            x: self.x.to_vec(),
            u: self.u.to_vec(),
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn eval(&self, p: &Point<'_>) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => p.t,
            Expr::Var(Var::X(i)) => *p.x.get(*i).ok_or_else(|| {
                Error::DimensionMismatch(format!("x{} requested, state has {} entries", i + 1, p.x.len()))
            })?,
            Expr::Var(Var::U(i)) => *p.u.get(*i).ok_or_else(|| {
                Error::DimensionMismatch(format!("u{} requested, control has {} entries", i + 1, p.u.len()))
            })?,
            Expr::Neg(a) => -a.eval(p)?,
            Expr::Add(a, b) => a.eval(p)? + b.eval(p)?,
            Expr::Sub(a, b) => a.eval(p)? - b.eval(p)?,
            Expr::Mul(a, b) => a.eval(p)? * b.eval(p)?,
            Expr::Div(a, b) => {
                let d = b.eval(p)?;
                if d == 0.0 {
                    return Err(p.domain_error("div", d));
                }
                a.eval(p)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval(p)?;
                let ex = b.eval(p)?;
                if base < 0.0 && ex.fract() != 0.0 {
                    return Err(p.domain_error("pow", base));
                }
                if base == 0.0 && ex < 0.0 {
                    return Err(p.domain_error("pow", base));
                }
                if ex.fract() == 0.0 && ex.abs() < 64.0 {
                    base.powi(ex as i32)
                } else {
                    base.powf(ex)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(p)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Ln => {
                        if v <= 0.0 {
                            return Err(p.domain_error("ln", v));
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(p.domain_error("sqrt", v));
                        }
                        v.sqrt()
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Abs => v.abs(),
                    Func::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        })
    }

    /// Symbolic partial derivative with respect to `v`.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(w) => Expr::Num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(v)),
            Expr::Add(a, b) => add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => add(
                mul(a.diff(v), (**b).clone()),
                mul((**a).clone(), b.diff(v)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.diff(v), (**b).clone()),
                    mul((**a).clone(), b.diff(v)),
                );
                div(num, pow((**b).clone(), Expr::Num(2.0)))
            }
            Expr::Pow(a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                if db.is_zero() {
                    // b * a^(b-1) * a'
                    let ex = sub((**b).clone(), Expr::Num(1.0));
                    mul(mul((**b).clone(), pow((**a).clone(), ex)), da)
                } else {
                    // a^b * (b' ln a + b a'/a)
                    let lhs = mul(db, call(Func::Ln, (**a).clone()));
                    let rhs = div(mul((**b).clone(), da), (**a).clone());
                    mul(self.clone(), add(lhs, rhs))
                }
            }
            Expr::Call(f, a) => {
                let da = a.diff(v);
                if da.is_zero() {
                    return Expr::Num(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Ln => div(Expr::Num(1.0), inner),
                    Func::Sqrt => div(Expr::Num(0.5), call(Func::Sqrt, inner)),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Abs => call(Func::Sign, inner),
                    Func::Sign => Expr::Num(0.0),
                };
                mul(outer, da)
            }
        }
    }

    /// Whether the expression references `v` anywhere.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    fn depends_on_controls(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => matches!(w, Var::U(_)),
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_controls(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on_controls() || b.depends_on_controls()
            }
        }
    }

    /// Polynomial degree in the control variables, `None` when the expression
    /// is not polynomial in `u`.
    pub fn control_degree(&self) -> Option<u32> {
        match self {
            Expr::Num(_) => Some(0),
            Expr::Var(Var::U(_)) => Some(1),
            Expr::Var(_) => Some(0),
            Expr::Neg(a) => a.control_degree(),
            Expr::Add(a, b) | Expr::Sub(a, b) => Some(a.control_degree()?.max(b.control_degree()?)),
            Expr::Mul(a, b) => Some(a.control_degree()? + b.control_degree()?),
            Expr::Div(a, b) => {
                if b.depends_on_controls() {
                    None
                } else {
                    a.control_degree()
                }
            }
            Expr::Pow(a, b) => {
                if b.depends_on_controls() {
                    return None;
                }
                let d = a.control_degree()?;
                if d == 0 {
                    return Some(0);
                }
                match b.as_num() {
                    Some(k) if k >= 0.0 && k.fract() == 0.0 && k <= 16.0 => Some(d * k as u32),
                    _ => None,
                }
            }
            Expr::Call(_, a) => {
                if a.depends_on_controls() {
                    None
                } else {
                    Some(0)
                }
            }
        }
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => Expr::Num(x / y),
        _ if a.is_zero() => Expr::Num(0.0),
        _ if b.is_one() => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if b.is_zero() => Expr::Num(1.0),
        _ if b.is_one() => a,
        (Expr::Num(x), Expr::Num(y)) if *x > 0.0 => Expr::Num(x.powf(*y)),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

pub fn call(f: Func, a: Expr) -> Expr {
    match (f, &a) {
        (Func::Exp, Expr::Num(v)) => Expr::Num(v.exp()),
        (Func::Ln, Expr::Num(v)) if *v > 0.0 => Expr::Num(v.ln()),
        (Func::Sqrt, Expr::Num(v)) if *v >= 0.0 => Expr::Num(v.sqrt()),
        (Func::Sin, Expr::Num(v)) => Expr::Num(v.sin()),
        (Func::Cos, Expr::Num(v)) => Expr::Num(v.cos()),
        (Func::Abs, Expr::Num(v)) => Expr::Num(v.abs()),
        _ => Expr::Call(f, Box::new(a)),
    }
}

fn fmt_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(f, "{}", v as i64)
    } else {
        write!(f, "{v:e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => {
                write!(f, "(")?;
                fmt_num(*v, f)?;
                write!(f, ")")
            }
            Expr::Num(v) => fmt_num(*v, f),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::U(i)) => write!(f, "u{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Which variables and named constants an expression may reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scope {
    pub n: usize,
    pub m: usize,
    pub consts: Vec<(String, f64)>,
}

impl Scope {
    pub fn new(n: usize, m: usize) -> Self {
        Scope {
            n,
            m,
            consts: Vec::new(),
        }
    }

    /// Only `t` is visible (weights, closed-form time functions).
    pub fn time() -> Self {
        Scope::new(0, 0)
    }

    pub fn with_consts(mut self, consts: &[(String, f64)]) -> Self {
        self.consts = consts.to_vec();
        self
    }

    /// Same constants, time as the only variable.
    pub fn time_only(&self) -> Self {
        Scope {
            n: 0,
            m: 0,
            consts: self.consts.clone(),
        }
    }

    fn constant(&self, name: &str) -> Option<f64> {
        self.consts.iter().rev().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn tokenize(src: &str, line: usize, col0: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
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
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                line,
                column,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token { tok: Tok::Num(v), line, column });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                column,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { tok: Tok::Op(c), line, column });
            i += 1;
        } else {
            return Err(Error::Syntax {
                line,
                column,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'s> {
    toks: Vec<Token>,
    pos: usize,
    scope: &'s Scope,
    line: usize,
    end_column: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|t| (t.line, t.column))
            .unwrap_or((self.line, self.end_column))
    }

    fn error(&self, message: impl Into<String>) -> Error {
        let (line, column) = self.here();
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let ex = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(ex)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let (line, column) = self.here();
        let tok = self
            .toks
            .get(self.pos)
            .map(|t| t.tok.clone())
            .ok_or_else(|| self.error("unexpected end of expression"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Op(c) => {
                self.pos -= 1;
                Err(self.error(format!("unexpected `{c}`")))
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::Op('(')) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    return self.apply(&name, args, line, column);
                }
                self.variable(&name, line, column)
            }
        }
    }

    fn apply(&self, name: &str, mut args: Vec<Expr>, line: usize, column: usize) -> Result<Expr> {
        if name == "pow" {
            if args.len() != 2 {
                return Err(Error::Syntax {
                    line,
                    column,
                    message: "pow expects two arguments".into(),
                });
            }
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            return Ok(Expr::Pow(Box::new(a), Box::new(b)));
        }
        let func = Func::from_name(name).ok_or_else(|| Error::UnknownIdentifier {
            name: name.to_string(),
            line,
            column,
        })?;
        if args.len() != 1 {
            return Err(Error::Syntax {
                line,
                column,
                message: format!("{name} expects one argument"),
            });
        }
        Ok(Expr::Call(func, Box::new(args.pop().unwrap())))
    }

    fn variable(&self, name: &str, line: usize, column: usize) -> Result<Expr> {
        let unknown = || Error::UnknownIdentifier {
            name: name.to_string(),
            line,
            column,
        };
        if name == "t" {
            return Ok(Expr::Var(Var::T));
        }
        if let Some(v) = self.scope.constant(name) {
            return Ok(Expr::Num(v));
        }
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        let (kind, rest) = name.split_at(1);
        let idx: usize = rest.parse().map_err(|_| unknown())?;
        if idx == 0 {
            return Err(unknown());
        }
        match kind {
            "x" if idx <= self.scope.n => Ok(Expr::Var(Var::X(idx - 1))),
            "u" if idx <= self.scope.m => Ok(Expr::Var(Var::U(idx - 1))),
            _ => Err(unknown()),
        }
    }
}

/// Parses `src` as an expression. `line` and `column` locate the text in a
/// larger file for error messages (1-based).
pub fn parse_at(src: &str, scope: &Scope, line: usize, column: usize) -> Result<Expr> {
    let toks = tokenize(src, line, column)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scope,
        line,
        end_column: column + src.chars().count(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

pub fn parse(src: &str, scope: &Scope) -> Result<Expr> {
    parse_at(src, scope, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64, x: &[f64], u: &[f64]) -> f64 {
        parse(src, &Scope::new(x.len(), u.len()))
            .unwrap()
            .eval(&Point::new(t, x, u))
            .unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, &[], &[]), 7.0);
        assert_eq!(ev("-2^2", 0.0, &[], &[]), -4.0);
        assert_eq!(ev("2^3^2", 0.0, &[], &[]), 512.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, &[], &[]), 1.0);
        assert_eq!(ev("(x1^2 + u1^2)/2", 0.0, &[2.0], &[4.0]), 10.0);
        assert!((ev("pow(t, 0.5) * exp(0)", 4.0, &[], &[]) - 2.0).abs() < 1e-15);
        assert!((ev("1.5e-1 + .5", 0.0, &[], &[]) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn ln_of_nonpositive_reports_point() {
        let e = parse("ln(x1)", &Scope::new(1, 1)).unwrap();
        let err = e.eval(&Point::new(3.0, &[-1.0], &[0.5])).unwrap_err();
        match err {
            Error::Domain { func, t, x, u, .. } => {
                assert_eq!(func, "ln");
                assert_eq!(t, 3.0);
                assert_eq!(x, vec![-1.0]);
                assert_eq!(u, vec![0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifiers_are_located() {
        let err = parse("x1 + x3", &Scope::new(2, 1)).unwrap_err();
        assert_eq!(
            err,
            Error::UnknownIdentifier {
                name: "x3".into(),
                line: 1,
                column: 6
            }
        );
        assert!(matches!(parse("log(t)", &Scope::time()), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("x1", &Scope::time()), Err(Error::UnknownIdentifier { .. })));
    }

    #[test]
    fn named_constants_resolve() {
        let s = Scope::new(1, 0).with_consts(&[("rho".into(), 0.5)]);
        let e = parse("exp(-rho*t)*x1", &s).unwrap();
        assert_eq!(e.eval(&Point::new(2.0, &[3.0], &[])).unwrap(), 3.0 * (-1.0f64).exp());
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse("1 +", &Scope::time()), Err(Error::Syntax { .. })));
        assert!(matches!(parse("(1 + 2", &Scope::time()), Err(Error::Syntax { .. })));
        assert!(matches!(parse("1 2", &Scope::time()), Err(Error::Syntax { .. })));
        assert!(matches!(parse("2 $ 3", &Scope::time()), Err(Error::Syntax { column: 3, .. })));
    }

    #[test]
    fn derivatives_match_closed_forms() {
        let s = Scope::new(1, 1);
        let f = parse("x1*exp(-2*t) + ln(x1)*u1^3 + sqrt(x1)/u1", &s).unwrap();
        let dx = f.diff(Var::X(0));
        let du = f.diff(Var::U(0));
        let (t, x, u) = (0.3, 1.7, 0.9);
        let (xs, us) = ([x], [u]);
        let p = Point::new(t, &xs, &us);
        let want_dx = (-2.0 * t as f64).exp() + u.powi(3) / x + 0.5 / (x.sqrt() * u);
        let want_du = 3.0 * x.ln() * u * u - x.sqrt() / (u * u);
        assert!((dx.eval(&p).unwrap() - want_dx).abs() < 1e-13);
        assert!((du.eval(&p).unwrap() - want_du).abs() < 1e-13);
    }

    #[test]
    fn variable_exponent_derivative() {
        let f = parse("x1^x1", &Scope::new(1, 0)).unwrap();
        let d = f.diff(Var::X(0));
        let x: f64 = 1.3;
        let want = x.powf(x) * (x.ln() + 1.0);
        assert!((d.eval(&Point::new(0.0, &[x], &[])).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn simplification_keeps_derivatives_small() {
        let f = parse("2*x1 + u1", &Scope::new(1, 1)).unwrap();
        assert_eq!(f.diff(Var::X(0)), Expr::Num(2.0));
        assert_eq!(f.diff(Var::U(0)), Expr::Num(1.0));
        assert_eq!(f.diff(Var::T), Expr::Num(0.0));
    }

    #[test]
    fn control_degree_detects_quadratics() {
        let s = Scope::new(1, 2);
        let deg = |src: &str| parse(src, &s).unwrap().control_degree();
        assert_eq!(deg("(x1^2 + u1^2)/2"), Some(2));
        assert_eq!(deg("2*x1 + u1*u2"), Some(2));
        assert_eq!(deg("exp(x1)*u1"), Some(1));
        assert_eq!(deg("ln((1-u1)*x1)"), None);
        assert_eq!(deg("u1/(u1+u2)"), None);
        assert_eq!(deg("u1^3"), Some(3));
    }

    #[test]
    fn display_round_trips_through_parser() {
        let s = Scope::new(2, 1);
        let f = parse("-x1^2 * sin(t) / (1 + abs(u1)) - pow(x2, 1.5) + (-3)", &s).unwrap();
        let g = parse(&f.to_string(), &s).unwrap();
        let p = Point::new(0.7, &[1.1, 2.3], &[-0.4]);
        assert_eq!(f.eval(&p).unwrap(), g.eval(&p).unwrap());
    }
}
