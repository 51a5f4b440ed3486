//! Polynomial-style scalar expressions over `x1..xn` with exact first and
//! second derivatives by forward-mode (hyper-dual) evaluation.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' exponent)?
//! exponent:= integer | '(' integer ')'
//! primary := number | 'x' index | '(' sum ')'
//! ```

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index (`x1` is `Var(0)`).
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    /// One past the largest variable index used (0 for constants).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.arity().max(b.arity()),
            Expr::Neg(a) | Expr::Pow(a, _) => a.arity(),
        }
    }

    fn is_atom(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, k) if a.is_atom() => write!(f, "{a}^{k}"),
            Expr::Pow(a, k) => write!(f, "({a})^{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    /// Next token and its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            let bytes = rest.as_bytes();
            let mut i = 0;
            let mut integral = true;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                integral = false;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    integral = false;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &rest[..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                position: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos += i;
            return Ok((Tok::Num(v, integral), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let len = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            self.pos += len;
            return Ok((Tok::Ident(rest[..len].to_string()), start));
        }
        if "+-*/^()".contains(c) {
            self.pos += 1;
            return Ok((Tok::Op(c), start));
        }
        Err(Error::Syntax { position: start, message: format!("unexpected character `{c}`") })
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    pos: usize,
    n: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<()> {
        let (t, p) = self.lex.next()?;
        self.tok = t;
        self.pos = p;
        Ok(())
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { position: self.pos, message: message.into() })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.tok == Tok::Op(c) {
            self.bump()
        } else {
            self.syntax(format!("expected `{c}`"))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Op('-') => {
                    self.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.tok != Tok::Op('^') {
            return Ok(base);
        }
        self.bump()?;
        let paren = self.tok == Tok::Op('(');
        if paren {
            self.bump()?;
        }
        let k = match self.tok {
            Tok::Num(v, true) if v <= u32::MAX as f64 => v as u32,
            Tok::Num(..) => return Err(Error::NonIntegerExponent { position: self.pos }),
            Tok::Op('-') => return self.syntax("exponent must be nonnegative"),
            _ => return self.syntax("expected integer exponent"),
        };
        self.bump()?;
        if paren {
            self.expect(')')?;
        }
        if self.tok == Tok::Op('^') {
            return self.syntax("chained `^` is ambiguous; add parentheses");
        }
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v, _) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                let idx = name
                    .strip_prefix('x')
                    .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&k| k >= 1 && k <= self.n);
                match idx {
                    Some(k) => {
                        self.bump()?;
                        Ok(Expr::Var(k - 1))
                    }
                    None => Err(Error::UnknownVariable { name, position: self.pos, n: self.n }),
                }
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::End => self.syntax("unexpected end of input"),
            Tok::Op(c) => self.syntax(format!("unexpected `{c}`")),
        }
    }
}

/// Parse `text` as an expression in the variables `x1..xn`.
pub fn parse(text: &str, n: usize) -> Result<Expr> {
    let mut p = Parser { lex: Lexer { src: text, pos: 0 }, tok: Tok::End, pos: 0, n };
    p.bump()?;
    let e = p.sum()?;
    if p.tok != Tok::End {
        return p.syntax("trailing input");
    }
    Ok(e)
}

/// Value, gradient and Hessian of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl SecondOrderValue {
    fn constant(v: f64, n: usize) -> Self {
        Self { value: v, gradient: DVector::zeros(n), hessian: DMatrix::zeros(n, n) }
    }

    fn variable(i: usize, v: f64, n: usize) -> Self {
        let mut s = Self::constant(v, n);
        s.gradient[i] = 1.0;
        s
    }

    fn add(self, o: Self) -> Self {
        Self { value: self.value + o.value, gradient: self.gradient + o.gradient, hessian: self.hessian + o.hessian }
    }

    fn neg(self) -> Self {
        Self { value: -self.value, gradient: -self.gradient, hessian: -self.hessian }
    }

    fn mul(self, o: Self) -> Self {
        let cross = &self.gradient * o.gradient.transpose();
        let hessian = &o.hessian * self.value + &self.hessian * o.value + &cross + cross.transpose();
        Self {
            value: self.value * o.value,
            gradient: &o.gradient * self.value + &self.gradient * o.value,
            hessian,
        }
    }

    /// Chain rule for a scalar function with derivatives `(h, h', h'')` at `value`.
    fn compose(self, h0: f64, h1: f64, h2: f64) -> Self {
        let outer = &self.gradient * self.gradient.transpose();
        Self { value: h0, hessian: &self.hessian * h1 + outer * h2, gradient: self.gradient * h1 }
    }

    fn recip(self) -> Result<Self> {
        let b = self.value;
        if b == 0.0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.compose(1.0 / b, -1.0 / (b * b), 2.0 / (b * b * b)))
    }

    fn powi(self, k: u32) -> Self {
        let n = self.gradient.len();
        match k {
            0 => Self::constant(1.0, n),
            1 => self,
            _ => {
                let a = self.value;
                let kf = k as f64;
                let h2 = kf * (kf - 1.0) * a.powi(k as i32 - 2);
                self.compose(a.powi(k as i32), kf * a.powi(k as i32 - 1), h2)
            }
        }
    }
}

fn eval_rec(e: &Expr, x: &[f64]) -> Result<SecondOrderValue> {
    let n = x.len();
    Ok(match e {
        Expr::Const(c) => SecondOrderValue::constant(*c, n),
        Expr::Var(i) => SecondOrderValue::variable(*i, x[*i], n),
        Expr::Add(a, b) => eval_rec(a, x)?.add(eval_rec(b, x)?),
        Expr::Sub(a, b) => eval_rec(a, x)?.add(eval_rec(b, x)?.neg()),
        Expr::Mul(a, b) => eval_rec(a, x)?.mul(eval_rec(b, x)?),
        Expr::Div(a, b) => eval_rec(a, x)?.mul(eval_rec(b, x)?.recip()?),
        Expr::Neg(a) => eval_rec(a, x)?.neg(),
        Expr::Pow(a, k) => eval_rec(a, x)?.powi(*k),
    })
}

/// Value, gradient and (symmetrized) Hessian of `e` at `x`.
pub fn eval2(e: &Expr, x: &[f64]) -> Result<SecondOrderValue> {
    if e.arity() > x.len() {
        return Err(Error::DimensionMismatch { expected: e.arity(), got: x.len() });
    }
    let mut v = eval_rec(e, x)?;
    v.hessian = crate::linalg::symmetrize(&v.hessian);
    Ok(v)
}

/// Plain value of `e` at `x`.
pub fn eval(e: &Expr, x: &[f64]) -> Result<f64> {
    if e.arity() > x.len() {
        return Err(Error::DimensionMismatch { expected: e.arity(), got: x.len() });
    }
    fn rec(e: &Expr, x: &[f64]) -> Result<f64> {
        Ok(match e {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => rec(a, x)? + rec(b, x)?,
            Expr::Sub(a, b) => rec(a, x)? - rec(b, x)?,
            Expr::Mul(a, b) => rec(a, x)? * rec(b, x)?,
            Expr::Div(a, b) => {
                let d = rec(b, x)?;
                if d == 0.0 {
                    return Err(Error::DivisionByZero);
                }
                rec(a, x)? / d
            }
            Expr::Neg(a) => -rec(a, x)?,
            Expr::Pow(a, k) => rec(a, x)?.powi(*k as i32),
        })
    }
    rec(e, x)
}
