//! A small arithmetic expression language used to define custom losses and
//! targets from configuration files.
//!
//! Grammar: numbers, variables, `+ - * /`, integer powers `^k`, unary
//! minus, parentheses and calls to a fixed set of primitives
//! (`exp log ln tanh relu recip sqrt square sin cos logistic softplus Phi phi`).
//! Expressions are evaluated generically over [`Real`], so the same parsed
//! tree yields values, gradients and hessians.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Tanh,
    Relu,
    Recip,
    Sqrt,
    Square,
    Sin,
    Cos,
    Logistic,
    Softplus,
    NormCdf,
    NormPdf,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Ln,
            "tanh" => Func::Tanh,
            "relu" => Func::Relu,
            "recip" => Func::Recip,
            "sqrt" => Func::Sqrt,
            "square" => Func::Square,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "logistic" => Func::Logistic,
            "softplus" => Func::Softplus,
            "Phi" => Func::NormCdf,
            "phi" => Func::NormPdf,
            _ => return None,
        })
    }

    fn apply<T: Real>(self, v: &T) -> T {
        match self {
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Tanh => v.tanh(),
            Func::Relu => v.relu(),
            Func::Recip => v.recip(),
            Func::Sqrt => v.sqrt(),
            Func::Square => v.square(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Logistic => v.logistic(),
            Func::Softplus => v.softplus(),
            Func::NormCdf => v.norm_cdf(),
            Func::NormPdf => v.norm_pdf(),
        }
    }
}

/// Variable reference: a named group and a zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarRef {
    pub group: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(VarRef),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

/// Values bound to variable groups during evaluation.
pub struct Bindings<'a, T> {
    /// Groups whose entries are differentiated.
    pub active: (&'a str, &'a [T]),
    /// Plain data groups.
    pub data: &'a BTreeMap<&'a str, &'a [f64]>,
}

impl Expr {
    /// Parses `src`. `groups` lists the accepted variable prefixes; a
    /// variable is written as prefix followed by a 1-based index
    /// (`theta2`), or the bare prefix meaning index 1.
    pub fn parse(src: &str, groups: &[&str]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            groups,
        };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input at token {}",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval<T: Real>(&self, b: &Bindings<'_, T>) -> Result<T> {
        Ok(match self {
            Expr::Num(v) => T::from_f64(*v),
            Expr::Var(r) => {
                if r.group == b.active.0 {
                    b.active
                        .1
                        .get(r.index)
                        .cloned()
                        .ok_or(Error::IndexOutOfRange {
                            index: r.index + 1,
                            len: b.active.1.len(),
                        })?
                } else {
                    let vals = b
                        .data
                        .get(r.group.as_str())
                        .ok_or_else(|| Error::Expression(format!("unbound group `{}`", r.group)))?;
                    T::from_f64(*vals.get(r.index).ok_or(Error::IndexOutOfRange {
                        index: r.index + 1,
                        len: vals.len(),
                    })?)
                }
            }
            Expr::Neg(a) => -a.eval(b)?,
            Expr::Add(a, c) => a.eval(b)? + c.eval(b)?,
            Expr::Sub(a, c) => a.eval(b)? - c.eval(b)?,
            Expr::Mul(a, c) => a.eval(b)? * c.eval(b)?,
            Expr::Div(a, c) => a.eval(b)? / c.eval(b)?,
            Expr::Pow(a, k) => a.eval(b)?.powi(*k),
            Expr::Call(f, a) => f.apply(&a.eval(b)?),
        })
    }

    /// Largest index used per group (as a count).
    pub fn max_index(&self, group: &str) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(r) => {
                if r.group == group {
                    r.index + 1
                } else {
                    0
                }
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_index(group),
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) => {
                a.max_index(group).max(c.max_index(group))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || chars[i] == 'e'
                    || chars[i] == 'E'
                    || ((chars[i] == '-' || chars[i] == '+')
                        && i > start
                        && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number `{s}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'g> {
    tokens: Vec<Tok>,
    pos: usize,
    groups: &'g [&'g str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let neg = self.eat_op('-');
            match self.tokens.get(self.pos).cloned() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() < 64.0 => {
                    self.pos += 1;
                    let k = v as i32;
                    return Ok(Expr::Pow(Box::new(base), if neg { -k } else { k }));
                }
                _ => {
                    return Err(Error::UnsupportedPrimitive(
                        "^ with a non-integer exponent".into(),
                    ))
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(Error::Expression("missing `)`".into()));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat_op('(') {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::UnsupportedPrimitive(name.clone()))?;
                    let arg = self.expr()?;
                    if !self.eat_op(')') {
                        return Err(Error::Expression(format!("missing `)` after {name}(")));
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                self.variable(&name).map(Expr::Var)
            }
            other => Err(Error::Expression(format!("unexpected token {other:?}"))),
        }
    }

    fn variable(&self, name: &str) -> Result<VarRef> {
        // Longest matching prefix wins so that `theta` is not read as `t`.
        let mut groups: Vec<&str> = self.groups.to_vec();
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
        for g in groups {
            if let Some(rest) = name.strip_prefix(g) {
                if rest.is_empty() {
                    return Ok(VarRef {
                        group: g.to_string(),
                        index: 0,
                    });
                }
                if let Ok(k) = rest.parse::<usize>() {
                    if k == 0 {
                        return Err(Error::Expression(format!(
                            "variable `{name}`: indices start at 1"
                        )));
                    }
                    return Ok(VarRef {
                        group: g.to_string(),
                        index: k - 1,
                    });
                }
            }
        }
        Err(Error::Expression(format!("unknown variable `{name}`")))
    }
}
