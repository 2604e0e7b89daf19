//! A small arithmetic grammar for user-supplied coefficients.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | var | func '(' expr ')' | '(' expr ')' | '|' expr '|'
//! var     := x | x1..xd | mean | mean1..meand | mom2 | pi      (mean/mom2 may be written mean(mu))
//! func    := sin | cos | exp | abs
//! ```
//!
//! `mean` is the first moment of the current measure and `mom2` its second
//! moment `∫|y|² μ(dy)`. There are no loops, no assignment and no access to
//! anything but the state and these two statistics.

use crate::error::{Error, Result};
use crate::measure::MeasureView;

use super::Coefficients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    State(usize),
    Mean(usize),
    Mom2,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Parses `src` for a state of dimension `dim`.
    pub fn parse(src: &str, dim: usize) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, dim };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], mu: &MeasureView<'_>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::State(i) => x[*i],
            Expr::Mean(i) => mu.mean()[*i],
            Expr::Mom2 => mu.mom2(),
            Expr::Neg(e) => -e.eval(x, mu),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, mu), b.eval(x, mu));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(x, mu);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Abs => v.abs(),
                }
            }
        }
    }

    pub fn uses_measure(&self) -> bool {
        match self {
            Expr::Mean(_) | Expr::Mom2 => true,
            Expr::Num(_) | Expr::State(_) => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses_measure(),
            Expr::Bin(_, a, b) => a.uses_measure() || b.uses_measure(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i].1 == '+' || chars[i].1 == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].1.is_ascii_digit() {
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().map(|(_, c)| *c).collect();
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                position: pos,
                message: format!("bad number `{text}`"),
            })?;
            out.push((pos, Tok::Num(v)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            out.push((pos, Tok::Ident(chars[start..i].iter().map(|(_, c)| *c).collect())));
        } else if "+-*/()|".contains(c) {
            out.push((pos, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(Error::Parse {
                position: pos,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn error(&self, msg: &str) -> Error {
        let position = self.tokens.get(self.pos).map(|t| t.0).unwrap_or(usize::MAX);
        Error::Parse {
            position,
            message: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.1)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
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
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Sym('|')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect('|')?;
                Ok(Expr::Call(Func::Abs, Box::new(e)))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                self.ident(&name)
            }
            _ => Err(self.error("expected a number, variable, function or `(`")),
        }
    }

    fn ident(&mut self, name: &str) -> Result<Expr> {
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "abs" => Some(Func::Abs),
            _ => None,
        };
        if let Some(f) = func {
            self.expect('(')?;
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(Expr::Call(f, Box::new(e)));
        }
        let e = match name {
            "pi" => Expr::Num(std::f64::consts::PI),
            "x" => Expr::State(0),
            "mean" => Expr::Mean(0),
            "mom2" => Expr::Mom2,
            _ => {
                let (base, idx) = split_index(name).ok_or_else(|| self.unknown(name))?;
                if idx == 0 || idx > self.dim {
                    return Err(Error::Parse {
                        position: self.tokens[self.pos - 1].0,
                        message: format!("`{name}` is out of range for dimension {}", self.dim),
                    });
                }
                match base {
                    "x" => Expr::State(idx - 1),
                    "mean" => Expr::Mean(idx - 1),
                    _ => return Err(self.unknown(name)),
                }
            }
        };
        if matches!(e, Expr::Mean(_) | Expr::Mom2) {
            // optional `(mu)` / `(μ)` argument
            if self.peek() == Some(&Tok::Sym('(')) {
                let arg_ok = matches!(self.tokens.get(self.pos + 1), Some((_, Tok::Ident(a))) if a == "mu" || a == "μ");
                if !arg_ok {
                    return Err(self.error("measure statistics take only `(mu)`"));
                }
                self.pos += 2;
                self.expect(')')?;
            }
        }
        Ok(e)
    }

    fn unknown(&self, name: &str) -> Error {
        Error::Parse {
            position: self.tokens[self.pos - 1].0,
            message: format!("unknown identifier `{name}`"),
        }
    }
}

fn split_index(name: &str) -> Option<(&str, usize)> {
    let cut = name.find(|c: char| c.is_ascii_digit())?;
    let (base, digits) = name.split_at(cut);
    Some((base, digits.parse().ok()?))
}

/// Coefficients given as expression lists: `d` drift components and a
/// row-major `d × l` diffusion matrix.
#[derive(Debug)]
pub struct ExprModel {
    dim: usize,
    noise: usize,
    drift: Vec<Expr>,
    diffusion: Vec<Expr>,
}

impl ExprModel {
    pub fn parse<S: AsRef<str>>(drift: &[S], diffusion: &[S], dim: usize, noise: usize) -> Result<Self> {
        if dim == 0 || noise == 0 {
            return Err(Error::usage("expression model needs positive d and l"));
        }
        if drift.len() != dim {
            return Err(Error::structural(format!(
                "{} drift expressions for d = {dim}",
                drift.len()
            )));
        }
        if diffusion.len() != dim * noise {
            return Err(Error::structural(format!(
                "{} diffusion expressions for a {dim}×{noise} matrix",
                diffusion.len()
            )));
        }
        let parse = |s: &S| Expr::parse(s.as_ref(), dim);
        Ok(Self {
            dim,
            noise,
            drift: drift.iter().map(parse).collect::<Result<_>>()?,
            diffusion: diffusion.iter().map(parse).collect::<Result<_>>()?,
        })
    }
}

impl Coefficients for ExprModel {
    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_noise(&self) -> usize {
        self.noise
    }

    fn drift(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(x, mu);
        }
    }

    fn diffusion(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.diffusion) {
            *o = e.eval(x, mu);
        }
    }

    fn is_distribution_free(&self) -> bool {
        !self.drift.iter().chain(&self.diffusion).any(Expr::uses_measure)
    }
}
