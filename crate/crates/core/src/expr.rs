//! Arithmetic expressions for coefficient fields.
//!
//! Grammar: `+ - * / ^` with the usual precedence, unary minus, parentheses,
//! the functions `sin cos exp tanh`, the constant `pi`, and the variables `x`
//! (and `y` on two-dimensional domains). `^` is right-associative and binds
//! tighter than unary minus, so `-x^2` is `-(x^2)`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// Immutable expression tree; evaluation is pure and reentrant.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    /// Coordinate index: 0 for `x`, 1 for `y`.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Fun(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, point: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(k) => point[*k],
            Expr::Neg(e) => -e.eval(point),
            Expr::Add(a, b) => a.eval(point) + b.eval(point),
            Expr::Sub(a, b) => a.eval(point) - b.eval(point),
            Expr::Mul(a, b) => a.eval(point) * b.eval(point),
            Expr::Div(a, b) => a.eval(point) / b.eval(point),
            Expr::Pow(a, b) => a.eval(point).powf(b.eval(point)),
            Expr::Fun(f, e) => f.apply(e.eval(point)),
        }
    }

    /// True when no coordinate variable occurs anywhere in the tree.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => true,
            Expr::Var(_) => false,
            Expr::Neg(e) | Expr::Fun(_, e) => e.is_constant(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

// The printer parenthesizes so that re-parsing rebuilds the identical tree,
// not merely an equal value; float arithmetic is not associative, so value
// preservation alone would not be enough for exact round-trips.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(0) => write!(f, "x"),
            Expr::Var(_) => write!(f, "y"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                child(f, e, e.prec() <= 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                child(f, a, a.prec() < 1)?;
                write!(f, "{}", if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                child(f, b, b.prec() <= 1)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                child(f, a, a.prec() < 2)?;
                write!(f, "{}", if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                child(f, b, b.prec() <= 2)
            }
            Expr::Pow(a, b) => {
                child(f, a, a.prec() <= 4)?;
                write!(f, "^")?;
                child(f, b, b.prec() < 3)
            }
            Expr::Fun(g, e) => write!(f, "{}({e})", g.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Num(f64),
    Ident(&'a str),
    Op(u8),
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, pos: 0 }
    }

    /// Next token with its byte offset, or `None` at end of input.
    fn next(&mut self) -> Result<Option<(Tok<'a>, usize)>> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = bytes[start];
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' => {
                self.pos += 1;
                Ok(Some((Tok::Op(c), start)))
            }
            b'0'..=b'9' | b'.' => {
                let mut end = start;
                while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                    end += 1;
                }
                if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                    let mut e = end + 1;
                    if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                        e += 1;
                    }
                    if e < bytes.len() && bytes[e].is_ascii_digit() {
                        end = e;
                        while end < bytes.len() && bytes[end].is_ascii_digit() {
                            end += 1;
                        }
                    }
                }
                let raw = &self.text[start..end];
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    offset: start,
                    message: format!("bad number literal '{raw}'"),
                })?;
                self.pos = end;
                Ok(Some((Tok::Num(v), start)))
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = start;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                self.pos = end;
                Ok(Some((Tok::Ident(&self.text[start..end]), start)))
            }
            _ => Err(Error::Parse {
                offset: start,
                message: format!("unexpected character '{}'", &self.text[start..].chars().next().unwrap()),
            }),
        }
    }
}

struct Parser<'a> {
    toks: Vec<(Tok<'a>, usize)>,
    cursor: usize,
    end: usize,
    dimension: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<(Tok<'a>, usize)> {
        self.toks.get(self.cursor).copied()
    }

    fn bump(&mut self) -> Option<(Tok<'a>, usize)> {
        let t = self.peek();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some((Tok::Op(op @ (b'+' | b'-')), _)) = self.peek() {
            self.bump();
            let rhs = self.term()?;
            lhs = if op == b'+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some((Tok::Op(op @ (b'*' | b'/')), _)) = self.peek() {
            self.bump();
            let rhs = self.unary()?;
            lhs = if op == b'*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some((Tok::Op(b'-'), _)) = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some((Tok::Op(b'^'), _)) = self.peek() {
            self.bump();
            // right-associative, exponent may carry its own sign
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, off) = match self.bump() {
            Some(t) => t,
            None => {
                return Err(Error::Parse {
                    offset: self.end,
                    message: "expected an expression".into(),
                })
            }
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op(b'(') => {
                let inner = self.expr()?;
                match self.bump() {
                    Some((Tok::Op(b')'), _)) => Ok(inner),
                    other => Err(Error::Parse {
                        offset: other.map(|(_, o)| o).unwrap_or(self.end),
                        message: "expected ')'".into(),
                    }),
                }
            }
            Tok::Ident("pi") => Ok(Expr::Pi),
            Tok::Ident("x") => Ok(Expr::Var(0)),
            Tok::Ident("y") => {
                if self.dimension < 2 {
                    return Err(Error::Parse {
                        offset: off,
                        message: "variable 'y' needs a 2-dimensional domain".into(),
                    });
                }
                Ok(Expr::Var(1))
            }
            Tok::Ident(name @ ("sin" | "cos" | "exp" | "tanh")) => {
                let func = match name {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    _ => Func::Tanh,
                };
                match self.bump() {
                    Some((Tok::Op(b'('), _)) => {}
                    other => {
                        return Err(Error::Parse {
                            offset: other.map(|(_, o)| o).unwrap_or(self.end),
                            message: format!("expected '(' after '{name}'"),
                        })
                    }
                }
                let arg = self.expr()?;
                match self.bump() {
                    Some((Tok::Op(b')'), _)) => Ok(Expr::Fun(func, Box::new(arg))),
                    other => Err(Error::Parse {
                        offset: other.map(|(_, o)| o).unwrap_or(self.end),
                        message: "expected ')'".into(),
                    }),
                }
            }
            Tok::Ident(name) => Err(Error::Parse {
                offset: off,
                message: format!("unknown identifier '{name}'"),
            }),
            Tok::Op(c) => Err(Error::Parse {
                offset: off,
                message: format!("unexpected '{}'", c as char),
            }),
        }
    }
}

/// Parse `text` over a `dimension`-dimensional coordinate (1 or 2).
pub fn parse_expression(text: &str, dimension: usize) -> Result<Expr> {
    assert!(
        dimension == 1 || dimension == 2,
        "only 1- and 2-dimensional domains exist"
    );
    let mut lx = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lx.next()? {
        toks.push(t);
    }
    let mut p = Parser {
        toks,
        cursor: 0,
        end: text.len(),
        dimension,
    };
    let e = p.expr()?;
    if let Some((_, off)) = p.peek() {
        return Err(Error::Parse {
            offset: off,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(e)
}
