//! Small expression language for implicit domains `{g(x, y) < 0}`.
//!
//! Supports `+ - * / ^`, unary minus, the variables `x`, `y`, the constant
//! `pi`, the elementary functions `sqrt abs exp ln sin cos tan`, `min`/`max`
//! (any arity), the smooth minimum `smin(a, b, k)` / maximum `smax(a, b, k)`
//! with smoothing radius `k`, and the primitives
//!
//! * `disc(cx, cy, r)` signed distance to a circle,
//! * `ellipse(cx, cy, a, b)` normalized quadratic `((x-cx)/a)^2 + ((y-cy)/b)^2 - 1`,
//! * `rect(cx, cy, w, h)` signed distance to an axis-aligned box.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Abs,
    Exp,
    Ln,
    Sin,
    Cos,
    Tan,
    Min,
    Max,
    Smin,
    Smax,
    Disc,
    Ellipse,
    Rect,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            "exp" => Self::Exp,
            "ln" => Self::Ln,
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tan" => Self::Tan,
            "min" => Self::Min,
            "max" => Self::Max,
            "smin" => Self::Smin,
            "smax" => Self::Smax,
            "disc" => Self::Disc,
            "ellipse" => Self::Ellipse,
            "rect" => Self::Rect,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Self::Sqrt | Self::Abs | Self::Exp | Self::Ln | Self::Sin | Self::Cos | Self::Tan => {
                n == 1
            }
            Self::Min | Self::Max => n >= 1,
            Self::Smin | Self::Smax | Self::Disc => n == 3,
            Self::Ellipse | Self::Rect => n == 4,
        }
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input at token {}",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(e) => -e.eval(x, y),
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(x, y), r.eval(x, y));
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => {
                        if b == 2.0 {
                            a * a
                        } else {
                            a.powf(b)
                        }
                    }
                }
            }
            Expr::Call(f, args) => {
                let v = |i: usize| args[i].eval(x, y);
                match f {
                    Func::Sqrt => v(0).sqrt(),
                    Func::Abs => v(0).abs(),
                    Func::Exp => v(0).exp(),
                    Func::Ln => v(0).ln(),
                    Func::Sin => v(0).sin(),
                    Func::Cos => v(0).cos(),
                    Func::Tan => v(0).tan(),
                    Func::Min => args
                        .iter()
                        .map(|a| a.eval(x, y))
                        .fold(f64::INFINITY, f64::min),
                    Func::Max => args
                        .iter()
                        .map(|a| a.eval(x, y))
                        .fold(f64::NEG_INFINITY, f64::max),
                    Func::Smin => smooth_min(v(0), v(1), v(2)),
                    Func::Smax => -smooth_min(-v(0), -v(1), v(2)),
                    Func::Disc => {
                        let (dx, dy) = (x - v(0), y - v(1));
                        (dx * dx + dy * dy).sqrt() - v(2)
                    }
                    Func::Ellipse => {
                        let (dx, dy) = ((x - v(0)) / v(2), (y - v(1)) / v(3));
                        dx * dx + dy * dy - 1.0
                    }
                    Func::Rect => {
                        let qx = (x - v(0)).abs() - 0.5 * v(2);
                        let qy = (y - v(1)).abs() - 0.5 * v(3);
                        let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                        outside + qx.max(qy).min(0.0)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
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
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(Error::Expression(format!("unexpected character '{c}'"))),
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        match self.next() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(Error::Expression(format!("expected {t:?}, found {got:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { Op::Add } else { Op::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { Op::Mul } else { Op::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if let Some(Tok::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    self.pos += 1;
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::Expression(format!("unknown function '{name}'")))?;
                    let mut args = Vec::new();
                    if let Some(Tok::RParen) = self.peek() {
                        self.pos += 1;
                    } else {
                        loop {
                            args.push(self.expr()?);
                            match self.next() {
                                Some(Tok::Comma) => continue,
                                Some(Tok::RParen) => break,
                                t => {
                                    return Err(Error::Expression(format!(
                                        "expected ',' or ')', found {t:?}"
                                    )))
                                }
                            }
                        }
                    }
                    if !func.arity_ok(args.len()) {
                        return Err(Error::Expression(format!(
                            "wrong number of arguments ({}) for '{name}'",
                            args.len()
                        )));
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    match name.as_str() {
                        "x" => Ok(Expr::X),
                        "y" => Ok(Expr::Y),
                        "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                        _ => Err(Error::Expression(format!("unknown variable '{name}'"))),
                    }
                }
            }
            t => Err(Error::Expression(format!("unexpected token {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_precedence() {
        let e = Expr::parse("1 + 2 * 3 ^ 2 - -4 / 2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 1.0 + 18.0 + 2.0);
    }

    #[test]
    fn variables_and_primitives() {
        let e = Expr::parse("x^2 + y^2 - 1").unwrap();
        assert_eq!(e.eval(0.5, 0.5), -0.5);
        let d = Expr::parse("disc(0, 0, 1)").unwrap();
        assert!((d.eval(3.0, 4.0) - 4.0).abs() < 1e-15);
        let r = Expr::parse("rect(0, 0, 2, 2)").unwrap();
        assert!((r.eval(0.0, 0.0) + 1.0).abs() < 1e-15);
        assert!((r.eval(2.0, 0.0) - 1.0).abs() < 1e-15);
        let el = Expr::parse("ellipse(0,0,2,1)").unwrap();
        assert!(el.eval(2.0, 0.0).abs() < 1e-15);
    }

    #[test]
    fn min_max_and_smooth_min() {
        let e = Expr::parse("min(x, y, 3)").unwrap();
        assert_eq!(e.eval(5.0, 4.0), 3.0);
        let s = Expr::parse("smin(x, y, 0.5)").unwrap();
        // far apart: exact min
        assert_eq!(s.eval(0.0, 1.0), 0.0);
        // equal arguments: lowered by k/4
        assert!((s.eval(1.0, 1.0) - (1.0 - 0.125)).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("z + 1").is_err());
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("disc(1, 2)").is_err());
        assert!(Expr::parse("x $ y").is_err());
    }

    #[test]
    fn scientific_notation() {
        let e = Expr::parse("1e-3 * x + 2.5E2").unwrap();
        assert!((e.eval(1000.0, 0.0) - 251.0).abs() < 1e-12);
    }
}
