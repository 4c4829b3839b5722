//! Parser for the coefficient expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' unary)?
//! atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `r`, the angle (`phi` or `psi`), `S`, `x1`, `x2`, `pi` and
//! user parameters. The arguments of `cos`/`sin` must be linear in the angle
//! and `S` with integer angle frequency and S-frequency on the grid `1/ϰ`;
//! constant offsets are expanded with the addition formulas.

use std::collections::BTreeMap;

use crate::cartpoly::CartPoly;
use crate::error::{Error, Result};
use crate::trigpoly::{Kind, TrigPoly};

/// Name of the angle variable accepted in polar expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Angle {
    Phi,
    Psi,
}

impl Angle {
    pub fn name(self) -> &'static str {
        match self {
            Angle::Phi => "phi",
            Angle::Psi => "psi",
        }
    }
}

pub type Params = BTreeMap<String, f64>;

/// Parses a polynomial in `(r, angle, S)`.
pub fn parse_expr(src: &str, angle: Angle, denom: u32, params: &Params) -> Result<TrigPoly> {
    let ast = Parser::new(src)?.parse()?;
    let ev = Eval {
        mode: Mode::Polar(angle),
        denom,
        params,
    };
    ev.eval::<TrigPoly>(&ast)
}

/// Parses a polynomial in `(x1, x2)` with coefficients depending on `S`.
pub fn parse_cartesian(src: &str, denom: u32, params: &Params) -> Result<CartPoly> {
    let ast = Parser::new(src)?.parse()?;
    let ev = Eval {
        mode: Mode::Cartesian,
        denom,
        params,
    };
    ev.eval::<CartPoly>(&ast)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| Error::parse(start, format!("malformed number '{text}'")))?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(Error::parse(i, format!("unexpected character '{c}'")));
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Ident(String, usize),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>, usize),
    Call(String, Box<Expr>, usize),
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Tok::Op(o) if *o == c => {
                self.bump();
                Ok(())
            }
            _ => Err(Error::parse(self.at(), format!("expected '{c}'"))),
        }
    }

    fn parse(mut self) -> Result<Expr> {
        let e = self.expr()?;
        if *self.peek() != Tok::End {
            return Err(Error::parse(self.at(), "unexpected trailing input"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            let at = self.at();
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(c, Box::new(lhs), Box::new(rhs), at);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            let at = self.at();
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(c, Box::new(lhs), Box::new(rhs), at);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match *self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Tok::Op('^') = *self.peek() {
            let at = self.at();
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin('^', Box::new(base), Box::new(exp), at));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.at();
        match self.bump() {
            (Tok::Num(v), _) => Ok(Expr::Num(v)),
            (Tok::Ident(name), _) => {
                if let Tok::Op('(') = *self.peek() {
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(')')?;
                    Ok(Expr::Call(name, Box::new(arg), at))
                } else {
                    Ok(Expr::Ident(name, at))
                }
            }
            (Tok::Op('('), _) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            (Tok::End, _) => Err(Error::parse(at, "unexpected end of input")),
            (Tok::Op(c), _) => Err(Error::parse(at, format!("unexpected '{c}'"))),
        }
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Polar(Angle),
    Cartesian,
}

/// `c + ang·θ + s·S` inside a trigonometric call.
#[derive(Clone, Copy, Debug)]
struct Lin {
    c: f64,
    ang: f64,
    s: f64,
}

impl Lin {
    fn konst(c: f64) -> Self {
        Lin { c, ang: 0.0, s: 0.0 }
    }

    fn is_const(&self) -> bool {
        self.ang == 0.0 && self.s == 0.0
    }
}

/// Values the evaluator can produce.
trait Algebra: Sized + Clone {
    fn konst(c: f64, denom: u32) -> Self;
    fn trig(kind: Kind, j: i32, l: i32, denom: u32) -> Self;
    fn add(&self, o: &Self) -> Result<Self>;
    fn sub(&self, o: &Self) -> Result<Self>;
    fn mul(&self, o: &Self) -> Result<Self>;
    fn neg(&self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn constant_value(&self) -> Option<f64>;
    fn pow(&self, k: i32, at: usize) -> Result<Self>;
    fn var(name: &str, mode: Mode, denom: u32) -> Option<Self>;
}

impl Algebra for TrigPoly {
    fn konst(c: f64, denom: u32) -> Self {
        TrigPoly::constant(c, denom)
    }
    fn trig(kind: Kind, j: i32, l: i32, denom: u32) -> Self {
        TrigPoly::term(1.0, 0, kind, j, l, denom)
    }
    fn add(&self, o: &Self) -> Result<Self> {
        TrigPoly::add(self, o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        TrigPoly::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        TrigPoly::mul(self, o)
    }
    fn neg(&self) -> Self {
        TrigPoly::neg(self)
    }
    fn scale(&self, s: f64) -> Self {
        TrigPoly::scale(self, s)
    }
    fn constant_value(&self) -> Option<f64> {
        self.as_constant()
    }
    fn pow(&self, k: i32, at: usize) -> Result<Self> {
        if k >= 0 {
            return self.powi(k as u32);
        }
        // negative powers only of a single monomial c·r^d
        let mut it = self.terms();
        match (it.next(), it.next()) {
            (Some(t), None) if t.kind == Kind::Const && t.coeff != 0.0 => Ok(TrigPoly::monomial(
                t.coeff.powi(k),
                t.rpow * k,
                self.denom(),
            )),
            _ => Err(Error::parse(
                at,
                "negative exponent is only allowed on a monomial c*r^k",
            )),
        }
    }
    fn var(name: &str, mode: Mode, denom: u32) -> Option<Self> {
        match (name, mode) {
            ("r", Mode::Polar(_)) => Some(TrigPoly::monomial(1.0, 1, denom)),
            _ => None,
        }
    }
}

impl Algebra for CartPoly {
    fn konst(c: f64, denom: u32) -> Self {
        CartPoly::constant(c, denom)
    }
    fn trig(kind: Kind, j: i32, l: i32, denom: u32) -> Self {
        CartPoly::from_s_poly(TrigPoly::term(1.0, 0, kind, j, l, denom))
    }
    fn add(&self, o: &Self) -> Result<Self> {
        CartPoly::add(self, o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        CartPoly::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        CartPoly::mul(self, o)
    }
    fn neg(&self) -> Self {
        CartPoly::neg(self)
    }
    fn scale(&self, s: f64) -> Self {
        CartPoly::scale(self, s)
    }
    fn constant_value(&self) -> Option<f64> {
        self.as_constant()
    }
    fn pow(&self, k: i32, at: usize) -> Result<Self> {
        if k < 0 {
            return Err(Error::parse(at, "negative exponent in a Cartesian polynomial"));
        }
        self.powi(k as u32)
    }
    fn var(name: &str, mode: Mode, denom: u32) -> Option<Self> {
        match (name, mode) {
            ("x1", Mode::Cartesian) => Some(CartPoly::x1(denom)),
            ("x2", Mode::Cartesian) => Some(CartPoly::x2(denom)),
            _ => None,
        }
    }
}

struct Eval<'a> {
    mode: Mode,
    denom: u32,
    params: &'a Params,
}

fn as_integer(v: f64) -> Option<i32> {
    let r = v.round();
    ((v - r).abs() <= 1e-9 * (1.0 + v.abs()) && r.abs() < i32::MAX as f64).then_some(r as i32)
}

impl<'a> Eval<'a> {
    fn constant(&self, name: &str) -> Option<f64> {
        if name == "pi" {
            return Some(std::f64::consts::PI);
        }
        self.params.get(name).copied()
    }

    fn is_angle(&self, name: &str) -> bool {
        matches!(self.mode, Mode::Polar(a) if a.name() == name)
    }

    fn eval<A: Algebra>(&self, e: &Expr) -> Result<A> {
        let d = self.denom;
        match e {
            Expr::Num(v) => Ok(A::konst(*v, d)),
            Expr::Ident(name, at) => {
                if let Some(v) = A::var(name, self.mode, d) {
                    Ok(v)
                } else if let Some(c) = self.constant(name) {
                    Ok(A::konst(c, d))
                } else if self.is_angle(name) || name == "S" {
                    Err(Error::parse(
                        *at,
                        format!("'{name}' may only appear inside cos(...) or sin(...)"),
                    ))
                } else {
                    Err(Error::parse(*at, format!("unknown identifier '{name}'")))
                }
            }
            Expr::Neg(x) => Ok(self.eval::<A>(x)?.neg()),
            Expr::Bin(op, a, b, at) => {
                let lhs = self.eval::<A>(a)?;
                match op {
                    '+' => lhs.add(&self.eval::<A>(b)?),
                    '-' => lhs.sub(&self.eval::<A>(b)?),
                    '*' => lhs.mul(&self.eval::<A>(b)?),
                    '/' => {
                        let den = self.eval::<A>(b)?.constant_value().ok_or_else(|| {
                            Error::parse(*at, "division by a non-constant expression")
                        })?;
                        if den == 0.0 {
                            return Err(Error::parse(*at, "division by zero"));
                        }
                        Ok(lhs.scale(1.0 / den))
                    }
                    '^' => {
                        let k = self.lin(b)?;
                        if !k.is_const() {
                            return Err(Error::parse(*at, "exponent must be a constant"));
                        }
                        let k = as_integer(k.c)
                            .ok_or_else(|| Error::parse(*at, "exponent must be an integer"))?;
                        lhs.pow(k, *at)
                    }
                    _ => unreachable!(),
                }
            }
            Expr::Call(f, arg, at) => {
                let kind = match f.as_str() {
                    "cos" => Kind::Cos,
                    "sin" => Kind::Sin,
                    _ => return Err(Error::parse(*at, format!("unknown function '{f}'"))),
                };
                let lin = self.lin(arg)?;
                let j = as_integer(lin.ang).ok_or_else(|| {
                    Error::parse(*at, format!("non-integer angle frequency {}", lin.ang))
                })?;
                let l = as_integer(lin.s * d as f64).ok_or_else(|| {
                    Error::parse(
                        *at,
                        format!("S-frequency {} is not a multiple of 1/{d}", lin.s),
                    )
                })?;
                // f(θ + c) expanded so that the offset becomes a coefficient
                let (sc, cc) = lin.c.sin_cos();
                let cos_t = A::trig(Kind::Cos, j, l, d);
                let sin_t = A::trig(Kind::Sin, j, l, d);
                let v = match kind {
                    Kind::Cos => cos_t.scale(cc).sub(&sin_t.scale(sc))?,
                    _ => sin_t.scale(cc).add(&cos_t.scale(sc))?,
                };
                Ok(v)
            }
        }
    }

    fn lin(&self, e: &Expr) -> Result<Lin> {
        match e {
            Expr::Num(v) => Ok(Lin::konst(*v)),
            Expr::Ident(name, at) => {
                if self.is_angle(name) {
                    Ok(Lin {
                        c: 0.0,
                        ang: 1.0,
                        s: 0.0,
                    })
                } else if name == "S" {
                    Ok(Lin {
                        c: 0.0,
                        ang: 0.0,
                        s: 1.0,
                    })
                } else if let Some(c) = self.constant(name) {
                    Ok(Lin::konst(c))
                } else if matches!(name.as_str(), "r" | "x1" | "x2" | "phi" | "psi") {
                    Err(Error::parse(
                        *at,
                        format!("'{name}' is not allowed in a trigonometric argument here"),
                    ))
                } else {
                    Err(Error::parse(*at, format!("unknown identifier '{name}'")))
                }
            }
            Expr::Neg(x) => {
                let v = self.lin(x)?;
                Ok(Lin {
                    c: -v.c,
                    ang: -v.ang,
                    s: -v.s,
                })
            }
            Expr::Bin(op, a, b, at) => {
                let (x, y) = (self.lin(a)?, self.lin(b)?);
                match op {
                    '+' => Ok(Lin {
                        c: x.c + y.c,
                        ang: x.ang + y.ang,
                        s: x.s + y.s,
                    }),
                    '-' => Ok(Lin {
                        c: x.c - y.c,
                        ang: x.ang - y.ang,
                        s: x.s - y.s,
                    }),
                    '*' => {
                        let (k, v) = if x.is_const() {
                            (x.c, y)
                        } else if y.is_const() {
                            (y.c, x)
                        } else {
                            return Err(Error::parse(*at, "trigonometric argument is not linear"));
                        };
                        Ok(Lin {
                            c: k * v.c,
                            ang: k * v.ang,
                            s: k * v.s,
                        })
                    }
                    '/' => {
                        if !y.is_const() || y.c == 0.0 {
                            return Err(Error::parse(*at, "division by a non-constant or zero"));
                        }
                        Ok(Lin {
                            c: x.c / y.c,
                            ang: x.ang / y.c,
                            s: x.s / y.c,
                        })
                    }
                    '^' => {
                        if !x.is_const() || !y.is_const() {
                            return Err(Error::parse(*at, "trigonometric argument is not linear"));
                        }
                        Ok(Lin::konst(x.c.powf(y.c)))
                    }
                    _ => unreachable!(),
                }
            }
            Expr::Call(f, arg, at) => {
                let v = self.lin(arg)?;
                if !v.is_const() {
                    return Err(Error::parse(*at, "nested trigonometric call in an argument"));
                }
                match f.as_str() {
                    "cos" => Ok(Lin::konst(v.c.cos())),
                    "sin" => Ok(Lin::konst(v.c.sin())),
                    _ => Err(Error::parse(*at, format!("unknown function '{f}'"))),
                }
            }
        }
    }
}
