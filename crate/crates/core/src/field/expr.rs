//! Scalar expressions over `x1..xm`.
//!
//! The engine only does constant folding and the 0/1 identities.
//! Correctness of derived expressions is checked numerically.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    /// zero-based variable index
    Var(usize),
    Neg(ScalarExpr),
    Add(ScalarExpr, ScalarExpr),
    Sub(ScalarExpr, ScalarExpr),
    Mul(ScalarExpr, ScalarExpr),
    Div(ScalarExpr, ScalarExpr),
    Pow(ScalarExpr, i32),
    Call(Func, ScalarExpr),
}

/// Immutable, cheaply clonable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr(Arc<Node>);

impl ScalarExpr {
    fn new(node: Node) -> Self {
        ScalarExpr(Arc::new(node))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Variable `x{index + 1}`.
    pub fn var(index: usize) -> Self {
        Self::new(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn neg(&self) -> Self {
        match &*self.0 {
            Node::Const(c) => Self::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Self::new(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => Self::constant(a + b),
            (Some(a), _) if a == 0.0 => other.clone(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Self::new(Node::Add(self.clone(), other.clone())),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => Self::constant(a - b),
            (Some(a), _) if a == 0.0 => other.neg(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Self::new(Node::Sub(self.clone(), other.clone())),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => Self::constant(a * b),
            (Some(a), _) if a == 0.0 => Self::zero(),
            (_, Some(b)) if b == 0.0 => Self::zero(),
            (Some(a), _) if a == 1.0 => other.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            (Some(a), _) if a == -1.0 => other.neg(),
            (_, Some(b)) if b == -1.0 => self.neg(),
            _ => Self::new(Node::Mul(self.clone(), other.clone())),
        }
    }

    pub fn div(&self, other: &Self) -> Self {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Self::constant(a / b),
            (Some(a), _) if a == 0.0 => Self::zero(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            _ => Self::new(Node::Div(self.clone(), other.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Self {
        match (self.as_const(), n) {
            (_, 0) => Self::one(),
            (_, 1) => self.clone(),
            (Some(a), _) if a != 0.0 || n > 0 => Self::constant(a.powi(n)),
            _ => Self::new(Node::Pow(self.clone(), n)),
        }
    }

    pub fn call(func: Func, arg: &Self) -> Self {
        match arg.as_const() {
            Some(a) => Self::constant(match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
            }),
            None => Self::new(Node::Call(func, arg.clone())),
        }
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match &*self.0 {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.arity(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    /// True when the expression contains no variables.
    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    /// Evaluates at `x`. Division by zero and non-finite results are
    /// reported as [`Error::Eval`].
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(i) => *x.get(*i).ok_or_else(|| {
                Error::Dimension(format!("variable x{} used on a {}-point", i + 1, x.len()))
            })?,
            Node::Neg(a) => -a.eval(x)?,
            Node::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Node::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Node::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Node::Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(Error::Eval(format!("division by zero in {self}")));
                }
                a.eval(x)? / d
            }
            Node::Pow(a, n) => {
                let base = a.eval(x)?;
                if base == 0.0 && *n < 0 {
                    return Err(Error::Eval(format!("pole of {self}")));
                }
                base.powi(*n)
            }
            Node::Call(f, a) => {
                let v = a.eval(x)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Eval(format!("non-finite value of {self}")))
        }
    }

    /// Exact partial derivative with respect to the zero-based variable `var`.
    pub fn diff(&self, var: usize) -> Self {
        match &*self.0 {
            Node::Const(_) => Self::zero(),
            Node::Var(i) => {
                if *i == var {
                    Self::one()
                } else {
                    Self::zero()
                }
            }
            Node::Neg(a) => a.diff(var).neg(),
            Node::Add(a, b) => a.diff(var).add(&b.diff(var)),
            Node::Sub(a, b) => a.diff(var).sub(&b.diff(var)),
            Node::Mul(a, b) => a.diff(var).mul(b).add(&a.mul(&b.diff(var))),
            Node::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = a.diff(var).mul(b).sub(&a.mul(&b.diff(var)));
                num.div(&b.powi(2))
            }
            Node::Pow(a, n) => {
                let da = a.diff(var);
                Self::constant(*n as f64).mul(&a.powi(n - 1)).mul(&da)
            }
            Node::Call(f, a) => {
                let da = a.diff(var);
                let outer = match f {
                    Func::Sin => Self::call(Func::Cos, a),
                    Func::Cos => Self::call(Func::Sin, a).neg(),
                    Func::Exp => self.clone(),
                };
                outer.mul(&da)
            }
        }
    }

    /// Parses an expression in the variables `x1, x2, ...`.
    pub fn parse(text: &str) -> Result<Self> {
        parse::parse_expr(text)
    }

    fn precedence(&self) -> u8 {
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            Node::Const(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &ScalarExpr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => {
                write!(f, "-")?;
                write_operand(f, a, 4)
            }
            Node::Add(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " + ")?;
                write_operand(f, b, 2)
            }
            Node::Sub(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " - ")?;
                write_operand(f, b, 2)
            }
            Node::Mul(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "*")?;
                write_operand(f, b, 3)
            }
            Node::Div(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "/")?;
                write_operand(f, b, 3)
            }
            Node::Pow(a, n) => {
                write_operand(f, a, 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

mod parse {
    //! expr   := term (('+' | '-') term)*
    //! term   := unary (('*' | '/') unary)*
    //! unary  := '-' unary | power
    //! power  := atom ('^' int)?
    //! atom   := NUMBER | 'x' INT | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    //! int    := '-'? DIGITS | '(' '-'? DIGITS ')'
    use super::{Func, ScalarExpr};
    use crate::error::{Error, Result};

    pub(super) fn parse_expr(text: &str) -> Result<ScalarExpr> {
        let mut p = Parser {
            s: text.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    struct Parser<'a> {
        s: &'a [u8],
        pos: usize,
    }

    impl Parser<'_> {
        fn err(&self, msg: &str) -> Error {
            Error::Syntax {
                pos: self.pos,
                msg: msg.into(),
            }
        }

        fn ws(&mut self) {
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
        }

        fn peek(&mut self) -> Option<u8> {
            self.ws();
            self.s.get(self.pos).copied()
        }

        fn eat(&mut self, c: u8) -> bool {
            if self.peek() == Some(c) {
                self.pos += 1;
                true
            } else {
                false
            }
        }

        fn expr(&mut self) -> Result<ScalarExpr> {
            let mut lhs = self.term()?;
            loop {
                if self.eat(b'+') {
                    lhs = lhs.add(&self.term()?);
                } else if self.eat(b'-') {
                    lhs = lhs.sub(&self.term()?);
                } else {
                    return Ok(lhs);
                }
            }
        }

        fn term(&mut self) -> Result<ScalarExpr> {
            let mut lhs = self.unary()?;
            loop {
                if self.eat(b'*') {
                    lhs = lhs.mul(&self.unary()?);
                } else if self.eat(b'/') {
                    lhs = lhs.div(&self.unary()?);
                } else {
                    return Ok(lhs);
                }
            }
        }

        fn unary(&mut self) -> Result<ScalarExpr> {
            if self.eat(b'-') {
                Ok(self.unary()?.neg())
            } else if self.eat(b'+') {
                self.unary()
            } else {
                self.power()
            }
        }

        fn power(&mut self) -> Result<ScalarExpr> {
            let base = self.atom()?;
            if self.eat(b'^') {
                let n = self.int_exponent()?;
                Ok(base.powi(n))
            } else {
                Ok(base)
            }
        }

        fn int_exponent(&mut self) -> Result<i32> {
            let paren = self.eat(b'(');
            let neg = self.eat(b'-');
            self.ws();
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("exponent must be an integer"));
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            let n: i32 = digits.parse().map_err(|_| Error::Syntax {
                pos: start,
                msg: "exponent out of range".into(),
            })?;
            if paren && !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            Ok(if neg { -n } else { n })
        }

        fn atom(&mut self) -> Result<ScalarExpr> {
            match self.peek() {
                Some(b'(') => {
                    self.pos += 1;
                    let e = self.expr()?;
                    if !self.eat(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    Ok(e)
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
                Some(c) if c.is_ascii_alphabetic() => self.ident(),
                Some(_) => Err(self.err("unexpected character")),
                None => Err(self.err("unexpected end of input")),
            }
        }

        fn number(&mut self) -> Result<ScalarExpr> {
            let start = self.pos;
            while self.pos < self.s.len()
                && (self.s[self.pos].is_ascii_digit() || self.s[self.pos] == b'.')
            {
                self.pos += 1;
            }
            if self.pos < self.s.len() && matches!(self.s[self.pos], b'e' | b'E') {
                let save = self.pos;
                self.pos += 1;
                if self.pos < self.s.len() && matches!(self.s[self.pos], b'+' | b'-') {
                    self.pos += 1;
                }
                let exp_start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if exp_start == self.pos {
                    self.pos = save;
                }
            }
            let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            text.parse::<f64>()
                .map(ScalarExpr::constant)
                .map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("bad number '{text}'"),
                })
        }

        fn ident(&mut self) -> Result<ScalarExpr> {
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let word = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            let func = match word {
                "sin" => Some(Func::Sin),
                "cos" => Some(Func::Cos),
                "exp" => Some(Func::Exp),
                "pi" => return Ok(ScalarExpr::constant(std::f64::consts::PI)),
                _ => None,
            };
            if let Some(func) = func {
                if !self.eat(b'(') {
                    return Err(self.err("expected '(' after function name"));
                }
                let arg = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                return Ok(ScalarExpr::call(func, &arg));
            }
            if let Some(index) = word.strip_prefix('x') {
                if let Ok(i) = index.parse::<usize>() {
                    if i >= 1 {
                        return Ok(ScalarExpr::var(i - 1));
                    }
                }
            }
            Err(Error::Syntax {
                pos: start,
                msg: format!("unknown identifier '{word}'"),
            })
        }
    }
}
