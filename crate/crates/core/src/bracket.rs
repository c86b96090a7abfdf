//! Formal bracket expressions.
//!
//! A bracket expression is a binary tree whose leaves are numbered argument
//! slots `1..=k`. The same tree is folded over vector fields, curves of
//! diffeomorphisms and group elements by [`BracketExpr::eval`].
//!
//! Concrete syntax: `expr := INT | "[" expr "," expr "]"`, whitespace allowed
//! anywhere between tokens.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parser recursion bound.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BracketExpr {
    Leaf(usize),
    Node(Box<BracketExpr>, Box<BracketExpr>),
}

impl BracketExpr {
    pub fn leaf(index: usize) -> Self {
        BracketExpr::Leaf(index)
    }

    pub fn node(left: BracketExpr, right: BracketExpr) -> Self {
        BracketExpr::Node(Box::new(left), Box::new(right))
    }

    /// Parses and validates that the leaves are a permutation of `1..=k`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        let expr = p.expr(0)?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.error("trailing input"));
        }
        expr.validate()?;
        Ok(expr)
    }

    /// Number of leaves.
    pub fn len(&self) -> usize {
        match self {
            BracketExpr::Leaf(_) => 1,
            BracketExpr::Node(l, r) => l.len() + r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn depth(&self) -> usize {
        match self {
            BracketExpr::Leaf(_) => 0,
            BracketExpr::Node(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Leaf indices in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            BracketExpr::Leaf(i) => out.push(*i),
            BracketExpr::Node(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// Checks that leaf indices are exactly `{1, ..., k}`.
    pub fn validate(&self) -> Result<()> {
        let leaves = self.leaves();
        let k = leaves.len();
        let mut seen = vec![false; k];
        for &i in &leaves {
            if i == 0 || i > k {
                return Err(Error::Index(format!("leaf index {i} outside 1..={k}")));
            }
            if seen[i - 1] {
                return Err(Error::Index(format!("leaf index {i} repeated")));
            }
            seen[i - 1] = true;
        }
        Ok(())
    }

    /// Relabels the leaves `1..=k` in left-to-right order.
    pub fn normalized(&self) -> Self {
        fn go(e: &BracketExpr, next: &mut usize) -> BracketExpr {
            match e {
                BracketExpr::Leaf(_) => {
                    *next += 1;
                    BracketExpr::Leaf(*next)
                }
                BracketExpr::Node(l, r) => {
                    let l = go(l, next);
                    let r = go(r, next);
                    BracketExpr::node(l, r)
                }
            }
        }
        go(self, &mut 0)
    }

    /// Structural fold: `Leaf i` maps to `leaves[i - 1]`, `Node(l, r)` to
    /// `bracket(eval l, eval r)`.
    pub fn eval<T, F>(&self, leaves: &[T], bracket: F) -> Result<T>
    where
        T: Clone,
        F: Fn(&T, &T) -> T,
    {
        self.try_eval(leaves, |a, b| Ok(bracket(a, b)))
    }

    /// Fallible variant of [`eval`](Self::eval).
    pub fn try_eval<T, F>(&self, leaves: &[T], bracket: F) -> Result<T>
    where
        T: Clone,
        F: Fn(&T, &T) -> Result<T>,
    {
        let k = self.len();
        if leaves.len() != k {
            return Err(Error::Arity {
                expected: k,
                got: leaves.len(),
            });
        }
        self.validate()?;
        self.fold(leaves, &bracket)
    }

    fn fold<T, F>(&self, leaves: &[T], bracket: &F) -> Result<T>
    where
        T: Clone,
        F: Fn(&T, &T) -> Result<T>,
    {
        match self {
            BracketExpr::Leaf(i) => Ok(leaves[i - 1].clone()),
            BracketExpr::Node(l, r) => {
                let a = l.fold(leaves, bracket)?;
                let b = r.fold(leaves, bracket)?;
                bracket(&a, &b)
            }
        }
    }
}

impl fmt::Display for BracketExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketExpr::Leaf(i) => write!(f, "{i}"),
            BracketExpr::Node(l, r) => write!(f, "[{l},{r}]"),
        }
    }
}

impl FromStr for BracketExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BracketExpr::parse(s)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self, depth: usize) -> Result<BracketExpr> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'[') => {
                if depth >= MAX_DEPTH {
                    return Err(self.error("nesting deeper than 16"));
                }
                self.pos += 1;
                let left = self.expr(depth + 1)?;
                self.expect(b',')?;
                let right = self.expr(depth + 1)?;
                self.expect(b']')?;
                Ok(BracketExpr::node(left, right))
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                digits
                    .parse::<usize>()
                    .map(BracketExpr::Leaf)
                    .map_err(|_| Error::Syntax {
                        pos: start,
                        msg: "leaf index out of range".into(),
                    })
            }
            Some(_) => Err(self.error("expected '[' or a leaf index")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Matrix commutator `AB - BA`.
pub fn matrix_commutator(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DMatrix<f64>,
) -> nalgebra::DMatrix<f64> {
    a * b - b * a
}
