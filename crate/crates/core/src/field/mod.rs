//! Symbolic vector fields on open boxes of R^m.
//!
//! Component text is a comma- or semicolon-separated list of expressions in
//! `x1..xm`, e.g. `"-x2, x1"` for the rotation field. Separators inside
//! parentheses are not treated as component boundaries.

pub mod expr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bracket::BracketExpr;
use crate::error::{Error, Result};
pub use expr::{Func, ScalarExpr};

/// Axis-aligned open box `(lo_i, hi_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Config("box has an empty axis".into()));
        }
        Ok(BoxDomain { lo, hi })
    }

    /// The cube `(-r, r)^m`.
    pub fn cube(dim: usize, r: f64) -> Self {
        BoxDomain {
            lo: vec![-r; dim],
            hi: vec![r; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *a < *v && *v < *b)
    }

    /// Box with each axis scaled by `factor` about its midpoint.
    pub fn shrunk(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a) * factor;
                (mid - half, mid + half)
            })
            .unzip();
        BoxDomain { lo, hi }
    }

    pub fn intersect(&self, other: &BoxDomain) -> Result<BoxDomain> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension("box dimensions differ".into()));
        }
        let lo = self
            .lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi = self
            .hi
            .iter()
            .zip(&other.hi)
            .map(|(a, b)| a.min(*b))
            .collect();
        BoxDomain::new(lo, hi)
    }
}

/// Splits on top-level `,` / `;`.
pub(crate) fn split_components(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' | ';' if depth == 0 => {
                out.push((start, &text[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((start, &text[start..]));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarExpr>,
    domain: BoxDomain,
}

impl VectorField {
    pub fn new(components: Vec<ScalarExpr>, domain: BoxDomain) -> Result<Self> {
        let dim = components.len();
        if dim == 0 {
            return Err(Error::Dimension(
                "a vector field needs at least one component".into(),
            ));
        }
        if domain.dim() != dim {
            return Err(Error::Dimension(format!(
                "{dim} components on a {}-dimensional box",
                domain.dim()
            )));
        }
        if let Some(c) = components.iter().find(|c| c.arity() > dim) {
            return Err(Error::Dimension(format!(
                "component '{c}' uses a variable beyond x{dim}"
            )));
        }
        Ok(VectorField { components, domain })
    }

    /// Parses `dim` component expressions. The domain defaults to `(-10, 10)^dim`.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Self::parse_on(text, BoxDomain::cube(dim, 10.0))
    }

    pub fn parse_on(text: &str, domain: BoxDomain) -> Result<Self> {
        let dim = domain.dim();
        let parts = split_components(text);
        if parts.len() != dim {
            return Err(Error::Dimension(format!(
                "expected {dim} components, found {}",
                parts.len()
            )));
        }
        let components = parts
            .into_iter()
            .map(|(offset, s)| {
                ScalarExpr::parse(s).map_err(|e| match e {
                    Error::Syntax { pos, msg } => Error::Syntax {
                        pos: pos + offset,
                        msg,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, domain)
    }

    pub fn zero(domain: BoxDomain) -> Self {
        let dim = domain.dim();
        VectorField {
            components: vec![ScalarExpr::zero(); dim],
            domain,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn components(&self) -> &[ScalarExpr] {
        &self.components
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != self.dim() {
            return Err(Error::Dimension(
                "domain dimension differs from field".into(),
            ));
        }
        self.domain = domain;
        Ok(self)
    }

    /// Evaluates inside the domain.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the field's box")));
        }
        self.eval_unchecked(x)
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    /// Symbolic Jacobian, `jac[i][j] = d X^i / d x_j`.
    pub fn jacobian_exprs(&self) -> Vec<Vec<ScalarExpr>> {
        let m = self.dim();
        self.components
            .iter()
            .map(|c| (0..m).map(|j| c.diff(j)).collect())
            .collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        let f = ScalarExpr::constant(factor);
        VectorField {
            components: self.components.iter().map(|c| f.mul(c)).collect(),
            domain: self.domain.clone(),
        }
    }

    /// Directional derivative `X f = X^j d_j f`.
    pub fn apply(&self, f: &ScalarExpr) -> ScalarExpr {
        self.components
            .iter()
            .enumerate()
            .fold(ScalarExpr::zero(), |acc, (j, xj)| {
                acc.add(&xj.mul(&f.diff(j)))
            })
    }

    /// `X(x) = A x + b` when every partial derivative is a constant.
    pub fn affine_part(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let m = self.dim();
        let jac = self.jacobian_exprs();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let d = &jac[i][j];
                if !d.is_constant() {
                    return None;
                }
                a[(i, j)] = d.eval(&[]).ok()?;
            }
        }
        let origin = vec![0.0; m];
        let b = self
            .components
            .iter()
            .map(|c| c.eval(&origin).ok())
            .collect::<Option<Vec<_>>>()?;
        Some((a, DVector::from_vec(b)))
    }
}

impl std::fmt::Display for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

fn check_compatible(x: &VectorField, y: &VectorField) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "fields of dimension {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.domain != y.domain {
        return Err(Error::Dimension("fields live on different boxes".into()));
    }
    Ok(())
}

/// `[X,Y]^i = X^j d_j Y^i - Y^j d_j X^i`, so that `[X,Y]f = X(Yf) - Y(Xf)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    check_compatible(x, y)?;
    let components = x
        .components
        .iter()
        .zip(&y.components)
        .map(|(xi, yi)| x.apply(yi).sub(&y.apply(xi)))
        .collect();
    Ok(VectorField {
        components,
        domain: x.domain.clone(),
    })
}

/// Exact field `B(X_1, ..., X_k)`.
pub fn bracket_word(b: &BracketExpr, fields: &[VectorField]) -> Result<VectorField> {
    if let Some(first) = fields.first() {
        for f in &fields[1..] {
            check_compatible(first, f)?;
        }
    }
    b.try_eval(fields, lie_bracket)
}
