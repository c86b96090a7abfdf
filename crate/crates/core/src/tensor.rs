//! Tensor bundles over a box in `R^m`: sections, pullbacks along local
//! diffeomorphisms and Lie derivatives.
//!
//! Components of a `(p, q)` tensor are stored row-major over the
//! multi-index `(i_1, ..., i_p, j_1, ..., j_q)`, upper indices first.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::deriv::{factorial, kth_derivative, mixed_partial, DerivEstimate, DiffOpts};
use crate::error::{Error, Result};
use crate::field::{BoxDomain, ScalarExpr, VectorField};
use crate::flow::{IntegratorOpts, LocalCurve};

/// A functor assigning fibers to points and a fiberwise linear lift to local
/// diffeomorphisms.
pub trait VectorBundleFunctor {
    fn fiber_dim(&self, m: usize) -> usize;

    /// `F(φ⁻¹)` on the fiber over `φ(x)`, given `J = Dφ(x)` and its inverse.
    fn pull_fiber(&self, value: &[f64], jac: &DMatrix<f64>, jac_inv: &DMatrix<f64>) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorType {
    pub p: usize,
    pub q: usize,
}

impl TensorType {
    pub const SCALAR: TensorType = TensorType { p: 0, q: 0 };
    pub const VECTOR: TensorType = TensorType { p: 1, q: 0 };
    pub const COVECTOR: TensorType = TensorType { p: 0, q: 1 };

    pub fn new(p: usize, q: usize) -> Self {
        TensorType { p, q }
    }

    pub fn rank(&self) -> usize {
        self.p + self.q
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.p, self.q)
    }
}

impl VectorBundleFunctor for TensorType {
    fn fiber_dim(&self, m: usize) -> usize {
        m.pow(self.rank() as u32)
    }

    fn pull_fiber(&self, value: &[f64], jac: &DMatrix<f64>, jac_inv: &DMatrix<f64>) -> Vec<f64> {
        let m = jac.nrows();
        let rank = self.rank();
        let jt = jac.transpose();
        let mut out = value.to_vec();
        for slot in 0..rank {
            let mat = if slot < self.p { jac_inv } else { &jt };
            out = mode_product(&out, m, rank, slot, mat);
        }
        out
    }
}

/// Applies `mat` to index `slot` of a row-major rank-`rank` array.
fn mode_product(t: &[f64], m: usize, rank: usize, slot: usize, mat: &DMatrix<f64>) -> Vec<f64> {
    let stride = m.pow((rank - 1 - slot) as u32);
    let mut out = vec![0.0; t.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let i = (flat / stride) % m;
        let base = flat - i * stride;
        *o = (0..m).map(|a| mat[(i, a)] * t[base + a * stride]).sum();
    }
    out
}

/// Row-major multi-index of a flat component index.
pub fn multi_index(flat: usize, m: usize, rank: usize) -> Vec<usize> {
    let mut idx = vec![0; rank];
    let mut rest = flat;
    for slot in (0..rank).rev() {
        idx[slot] = rest % m;
        rest /= m;
    }
    idx
}

pub fn flat_index(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * m + i)
}

/// A smooth `(p, q)` tensor field on a box, with symbolic components.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSection {
    ty: TensorType,
    dim: usize,
    components: Vec<ScalarExpr>,
    domain: BoxDomain,
}

impl TensorSection {
    pub fn new(ty: TensorType, components: Vec<ScalarExpr>, domain: BoxDomain) -> Result<Self> {
        let dim = domain.dim();
        let want = ty.fiber_dim(dim);
        if components.len() != want {
            return Err(Error::Dimension(format!(
                "a {ty} tensor on R^{dim} has {want} components, got {}",
                components.len()
            )));
        }
        if let Some(c) = components.iter().find(|c| c.arity() > dim) {
            return Err(Error::Dimension(format!(
                "component '{c}' uses a variable beyond x{dim}"
            )));
        }
        Ok(TensorSection {
            ty,
            dim,
            components,
            domain,
        })
    }

    pub fn zeros(ty: TensorType, domain: BoxDomain) -> Self {
        let n = ty.fiber_dim(domain.dim());
        TensorSection {
            ty,
            dim: domain.dim(),
            components: vec![ScalarExpr::zero(); n],
            domain,
        }
    }

    pub fn scalar(f: ScalarExpr, domain: BoxDomain) -> Result<Self> {
        Self::new(TensorType::SCALAR, vec![f], domain)
    }

    pub fn from_field(x: &VectorField) -> Self {
        TensorSection {
            ty: TensorType::VECTOR,
            dim: x.dim(),
            components: x.components().to_vec(),
            domain: x.domain().clone(),
        }
    }

    /// Parses the section DSL on the default box `(-10, 10)^dim`.
    ///
    /// ```text
    /// type=(0,1); a_1 = x2; a_2 = 0
    /// ```
    ///
    /// Entries are separated by `;`. Components are named `a` (scalars),
    /// `a_1_2` or, when every index is a single digit, `a_12`; indices are
    /// 1-based, upper before lower. Omitted components are zero.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Self::parse_on(text, BoxDomain::cube(dim, 10.0))
    }

    pub fn parse_on(text: &str, domain: BoxDomain) -> Result<Self> {
        let dim = domain.dim();
        let mut entries = Vec::new();
        let mut offset = 0;
        for part in text.split(';') {
            if !part.trim().is_empty() {
                entries.push((offset, part));
            }
            offset += part.len() + 1;
        }
        let syntax = |pos: usize, msg: String| Error::Syntax { pos, msg };
        let mut ty = None;
        let mut assigned: Vec<Option<ScalarExpr>> = Vec::new();
        for (off, entry) in entries {
            let Some(eq) = entry.find('=') else {
                return Err(syntax(
                    off,
                    format!("expected 'name = value' in '{}'", entry.trim()),
                ));
            };
            let name = entry[..eq].trim();
            let rhs = &entry[eq + 1..];
            let rhs_off = off + eq + 1;
            if name == "type" {
                if ty.is_some() {
                    return Err(syntax(off, "type given twice".into()));
                }
                let t = parse_type(rhs.trim())
                    .ok_or_else(|| syntax(rhs_off, format!("bad tensor type '{}'", rhs.trim())))?;
                ty = Some(t);
                assigned = vec![None; t.fiber_dim(dim)];
                continue;
            }
            let Some(t) = ty else {
                return Err(syntax(off, "the type entry must come first".into()));
            };
            let idx = parse_component_name(name, t.rank(), dim)
                .map_err(|msg| syntax(off + entry.find(name).unwrap_or(0), msg))?;
            let flat = flat_index(&idx, dim);
            if assigned[flat].is_some() {
                return Err(syntax(off, format!("component '{name}' given twice")));
            }
            let e = ScalarExpr::parse(rhs).map_err(|e| match e {
                Error::Syntax { pos, msg } => syntax(pos + rhs_off, msg),
                other => other,
            })?;
            assigned[flat] = Some(e);
        }
        let ty = ty.ok_or_else(|| syntax(0, "missing 'type=(p,q)' entry".into()))?;
        let components = assigned
            .into_iter()
            .map(|c| c.unwrap_or_else(ScalarExpr::zero))
            .collect();
        Self::new(ty, components, domain)
    }

    pub fn tensor_type(&self) -> TensorType {
        self.ty
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn components(&self) -> &[ScalarExpr] {
        &self.components
    }

    pub fn component(&self, idx: &[usize]) -> &ScalarExpr {
        &self.components[flat_index(idx, self.dim)]
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "{}-point for a section over R^{}",
                x.len(),
                self.dim
            )));
        }
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the section's box")));
        }
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    fn map_components(&self, f: impl Fn(usize, &ScalarExpr) -> ScalarExpr) -> Self {
        TensorSection {
            components: self
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &TensorSection) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.map_components(|i, c| c.sub(&other.components[i])))
    }

    pub fn scale(&self, factor: f64) -> Self {
        let k = ScalarExpr::constant(factor);
        self.map_components(|_, c| c.mul(&k))
    }

    fn check_compatible(&self, other: &TensorSection) -> Result<()> {
        if self.ty != other.ty || self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "{} section on R^{} against {} section on R^{}",
                self.ty, self.dim, other.ty, other.dim
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TensorSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type={}", self.ty)?;
        let rank = self.ty.rank();
        for (flat, c) in self.components.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let idx = multi_index(flat, self.dim, rank);
            write!(f, "; a")?;
            for i in idx {
                write!(f, "_{}", i + 1)?;
            }
            write!(f, " = {c}")?;
        }
        Ok(())
    }
}

fn parse_type(s: &str) -> Option<TensorType> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let (p, q) = inner.split_once(',')?;
    Some(TensorType::new(
        p.trim().parse().ok()?,
        q.trim().parse().ok()?,
    ))
}

fn parse_component_name(
    name: &str,
    rank: usize,
    dim: usize,
) -> std::result::Result<Vec<usize>, String> {
    let rest = name
        .strip_prefix('a')
        .ok_or_else(|| format!("component names start with 'a', got '{name}'"))?;
    let raw: Vec<usize> = if rest.is_empty() {
        Vec::new()
    } else {
        let rest = rest
            .strip_prefix('_')
            .ok_or_else(|| format!("expected '_' after 'a' in '{name}'"))?;
        let parts: Vec<&str> = rest.split('_').collect();
        let parts: Vec<String> = if parts.len() == 1 && rank > 1 && parts[0].len() == rank {
            parts[0].chars().map(String::from).collect()
        } else {
            parts.iter().map(|s| s.to_string()).collect()
        };
        parts
            .iter()
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| format!("bad index '{p}' in '{name}'"))
            })
            .collect::<std::result::Result<_, _>>()?
    };
    if raw.len() != rank {
        return Err(format!(
            "'{name}' has {} indices, the type needs {rank}",
            raw.len()
        ));
    }
    raw.iter()
        .map(|&i| {
            if (1..=dim).contains(&i) {
                Ok(i - 1)
            } else {
                Err(format!("index {i} in '{name}' is outside 1..{dim}"))
            }
        })
        .collect()
}

/// A local diffeomorphism with Jacobian access.
pub trait LocalDiffeo {
    fn dim(&self) -> usize;

    /// `(φ(x), Dφ(x))`.
    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

/// A curve of diffeomorphisms frozen at time `t`.
pub struct CurveAt<'a> {
    pub curve: &'a LocalCurve,
    pub t: f64,
}

impl LocalDiffeo for CurveAt<'_> {
    fn dim(&self) -> usize {
        self.curve.dim()
    }

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.curve.eval_with_jacobian(self.t, x)
    }
}

/// A map given by symbolic components, with a symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct MapDiffeo {
    map: VectorField,
    jacobian: Vec<Vec<ScalarExpr>>,
}

impl MapDiffeo {
    pub fn new(map: VectorField) -> Self {
        let jacobian = map.jacobian_exprs();
        MapDiffeo { map, jacobian }
    }

    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Ok(Self::new(VectorField::parse(text, dim)?))
    }
}

impl LocalDiffeo for MapDiffeo {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let y = self.map.eval(x)?;
        let m = x.len();
        let mut j = DMatrix::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                j[(r, c)] = self.jacobian[r][c].eval(x)?;
            }
        }
        Ok((y, j))
    }
}

/// `φ ∘ ψ`.
pub struct Composed<'a> {
    pub outer: &'a dyn LocalDiffeo,
    pub inner: &'a dyn LocalDiffeo,
}

impl LocalDiffeo for Composed<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (y, ji) = self.inner.apply_with_jacobian(x)?;
        let (z, jo) = self.outer.apply_with_jacobian(&y)?;
        Ok((z, jo * ji))
    }
}

fn pull_value(s: &TensorSection, y: &[f64], jac: DMatrix<f64>) -> Result<Vec<f64>> {
    let value = s.eval(y)?;
    if s.ty.rank() == 0 {
        return Ok(value);
    }
    let inv = if s.ty.p > 0 {
        jac.clone()
            .try_inverse()
            .ok_or_else(|| Error::Inverse("Jacobian is singular".into()))?
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(s.ty.pull_fiber(&value, &jac, &inv))
}

/// `(φ^* s)(x) = F(φ⁻¹)(s(φ(x)))`.
pub fn pullback_at(phi: &dyn LocalDiffeo, s: &TensorSection, x: &[f64]) -> Result<Vec<f64>> {
    if phi.dim() != s.dim {
        return Err(Error::Dimension(format!(
            "diffeomorphism of R^{} against a section over R^{}",
            phi.dim(),
            s.dim
        )));
    }
    let (y, jac) = phi.apply_with_jacobian(x)?;
    pull_value(s, &y, jac)
}

/// The section `φ^* s` as a point evaluator.
pub fn pullback_section<'a>(
    phi: &'a dyn LocalDiffeo,
    s: &'a TensorSection,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |x| pullback_at(phi, s, x)
}

/// `t ↦ (c_t^* s)(x)`, valued in the fiber over `x`.
pub fn pullback_curve_section<'a>(
    c: &'a LocalCurve,
    s: &'a TensorSection,
    x: &'a [f64],
) -> impl Fn(f64) -> Result<Vec<f64>> + 'a {
    move |t| pullback_at(&CurveAt { curve: c, t }, s, x)
}

/// `(t_1, ..., t_l) ↦ ((c^1_{t_1} ∘ ... ∘ c^l_{t_l})^* s)(x)`.
pub fn composite_pullback<'a>(
    curves: &'a [LocalCurve],
    s: &'a TensorSection,
    x: &'a [f64],
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |ts| {
        let m = x.len();
        let mut y = x.to_vec();
        let mut jac = DMatrix::identity(m, m);
        for (c, &t) in curves.iter().zip(ts).rev() {
            let (z, j) = c.eval_with_jacobian(t, &y)?;
            y = z;
            jac = j * jac;
        }
        pull_value(s, &y, jac)
    }
}

/// `ℒ_X s` by the classical coordinate formula
/// `X^k ∂_k T - Σ_upper T^{..k..} ∂_k X^{i} + Σ_lower T_{..k..} ∂_j X^k`.
pub fn lie_derivative_exact(x: &VectorField, s: &TensorSection) -> Result<TensorSection> {
    let m = s.dim;
    if x.dim() != m {
        return Err(Error::Dimension(format!(
            "field on R^{} against a section over R^{m}",
            x.dim()
        )));
    }
    let ty = s.ty;
    let rank = ty.rank();
    let dx = x.jacobian_exprs();
    let components = (0..s.components.len())
        .map(|flat| {
            let idx = multi_index(flat, m, rank);
            let mut acc = x.apply(&s.components[flat]);
            for slot in 0..rank {
                let mut j = idx.clone();
                for k in 0..m {
                    j[slot] = k;
                    let t = &s.components[flat_index(&j, m)];
                    if slot < ty.p {
                        acc = acc.sub(&t.mul(&dx[idx[slot]][k]));
                    } else {
                        acc = acc.add(&t.mul(&dx[k][idx[slot]]));
                    }
                }
            }
            acc
        })
        .collect();
    TensorSection::new(ty, components, s.domain.clone())
}

/// `ℒ_X s` at `x` as the first `t`-derivative of `(Fl^X_t)^* s`.
pub fn lie_derivative_flow(
    x_field: &VectorField,
    s: &TensorSection,
    x: &[f64],
    opts: &DiffOpts,
    flow_opts: &IntegratorOpts,
) -> Result<DerivEstimate> {
    let c = LocalCurve::flow(x_field, flow_opts);
    kth_derivative(pullback_curve_section(&c, s, x), 1, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeibnizReport {
    pub order: usize,
    /// `∂^k_t|₀ (c^1_t ∘ ... ∘ c^l_t)^* s (x)`.
    pub lhs: Vec<f64>,
    /// Multinomial sum of mixed partials.
    pub rhs: Vec<f64>,
    pub terms: Vec<(Vec<usize>, Vec<f64>)>,
    pub residual: f64,
    pub error_estimate: f64,
}

fn compositions(k: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![k]];
    }
    (0..=k)
        .rev()
        .flat_map(|first| {
            compositions(k - first, parts - 1)
                .into_iter()
                .map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
        })
        .collect()
}

/// Both sides of the multinomial Leibniz rule for pullbacks along a
/// composition of curves, each estimated independently.
pub fn leibniz_check(
    curves: &[LocalCurve],
    s: &TensorSection,
    x: &[f64],
    k: usize,
    opts: &DiffOpts,
) -> Result<LeibnizReport> {
    if curves.is_empty() {
        return Err(Error::Arity {
            expected: 1,
            got: 0,
        });
    }
    let g = composite_pullback(curves, s, x);
    let l = curves.len();
    let lhs = kth_derivative(|t| g(&vec![t; l]), k, opts)?;
    let mut rhs = vec![0.0; lhs.value.len()];
    let mut terms = Vec::new();
    let mut err = lhs.error_estimate;
    for js in compositions(k, l) {
        let weight = factorial(k) / js.iter().map(|&j| factorial(j)).product::<f64>();
        let d = mixed_partial(&g, &js, opts)?;
        for (r, v) in rhs.iter_mut().zip(&d.value) {
            *r += weight * v;
        }
        err += weight * d.error_estimate;
        terms.push((js, d.value));
    }
    let residual = crate::deriv::max_abs_diff(&lhs.value, &rhs);
    Ok(LeibnizReport {
        order: k,
        lhs: lhs.value,
        rhs,
        terms,
        residual,
        error_estimate: err,
    })
}
