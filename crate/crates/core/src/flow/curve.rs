use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FlowField, IntegratorOpts};
use crate::bracket::BracketExpr;
use crate::deriv::{kth_derivative, DiffOpts};
use crate::error::{Error, Result};
use crate::field::VectorField;

type RawEval = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Step for finite-difference Jacobians of raw maps.
pub const JACOBIAN_STEP: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-13;

#[derive(Clone)]
enum Kind {
    Identity,
    Flow(Arc<FlowField>, IntegratorOpts),
    Reparam(LocalCurve, u32),
    Inverse(LocalCurve),
    /// `outer ∘ inner`
    Compose(LocalCurve, LocalCurve),
    Raw(Arc<RawEval>),
}

/// A family `t ↦ φ_t` of local diffeomorphisms with `φ_0 = Id`.
///
/// Curves are immutable recipes. When the leading order `k` and field `X`
/// are known analytically (`∂ᵏ_t|₀ φ_t = k! X`) they are carried along as
/// `declared`.
#[derive(Clone)]
pub struct LocalCurve {
    dim: usize,
    kind: Arc<Kind>,
    declared: Option<(usize, VectorField)>,
}

impl fmt::Debug for LocalCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocalCurve({})", self.describe())
    }
}

impl LocalCurve {
    pub fn identity(dim: usize) -> Self {
        LocalCurve {
            dim,
            kind: Arc::new(Kind::Identity),
            declared: None,
        }
    }

    /// Flow curve `t ↦ Fl^X_t`, leading order 1 with field `X`.
    pub fn flow(x: &VectorField, opts: &IntegratorOpts) -> Self {
        LocalCurve {
            dim: x.dim(),
            kind: Arc::new(Kind::Flow(
                Arc::new(FlowField::new(x.clone())),
                opts.clone(),
            )),
            declared: Some((1, x.clone())),
        }
    }

    /// User-supplied curve; inverses are found by Newton iteration.
    pub fn from_map(
        dim: usize,
        eval: impl Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
        declared: Option<(usize, VectorField)>,
    ) -> Self {
        LocalCurve {
            dim,
            kind: Arc::new(Kind::Raw(Arc::new(eval))),
            declared,
        }
    }

    /// `t ↦ φ_{t^p}`, leading order `p k` with the same field.
    pub fn reparam(&self, p: u32) -> Self {
        assert!(p >= 1, "reparameterization power must be positive");
        if p == 1 {
            return self.clone();
        }
        LocalCurve {
            dim: self.dim,
            kind: Arc::new(Kind::Reparam(self.clone(), p)),
            declared: self
                .declared
                .as_ref()
                .map(|(k, x)| (k * p as usize, x.clone())),
        }
    }

    /// `t ↦ φ_t⁻¹`, leading order `k` with field `-X`.
    pub fn invert(&self) -> Self {
        LocalCurve {
            dim: self.dim,
            kind: Arc::new(Kind::Inverse(self.clone())),
            declared: self.declared.as_ref().map(|(k, x)| (*k, x.scale(-1.0))),
        }
    }

    /// `t ↦ self_t ∘ inner_t`.
    pub fn compose(&self, inner: &LocalCurve) -> Result<Self> {
        if self.dim != inner.dim {
            return Err(Error::Dimension(format!(
                "composing curves on R^{} and R^{}",
                self.dim, inner.dim
            )));
        }
        Ok(LocalCurve {
            dim: self.dim,
            kind: Arc::new(Kind::Compose(self.clone(), inner.clone())),
            declared: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Analytically known `(k, X)`.
    pub fn declared(&self) -> Option<(usize, &VectorField)> {
        self.declared.as_ref().map(|(k, x)| (*k, x))
    }

    pub fn describe(&self) -> String {
        match &*self.kind {
            Kind::Identity => "id".into(),
            Kind::Flow(f, _) => format!("Fl[{}]", f.field()),
            Kind::Reparam(c, p) => format!("{}(t^{p})", c.describe()),
            Kind::Inverse(c) => format!("({})^-1", c.describe()),
            Kind::Compose(a, b) => format!("{} o {}", a.describe(), b.describe()),
            Kind::Raw(_) => "map".into(),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "{}-point for a curve on R^{}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `φ_t(x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        match &*self.kind {
            Kind::Identity => Ok(x.to_vec()),
            Kind::Flow(f, opts) => f.flow(t, x, opts),
            Kind::Reparam(c, p) => c.eval(t.powi(*p as i32), x),
            Kind::Inverse(c) => c.eval_inverse(t, x),
            Kind::Compose(a, b) => a.eval(t, &b.eval(t, x)?),
            Kind::Raw(f) => f(t, x),
        }
    }

    /// `φ_t⁻¹(x)`.
    pub fn eval_inverse(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        match &*self.kind {
            Kind::Identity => Ok(x.to_vec()),
            Kind::Flow(f, opts) => f.flow(-t, x, opts),
            Kind::Reparam(c, p) => c.eval_inverse(t.powi(*p as i32), x),
            Kind::Inverse(c) => c.eval(t, x),
            Kind::Compose(a, b) => b.eval_inverse(t, &a.eval_inverse(t, x)?),
            Kind::Raw(_) => self.newton_inverse(t, x),
        }
    }

    /// `φ_t(x)` with the spatial Jacobian `Dφ_t(x)`.
    pub fn eval_with_jacobian(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        match &*self.kind {
            Kind::Identity => Ok((x.to_vec(), DMatrix::identity(self.dim, self.dim))),
            Kind::Flow(f, opts) => f.flow_with_jacobian(t, x, opts),
            Kind::Reparam(c, p) => c.eval_with_jacobian(t.powi(*p as i32), x),
            Kind::Inverse(c) => c.eval_inverse_with_jacobian(t, x),
            Kind::Compose(a, b) => {
                let (y, jb) = b.eval_with_jacobian(t, x)?;
                let (z, ja) = a.eval_with_jacobian(t, &y)?;
                Ok((z, ja * jb))
            }
            Kind::Raw(_) => Ok((self.eval(t, x)?, self.fd_jacobian(t, x)?)),
        }
    }

    /// `φ_t⁻¹(x)` with `D(φ_t⁻¹)(x)`.
    pub fn eval_inverse_with_jacobian(
        &self,
        t: f64,
        x: &[f64],
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        match &*self.kind {
            Kind::Identity => Ok((x.to_vec(), DMatrix::identity(self.dim, self.dim))),
            Kind::Flow(f, opts) => f.flow_with_jacobian(-t, x, opts),
            Kind::Reparam(c, p) => c.eval_inverse_with_jacobian(t.powi(*p as i32), x),
            Kind::Inverse(c) => c.eval_with_jacobian(t, x),
            Kind::Compose(a, b) => {
                let (y, ja) = a.eval_inverse_with_jacobian(t, x)?;
                let (z, jb) = b.eval_inverse_with_jacobian(t, &y)?;
                Ok((z, jb * ja))
            }
            Kind::Raw(_) => {
                let y = self.newton_inverse(t, x)?;
                let j = self.fd_jacobian(t, &y)?;
                let inv = j
                    .try_inverse()
                    .ok_or_else(|| Error::Inverse("singular Jacobian".into()))?;
                Ok((y, inv))
            }
        }
    }

    fn fd_jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dim;
        let mut j = DMatrix::zeros(m, m);
        let mut xp = x.to_vec();
        for c in 0..m {
            xp[c] = x[c] + JACOBIAN_STEP;
            let a = self.eval(t, &xp)?;
            xp[c] = x[c] - JACOBIAN_STEP;
            let b = self.eval(t, &xp)?;
            xp[c] = x[c];
            for r in 0..m {
                j[(r, c)] = (a[r] - b[r]) / (2.0 * JACOBIAN_STEP);
            }
        }
        Ok(j)
    }

    /// Damped Newton on `φ_t(y) = x`, seeded at `y = x`.
    fn newton_inverse(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let resid = |y: &[f64]| -> Result<DVector<f64>> {
            let v = self.eval(t, y)?;
            Ok(DVector::from_iterator(
                self.dim,
                x.iter().zip(&v).map(|(a, b)| a - b),
            ))
        };
        let tol = NEWTON_TOL * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut y = x.to_vec();
        let mut r = resid(&y)?;
        for _ in 0..NEWTON_MAX_ITER {
            let norm = r.amax();
            if norm <= tol {
                return Ok(y);
            }
            let j = self.fd_jacobian(t, &y)?;
            let step = j
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Inverse("singular Jacobian".into()))?;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> = y
                    .iter()
                    .zip(step.iter())
                    .map(|(a, s)| a + lambda * s)
                    .collect();
                match resid(&trial) {
                    Ok(rt) if rt.amax() < norm => {
                        y = trial;
                        r = rt;
                        break;
                    }
                    _ if lambda > 1e-4 => lambda *= 0.5,
                    _ => {
                        // no decrease possible: at the rounding floor or stuck
                        if norm <= 1e3 * tol {
                            return Ok(y);
                        }
                        return Err(Error::Inverse(format!(
                            "line search stalled at residual {norm:e}"
                        )));
                    }
                }
            }
        }
        if r.amax() <= 1e3 * tol {
            Ok(y)
        } else {
            Err(Error::Inverse(format!(
                "no convergence in {NEWTON_MAX_ITER} iterations (residual {:e})",
                r.amax()
            )))
        }
    }
}

/// `[a_t, b_t] = b_t⁻¹ ∘ a_t⁻¹ ∘ b_t ∘ a_t`.
pub fn commutator_curve(a: &LocalCurve, b: &LocalCurve) -> Result<LocalCurve> {
    let first = b.compose(a)?;
    let second = a.invert().compose(&first)?;
    b.invert().compose(&second)
}

/// Iterated commutator curve `B(c_1, ..., c_k)`.
pub fn bracket_curve(b: &BracketExpr, curves: &[LocalCurve]) -> Result<LocalCurve> {
    b.try_eval(curves, commutator_curve)
}

/// Velocity field `(∂_s φ_s)|_{s=t} ∘ φ_t⁻¹` at `x`, by a Richardson-refined
/// central difference with base step `dt`.
pub fn curve_velocity(c: &LocalCurve, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let y = c.eval_inverse(t, x)?;
    let opts = DiffOpts::closed_form().with_h0(dt);
    Ok(kth_derivative(|s| c.eval(t + s, &y), 1, &opts)?.value)
}
