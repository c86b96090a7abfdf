//! Flows of vector fields and curves of local diffeomorphisms.
//!
//! Composition follows `(a ∘ b)(x) = a(b(x))`. The commutator of two curves
//! is `[a_t, b_t] = b_t⁻¹ ∘ a_t⁻¹ ∘ b_t ∘ a_t`, so `a_t` acts first. With this
//! ordering the leading derivative of the commutator of flows of `X` and `Y`
//! is `2 [X, Y]` for the usual field bracket; in the Lie algebra of the
//! diffeomorphism group the bracket carries the opposite sign.

pub mod curve;
pub mod integrator;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarExpr, VectorField};
use crate::group::mat_exp;
pub use curve::{bracket_curve, commutator_curve, curve_velocity, LocalCurve};
use integrator::{integrate, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Largest |t| a flow may be asked for.
    pub t_max: f64,
    /// Use the translation / matrix-exponential flow for affine fields.
    pub closed_form: bool,
}

impl Default for IntegratorOpts {
    fn default() -> Self {
        IntegratorOpts {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            t_max: 10.0,
            closed_form: true,
        }
    }
}

impl IntegratorOpts {
    pub fn numeric() -> Self {
        IntegratorOpts {
            closed_form: false,
            ..Default::default()
        }
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            abs: self.abs_tol,
            rel: self.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ClosedForm {
    Translation(Vec<f64>),
    /// `x' = A x + b`, stored as the augmented generator `[[A, b], [0, 0]]`.
    Affine(DMatrix<f64>),
}

/// A vector field prepared for repeated flow evaluation: symbolic Jacobian
/// and, when it exists, the closed-form flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    field: VectorField,
    jacobian: Vec<Vec<ScalarExpr>>,
    closed: Option<ClosedForm>,
}

impl FlowField {
    pub fn new(field: VectorField) -> Self {
        let jacobian = field.jacobian_exprs();
        let closed = field.affine_part().map(|(a, b)| {
            if a.iter().all(|v| *v == 0.0) {
                ClosedForm::Translation(b.as_slice().to_vec())
            } else {
                let m = a.nrows();
                let mut aug = DMatrix::zeros(m + 1, m + 1);
                aug.view_mut((0, 0), (m, m)).copy_from(&a);
                aug.view_mut((0, m), (m, 1)).copy_from(&b);
                ClosedForm::Affine(aug)
            }
        });
        FlowField {
            field,
            jacobian,
            closed,
        }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed.is_some()
    }

    fn precheck(&self, t: f64, x: &[f64], opts: &IntegratorOpts) -> Result<()> {
        if x.len() != self.field.dim() {
            return Err(Error::Dimension(format!(
                "{}-point for a {}-dimensional field",
                x.len(),
                self.field.dim()
            )));
        }
        if t.abs() > opts.t_max {
            return Err(Error::Domain(format!(
                "|t| = {} beyond the horizon {}",
                t.abs(),
                opts.t_max
            )));
        }
        if !self.field.domain().contains(x) {
            return Err(Error::Domain(format!("{x:?} is outside the field's box")));
        }
        Ok(())
    }

    fn closed_form(&self, opts: &IntegratorOpts) -> Option<&ClosedForm> {
        if opts.closed_form {
            self.closed.as_ref()
        } else {
            None
        }
    }

    fn check_end(&self, t: f64, y: Vec<f64>) -> Result<Vec<f64>> {
        if self.field.domain().contains(&y) {
            Ok(y)
        } else {
            Err(Error::Escape { t })
        }
    }

    /// `Fl^X_t(x)`.
    pub fn flow(&self, t: f64, x: &[f64], opts: &IntegratorOpts) -> Result<Vec<f64>> {
        self.precheck(t, x, opts)?;
        if t == 0.0 {
            return Ok(x.to_vec());
        }
        match self.closed_form(opts) {
            Some(ClosedForm::Translation(b)) => {
                let y = x.iter().zip(b).map(|(xi, bi)| xi + t * bi).collect();
                self.check_end(t, y)
            }
            Some(ClosedForm::Affine(aug)) => {
                let e = mat_exp(aug, t)?;
                let m = x.len();
                let mut xa = x.to_vec();
                xa.push(1.0);
                let y = &e * DVector::from_vec(xa);
                self.check_end(t, y.as_slice()[..m].to_vec())
            }
            None => {
                let domain = self.field.domain();
                integrate(
                    |y, out| self.field.eval_into(y, out),
                    x,
                    t,
                    opts.tolerances(),
                    |y| domain.contains(y),
                )
            }
        }
    }

    /// `Fl^X_t(x)` and its spatial Jacobian. Numeric flows integrate the
    /// variational equation `J' = DX(y) J` alongside the trajectory.
    pub fn flow_with_jacobian(
        &self,
        t: f64,
        x: &[f64],
        opts: &IntegratorOpts,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.precheck(t, x, opts)?;
        let m = x.len();
        if t == 0.0 {
            return Ok((x.to_vec(), DMatrix::identity(m, m)));
        }
        match self.closed_form(opts) {
            Some(ClosedForm::Translation(_)) => {
                Ok((self.flow(t, x, opts)?, DMatrix::identity(m, m)))
            }
            Some(ClosedForm::Affine(aug)) => {
                let e = mat_exp(aug, t)?;
                let mut xa = x.to_vec();
                xa.push(1.0);
                let y = &e * DVector::from_vec(xa);
                let y = self.check_end(t, y.as_slice()[..m].to_vec())?;
                Ok((y, e.view((0, 0), (m, m)).into_owned()))
            }
            None => {
                let mut state = x.to_vec();
                state.extend(DMatrix::<f64>::identity(m, m).iter());
                let domain = self.field.domain();
                let rhs = |s: &[f64], out: &mut [f64]| -> Result<()> {
                    let (y, j) = s.split_at(m);
                    self.field.eval_into(y, &mut out[..m])?;
                    let mut dx = DMatrix::zeros(m, m);
                    for r in 0..m {
                        for c in 0..m {
                            dx[(r, c)] = self.jacobian[r][c].eval(y)?;
                        }
                    }
                    let j = DMatrix::from_column_slice(m, m, j);
                    out[m..].copy_from_slice((dx * j).as_slice());
                    Ok(())
                };
                let end = integrate(rhs, &state, t, opts.tolerances(), |s| {
                    domain.contains(&s[..m])
                })?;
                Ok((
                    end[..m].to_vec(),
                    DMatrix::from_column_slice(m, m, &end[m..]),
                ))
            }
        }
    }
}

/// `Fl^X_t(x)`, closed form for constant and affine fields when enabled.
pub fn flow(x_field: &VectorField, t: f64, x: &[f64], opts: &IntegratorOpts) -> Result<Vec<f64>> {
    FlowField::new(x_field.clone()).flow(t, x, opts)
}
