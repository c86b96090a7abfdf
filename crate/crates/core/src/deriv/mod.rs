//! High-order derivatives at `t = 0` of vector-valued curves.
//!
//! A central stencil of the requested accuracy is applied on a ladder of
//! step sizes `h0, h0/2, ..., h0/2^(L-1)` and the results are combined by
//! Richardson extrapolation. Central stencils only carry even powers of `h`
//! in their error expansion, so column `m` of the tableau removes the
//! `h^(a + 2(m-1))` term.
//!
//! Default steps: `h0 = 0.05` for orders 1-2, `0.15` for orders 3-4, `0.25`
//! for order 5, with four levels and a fourth-order base stencil. These keep
//! the `h^-k` cancellation loss below the flow integrator's noise on the
//! worked commutator examples.

pub mod stencil;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order the lab will estimate.
pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffOpts {
    /// Base step; `None` picks the per-order default.
    pub h0: Option<f64>,
    pub levels: usize,
    pub stencil_order: usize,
    pub vanish_tol: f64,
    pub match_tol: f64,
}

impl Default for DiffOpts {
    fn default() -> Self {
        DiffOpts::numeric()
    }
}

impl DiffOpts {
    /// Tolerances for curves built from numerically integrated flows.
    pub fn numeric() -> Self {
        DiffOpts {
            h0: None,
            levels: 4,
            stencil_order: 4,
            vanish_tol: 1e-5,
            match_tol: 1e-4,
        }
    }

    /// Tolerances for curves built only from closed-form maps.
    pub fn closed_form() -> Self {
        DiffOpts {
            match_tol: 1e-7,
            ..DiffOpts::numeric()
        }
    }

    pub fn with_h0(mut self, h0: f64) -> Self {
        self.h0 = Some(h0);
        self
    }

    /// Base step per derivative order.
    pub fn default_step(order: usize) -> f64 {
        match order {
            0..=2 => 0.05,
            3 => 0.15,
            _ => 0.25,
        }
    }

    pub fn step_for(&self, order: usize) -> f64 {
        self.h0.unwrap_or_else(|| Self::default_step(order))
    }

    /// Largest |t| the stencils touch for derivatives up to `order`.
    pub fn reach(&self, order: usize) -> f64 {
        (1..=order.max(1))
            .map(|k| self.step_for(k) * stencil::central_radius(k, self.stencil_order) as f64)
            .fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if let Some(h) = self.h0 {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("h0 must be positive, got {h}")));
            }
        }
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.stencil_order < 2 || !self.stencil_order.is_multiple_of(2) {
            return Err(Error::Config("stencil order must be even and >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivEstimate {
    pub order: usize,
    pub value: Vec<f64>,
    /// Step of the finest level that entered the reported value.
    pub step: f64,
    pub richardson_levels: usize,
    /// Max-component difference between the reported and the previous
    /// diagonal entry of the Richardson tableau.
    pub error_estimate: f64,
}

impl DerivEstimate {
    pub fn norm(&self) -> f64 {
        max_abs(&self.value)
    }

    pub fn scaled(&self, factor: f64) -> Vec<f64> {
        self.value.iter().map(|v| v * factor).collect()
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).product::<usize>() as f64
}

/// Estimates the `k`-th derivative at 0 of `curve`.
///
/// Order 0 returns `curve(0)` with a zero error estimate.
pub fn kth_derivative<F>(curve: F, k: usize, opts: &DiffOpts) -> Result<DerivEstimate>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    mixed_partial(|t: &[f64]| curve(t[0]), &[k], opts)
}

/// Estimates `∂^{j_1}_{t_1} ... ∂^{j_n}_{t_n} g` at the origin.
///
/// All slots share one step ladder, chosen for the total order, and the
/// tensor product of central stencils keeps an even-power error expansion,
/// so the same Richardson tableau applies.
pub fn mixed_partial<F>(g: F, orders: &[usize], opts: &DiffOpts) -> Result<DerivEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let k: usize = orders.iter().sum();
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh(k));
    }
    opts.validate()?;
    let n = orders.len();
    if k == 0 {
        let value = g(&vec![0.0; n])?;
        return Ok(DerivEstimate {
            order: 0,
            value,
            step: 0.0,
            richardson_levels: 0,
            error_estimate: 0.0,
        });
    }
    // per-slot (offset, weight) lists; order 0 is the point evaluation
    let slots: Vec<Vec<(i64, f64)>> = orders
        .iter()
        .map(|&j| {
            if j == 0 {
                vec![(0, 1.0)]
            } else {
                let st = stencil::central(j, opts.stencil_order);
                st.offsets
                    .iter()
                    .zip(&st.weights)
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(o, w)| (*o, *w))
                    .collect()
            }
        })
        .collect();
    let h0 = opts.step_for(k);
    // a single level still gets an error estimate from one halving
    let levels = opts.levels.max(2);
    let finest = (levels - 1) as u32;
    let unit = h0 / 2f64.powi(finest as i32);
    // nodes on different levels coincide: t = n * unit
    let mut cache: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
    let mut dim = None;
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut idx = vec![0usize; n];
    for level in 0..levels {
        let stride = 1i64 << (finest - level as u32);
        let h = h0 / 2f64.powi(level as i32);
        let mut acc: Option<Vec<f64>> = None;
        idx.iter_mut().for_each(|i| *i = 0);
        'grid: loop {
            let mut w = 1.0;
            let mut node = Vec::with_capacity(n);
            for (s, &i) in slots.iter().zip(&idx) {
                w *= s[i].1;
                node.push(s[i].0 * stride);
            }
            if !cache.contains_key(&node) {
                let t: Vec<f64> = node.iter().map(|&m| m as f64 * unit).collect();
                let v = g(&t)?;
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(Error::Dimension("curve changed its output length".into()))
                    }
                    _ => {}
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Eval(format!("non-finite curve value at t = {t:?}")));
                }
                cache.insert(node.clone(), v);
            }
            let v = &cache[&node];
            let acc = acc.get_or_insert_with(|| vec![0.0; v.len()]);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < slots[d].len() {
                    continue 'grid;
                }
                idx[d] = 0;
            }
            break;
        }
        let scale = h.powi(k as i32);
        raw.push(
            acc.unwrap_or_default()
                .into_iter()
                .map(|a| a / scale)
                .collect(),
        );
    }
    let (value, best_level, best_err) = extrapolate(raw, opts)?;
    Ok(DerivEstimate {
        order: k,
        value,
        step: h0 / 2f64.powi(best_level as i32),
        richardson_levels: best_level + 1,
        error_estimate: best_err,
    })
}

/// Richardson tableau over the level estimates; returns the chosen diagonal
/// entry, its level and its error estimate.
fn extrapolate(raw: Vec<Vec<f64>>, opts: &DiffOpts) -> Result<(Vec<f64>, usize, f64)> {
    let levels = raw.len();
    let mut prev_row: Vec<Vec<f64>> = Vec::new();
    let mut diagonal: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for (j, d) in raw.into_iter().enumerate() {
        let mut row = vec![d];
        for m in 1..=j {
            let p = (opts.stencil_order + 2 * (m - 1)) as i32;
            let denom = 2f64.powi(p) - 1.0;
            let next: Vec<f64> = row[m - 1]
                .iter()
                .zip(&prev_row[m - 1])
                .map(|(fine, coarse)| fine + (fine - coarse) / denom)
                .collect();
            row.push(next);
        }
        diagonal.push(row[j].clone());
        prev_row = row;
    }
    let errors: Vec<f64> = (1..levels)
        .map(|j| max_abs_diff(&diagonal[j], &diagonal[j - 1]))
        .collect();
    let (best_idx, best_err) = errors.iter().enumerate().fold(
        (0, f64::INFINITY),
        |(bi, be), (i, &e)| {
            if e < be {
                (i, e)
            } else {
                (bi, be)
            }
        },
    );
    let best_level = if opts.levels == 1 { 0 } else { best_idx + 1 };
    let value = diagonal.swap_remove(best_level);
    // Divergence: the error grows between the final levels and even the best
    // estimate is far above rounding level.
    let diverging = errors.len() >= 2 && errors[errors.len() - 1] > errors[errors.len() - 2];
    if diverging && best_err > 1e-6 * max_abs(&value).max(1.0) {
        return Err(Error::Noise {
            error_estimate: best_err,
        });
    }
    Ok((value, best_level, best_err))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Leading {
    Found {
        order: usize,
        estimate: DerivEstimate,
        /// Orders below `order` with their (small) max-norms.
        lower: Vec<(usize, f64)>,
    },
    AllVanish {
        norms: Vec<(usize, f64)>,
    },
}

/// Smallest order `k <= max_order` whose derivative does not vanish.
pub fn leading_derivative<F>(curve: F, max_order: usize, opts: &DiffOpts) -> Result<Leading>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if max_order > MAX_ORDER {
        return Err(Error::OrderTooHigh(max_order));
    }
    let mut lower = Vec::new();
    for k in 1..=max_order {
        let est = kth_derivative(&curve, k, opts)?;
        let norm = est.norm();
        let scale = norm.max(1.0);
        if norm > opts.vanish_tol * scale {
            return Ok(Leading::Found {
                order: k,
                estimate: est,
                lower,
            });
        }
        lower.push((k, norm));
    }
    Ok(Leading::AllVanish { norms: lower })
}

/// A change of coordinates between two charts, with its Jacobian.
pub struct ChartMap {
    map: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    jacobian: Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
}

impl ChartMap {
    pub fn new(
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        ChartMap {
            map: Box::new(map),
            jacobian: Box::new(jacobian),
        }
    }

    pub fn identity() -> Self {
        ChartMap::new(|x| x.to_vec(), |x| DMatrix::identity(x.len(), x.len()))
    }

    pub fn linear(l: DMatrix<f64>) -> Self {
        let l2 = l.clone();
        ChartMap::new(
            move |x| (&l * DVector::from_column_slice(x)).as_slice().to_vec(),
            move |_| l2.clone(),
        )
    }

    /// `(r, theta) -> (r cos theta, r sin theta)`.
    pub fn polar_to_cartesian() -> Self {
        ChartMap::new(
            |p| vec![p[0] * p[1].cos(), p[0] * p[1].sin()],
            |p| {
                let (s, c) = p[1].sin_cos();
                DMatrix::from_row_slice(2, 2, &[c, -p[0] * s, s, p[0] * c])
            },
        )
    }

    /// `(x, y) -> (r, theta)`, valid off the origin.
    pub fn cartesian_to_polar() -> Self {
        ChartMap::new(
            |p| vec![p[0].hypot(p[1]), p[1].atan2(p[0])],
            |p| {
                let r2 = p[0] * p[0] + p[1] * p[1];
                let r = r2.sqrt();
                DMatrix::from_row_slice(2, 2, &[p[0] / r, p[1] / r, -p[1] / r2, p[0] / r2])
            },
        )
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.map)(x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReport {
    pub order: usize,
    /// `J(x) * d^k c_A`
    pub transported: Vec<f64>,
    /// `d^k (chart_map o c_A)`
    pub direct: Vec<f64>,
    pub residual: f64,
    pub lower_norms: Vec<(usize, f64)>,
    pub precision_warning: bool,
    pub pass: bool,
}

/// Checks that the order-`k` derivative of a point curve transforms like a
/// tangent vector under `chart_map`, given that lower orders vanish.
pub fn chart_independence_check<F>(
    curve: F,
    chart_map: &ChartMap,
    k: usize,
    opts: &DiffOpts,
) -> Result<ChartReport>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let mut lower_norms = Vec::new();
    for j in 1..k {
        let est = kth_derivative(&curve, j, opts)?;
        lower_norms.push((j, est.norm()));
    }
    let lower_ok = lower_norms.iter().all(|(_, n)| *n <= opts.vanish_tol);
    let x = curve(0.0)?;
    let in_a = kth_derivative(&curve, k, opts)?;
    let mapped = |t: f64| curve(t).map(|p| chart_map.apply(&p));
    let in_b = kth_derivative(mapped, k, opts)?;
    let jac = chart_map.jacobian(&x);
    let transported = (&jac * DVector::from_column_slice(&in_a.value))
        .as_slice()
        .to_vec();
    let residual = max_abs_diff(&transported, &in_b.value);
    let precision_warning =
        in_a.error_estimate > opts.match_tol / 10.0 && in_b.error_estimate > opts.match_tol / 10.0;
    Ok(ChartReport {
        order: k,
        pass: lower_ok && residual <= opts.match_tol,
        transported,
        direct: in_b.value,
        residual,
        lower_norms,
        precision_warning,
    })
}
