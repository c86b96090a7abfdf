//! Dormand-Prince 5(4) with adaptive step control, for autonomous systems.

use crate::error::{Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 200_000;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

/// Integrates `y' = f(y)` from `y0` over time `t` (either sign).
///
/// `inside` is checked on every accepted step; a `false` aborts with
/// [`Error::Escape`].
pub fn integrate<F, G>(f: F, y0: &[f64], t: f64, tol: Tolerances, inside: G) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
    G: Fn(&[f64]) -> bool,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    let dir = t.signum();
    let total = t.abs();
    let mut done = 0.0;
    let mut h = total.min(0.05);
    let h_min = 1e-14 * total.max(1.0);

    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(&y, &mut k[0])?;

    for _ in 0..MAX_STEPS {
        if done >= total {
            return Ok(y);
        }
        let last = done + h >= total;
        if last {
            h = total - done;
        }
        let hs = dir * h;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                stage[i] = y[i] + hs * acc;
            }
            f(&stage, &mut k[s])?;
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let sc = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
            err += (hs * e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Tolerance("non-finite error estimate".into()));
        }
        if err <= 1.0 {
            if !inside(&y_new) {
                return Err(Error::Escape {
                    t: dir * (done + h),
                });
            }
            done = if last { total } else { done + h };
            y.copy_from_slice(&y_new);
            // first-same-as-last
            k.swap(0, 6);
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < h_min {
                return Err(Error::Tolerance(format!("step {h:e} below minimum")));
            }
        }
    }
    Err(Error::Tolerance("maximum number of steps exceeded".into()))
}
