//! Matrix Lie groups: exponentials, group commutators and the generalized
//! Trotter formulas
//!
//! ```text
//! k! B(X_1..X_k) = d^k/dt^k|0 B(exp tX_1, ..., exp tX_k)
//!                = d^(k-1)/dt^(k-1)|0 g(t)^-1 g'(t),   g(t) = B(exp tX_i)
//! ```
//!
//! where brackets of group elements are `[g, h] = g h g^-1 h^-1` and brackets
//! of algebra elements are matrix commutators.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bracket::{matrix_commutator, BracketExpr};
use crate::deriv::{factorial, kth_derivative, max_abs, max_abs_diff, DiffOpts, MAX_ORDER};
use crate::error::{Error, Result};

/// `exp(tA)` by scaling and squaring with the degree-13 Padé approximant.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    if !a.is_square() {
        return Err(Error::Dimension(
            "exponential of a non-square matrix".into(),
        ));
    }
    let n = a.nrows();
    let ta = a * t;
    if ta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    let norm = one_norm(&ta);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    if s > 1000 {
        return Err(Error::Overflow);
    }
    let a1 = ta / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &id * B[1];
    let u = &a1 * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &id * B[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::Overflow)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(r)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Invertible square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement(DMatrix<f64>);

impl GroupElement {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("group elements must be square".into()));
        }
        if m.clone().lu().determinant().abs() <= 1e-12 {
            return Err(Error::Singular);
        }
        Ok(GroupElement(m))
    }

    pub fn identity(n: usize) -> Self {
        GroupElement(DMatrix::identity(n, n))
    }

    pub fn exp(a: &DMatrix<f64>, t: f64) -> Result<Self> {
        GroupElement::new(mat_exp(a, t)?)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let n = self.0.nrows();
        self.0
            .clone()
            .lu()
            .solve(&DMatrix::identity(n, n))
            .map(GroupElement)
            .ok_or(Error::Singular)
    }
}

/// `g h g^-1 h^-1`.
pub fn group_commutator(g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
    if g.0.shape() != h.0.shape() {
        return Err(Error::Dimension("group elements of different sizes".into()));
    }
    let gi = g.inverse()?;
    let hi = h.inverse()?;
    Ok(GroupElement(&g.0 * &h.0 * gi.0 * hi.0))
}

pub fn group_bracket_word(b: &BracketExpr, elements: &[GroupElement]) -> Result<GroupElement> {
    b.try_eval(elements, group_commutator)
}

/// Algebra-side value `B(X_1..X_k)` under the matrix commutator.
pub fn algebra_bracket_word(b: &BracketExpr, elements: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    b.eval(elements, matrix_commutator)
}

/// Named basis of a matrix Lie algebra, closed under the commutator.
#[derive(Debug, Clone, PartialEq)]
pub struct MatAlgebra {
    pub name: String,
    pub n: usize,
    pub basis: Vec<(String, DMatrix<f64>)>,
    /// `structure[i][j][l]`: coefficient of basis `l` in `[B_i, B_j]`.
    pub structure: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct AlgebraFile {
    name: Option<String>,
    #[serde(rename = "matrix")]
    matrices: Vec<NamedMatrix>,
}

#[derive(Debug, Deserialize, Serialize)]
struct NamedMatrix {
    name: String,
    rows: Vec<Vec<f64>>,
}

impl MatAlgebra {
    /// Validates closure and extracts structure constants.
    pub fn new(name: &str, basis: Vec<(String, DMatrix<f64>)>) -> Result<Self> {
        let n = basis
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| Error::Config("algebra basis is empty".into()))?;
        if basis.iter().any(|(_, m)| m.shape() != (n, n)) {
            return Err(Error::Dimension("basis matrices must all be n x n".into()));
        }
        let d = basis.len();
        let columns: Vec<f64> = basis.iter().flat_map(|(_, m)| m.iter().copied()).collect();
        let span = DMatrix::from_column_slice(n * n, d, &columns);
        let svd = span.clone().svd(true, true);
        if svd.rank(1e-12) < d {
            return Err(Error::Config(
                "basis matrices are linearly dependent".into(),
            ));
        }
        let mut structure = vec![vec![vec![0.0; d]; d]; d];
        for i in 0..d {
            for j in 0..d {
                let c = matrix_commutator(&basis[i].1, &basis[j].1);
                let target = nalgebra::DVector::from_column_slice(c.as_slice());
                let coeffs = svd
                    .solve(&target, 1e-14)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let back = &span * &coeffs;
                let resid = max_abs_diff(back.as_slice(), target.as_slice());
                if resid > 1e-10 {
                    return Err(Error::Config(format!(
                        "[{}, {}] leaves the span of the basis (residual {resid:e})",
                        basis[i].0, basis[j].0
                    )));
                }
                structure[i][j] = coeffs.iter().copied().collect();
            }
        }
        Ok(MatAlgebra {
            name: name.to_string(),
            n,
            basis,
            structure,
        })
    }

    /// so(3) with `(E_i)_{jk} = -eps_{ijk}`.
    pub fn so3() -> Self {
        let e = |rows: [f64; 9]| DMatrix::from_row_slice(3, 3, &rows);
        let basis = vec![
            ("E1".into(), e([0., 0., 0., 0., 0., -1., 0., 1., 0.])),
            ("E2".into(), e([0., 0., 1., 0., 0., 0., -1., 0., 0.])),
            ("E3".into(), e([0., -1., 0., 1., 0., 0., 0., 0., 0.])),
        ];
        MatAlgebra::new("so3", basis).expect("so(3) basis is closed")
    }

    pub fn sl2() -> Self {
        let e = |rows: [f64; 4]| DMatrix::from_row_slice(2, 2, &rows);
        let basis = vec![
            ("H".into(), e([1., 0., 0., -1.])),
            ("E".into(), e([0., 1., 0., 0.])),
            ("F".into(), e([0., 0., 1., 0.])),
        ];
        MatAlgebra::new("sl2", basis).expect("sl(2) basis is closed")
    }

    /// Strictly upper triangular 3x3 matrices.
    pub fn heisenberg() -> Self {
        let unit = |i: usize, j: usize| {
            let mut m = DMatrix::zeros(3, 3);
            m[(i, j)] = 1.0;
            m
        };
        let basis = vec![
            ("N12".into(), unit(0, 1)),
            ("N23".into(), unit(1, 2)),
            ("N13".into(), unit(0, 2)),
        ];
        MatAlgebra::new("heisenberg", basis).expect("heisenberg basis is closed")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "so3" => Some(Self::so3()),
            "sl2" => Some(Self::sl2()),
            "heisenberg" | "nilpotent" => Some(Self::heisenberg()),
            _ => None,
        }
    }

    /// Parses an algebra file:
    ///
    /// ```toml
    /// name = "so3"
    /// [[matrix]]
    /// name = "E1"
    /// rows = [[0, 0, 0], [0, 0, -1], [0, 1, 0]]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: AlgebraFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("algebra file: {e}")))?;
        let mut basis = Vec::with_capacity(file.matrices.len());
        for m in file.matrices {
            let n = m.rows.len();
            if n == 0 || m.rows.iter().any(|r| r.len() != n) {
                return Err(Error::Dimension(format!(
                    "matrix '{}' is not square",
                    m.name
                )));
            }
            let flat: Vec<f64> = m.rows.iter().flatten().copied().collect();
            basis.push((m.name, DMatrix::from_row_slice(n, n, &flat)));
        }
        MatAlgebra::new(file.name.as_deref().unwrap_or("custom"), basis)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let file = AlgebraFile {
            name: Some(self.name.clone()),
            matrices: self
                .basis
                .iter()
                .map(|(name, m)| NamedMatrix {
                    name: name.clone(),
                    rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("algebra serializes")
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.basis.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub order: usize,
    pub max_entry: f64,
    pub error_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrotterReport {
    pub bracket: String,
    pub order: usize,
    /// Lower orders that must vanish.
    pub lower: Vec<OrderCheck>,
    /// Row-major `n x n` estimate of the compared derivative.
    pub estimate: Vec<f64>,
    /// Row-major `k! B(X_1..X_k)`.
    pub oracle: Vec<f64>,
    /// Entrywise `|estimate - oracle|`, row-major.
    pub residuals: Vec<f64>,
    pub residual: f64,
    pub error_estimate: f64,
    pub pass: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_arity(b: &BracketExpr, basis: &[DMatrix<f64>]) -> Result<usize> {
    let k = b.len();
    if k != basis.len() {
        return Err(Error::Arity {
            expected: k,
            got: basis.len(),
        });
    }
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh(k));
    }
    Ok(k)
}

fn word_curve<'a>(
    b: &'a BracketExpr,
    basis: &'a [DMatrix<f64>],
) -> impl Fn(f64) -> Result<DMatrix<f64>> + 'a {
    move |t| {
        let elems = basis
            .iter()
            .map(|x| GroupElement::exp(x, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(group_bracket_word(b, &elems)?.into_matrix())
    }
}

fn oracle(b: &BracketExpr, basis: &[DMatrix<f64>], k: usize) -> Result<DMatrix<f64>> {
    Ok(algebra_bracket_word(b, basis)? * factorial(k))
}

/// `d^k|0 B(exp tX_i) = k! B(X_i)` with vanishing lower orders.
pub fn verify_trotter_first(
    b: &BracketExpr,
    basis: &[DMatrix<f64>],
    opts: &DiffOpts,
) -> Result<TrotterReport> {
    let k = check_arity(b, basis)?;
    let g = word_curve(b, basis);
    let flat = |t: f64| g(t).map(|m| row_major(&m));
    let lower = (1..k)
        .map(|j| {
            kth_derivative(flat, j, opts).map(|e| OrderCheck {
                order: j,
                max_entry: e.norm(),
                error_estimate: e.error_estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let est = kth_derivative(flat, k, opts)?;
    let oracle = row_major(&oracle(b, basis, k)?);
    Ok(finish(
        b,
        k,
        lower,
        est.value,
        est.error_estimate,
        oracle,
        opts,
    ))
}

/// `d^(k-1)|0 g(t)^-1 g'(t) = k! B(X_i)`, `g'` by an inner central difference.
pub fn verify_trotter_second(
    b: &BracketExpr,
    basis: &[DMatrix<f64>],
    opts: &DiffOpts,
) -> Result<TrotterReport> {
    let k = check_arity(b, basis)?;
    let g = word_curve(b, basis);
    let inner_opts = opts.clone();
    let log_derivative = |t: f64| -> Result<Vec<f64>> {
        let gt = GroupElement::new(g(t)?)?;
        let dg = kth_derivative(|s| g(t + s).map(|m| row_major(&m)), 1, &inner_opts)?;
        let n = gt.matrix().nrows();
        let dg = DMatrix::from_row_slice(n, n, &dg.value);
        Ok(row_major(&(gt.inverse()?.into_matrix() * dg)))
    };
    let lower = (0..k.saturating_sub(1))
        .map(|j| {
            kth_derivative(log_derivative, j, opts).map(|e| OrderCheck {
                order: j,
                max_entry: e.norm(),
                error_estimate: e.error_estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let est = kth_derivative(log_derivative, k - 1, opts)?;
    let oracle = row_major(&oracle(b, basis, k)?);
    Ok(finish(
        b,
        k,
        lower,
        est.value,
        est.error_estimate,
        oracle,
        opts,
    ))
}

fn finish(
    b: &BracketExpr,
    k: usize,
    lower: Vec<OrderCheck>,
    estimate: Vec<f64>,
    error_estimate: f64,
    oracle: Vec<f64>,
    opts: &DiffOpts,
) -> TrotterReport {
    let residuals: Vec<f64> = estimate
        .iter()
        .zip(&oracle)
        .map(|(a, o)| (a - o).abs())
        .collect();
    let residual = max_abs(&residuals);
    let pass = residual <= opts.match_tol && lower.iter().all(|c| c.max_entry <= opts.vanish_tol);
    TrotterReport {
        bracket: b.to_string(),
        order: k,
        lower,
        estimate,
        oracle,
        residuals,
        residual,
        error_estimate,
        pass,
    }
}
