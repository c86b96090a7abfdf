//! Central finite-difference stencils from the Vandermonde moment system.
//!
//! For offsets `-r..=r` the weights `w_j` solve
//! `sum_j w_j j^n = k! [n == k]` for `n = 0..2r`, in exact rational arithmetic.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

#[derive(Debug, Clone)]
pub struct Stencil {
    pub order: usize,
    pub accuracy: usize,
    pub offsets: Vec<i64>,
    pub exact: Vec<BigRational>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn radius(&self) -> i64 {
        *self.offsets.last().unwrap()
    }
}

/// Half-width of the central stencil for derivative `order` with even `accuracy`.
pub fn central_radius(order: usize, accuracy: usize) -> usize {
    let points = 2 * order.div_ceil(2) + accuracy - 1;
    (points - 1) / 2
}

/// Exact central stencil, memoized per `(order, accuracy)`.
pub fn central(order: usize, accuracy: usize) -> Arc<Stencil> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Stencil>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&(order, accuracy)) {
        return s.clone();
    }
    let s = Arc::new(generate(order, accuracy));
    cache.lock().unwrap().insert((order, accuracy), s.clone());
    s
}

fn generate(order: usize, accuracy: usize) -> Stencil {
    assert!(
        accuracy >= 2 && accuracy.is_multiple_of(2),
        "accuracy must be even"
    );
    let r = central_radius(order, accuracy) as i64;
    let offsets: Vec<i64> = (-r..=r).collect();
    let exact = solve_moments(&offsets, order);
    let weights = exact.iter().map(|w| w.to_f64().unwrap()).collect();
    Stencil {
        order,
        accuracy,
        offsets,
        exact,
        weights,
    }
}

fn solve_moments(offsets: &[i64], order: usize) -> Vec<BigRational> {
    let n = offsets.len();
    let int = |v: i64| BigRational::from_integer(BigInt::from(v));
    // augmented matrix rows: moment n, columns: offsets, last column rhs
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|row| {
            let mut line: Vec<BigRational> =
                offsets.iter().map(|&o| int(o).pow(row as i32)).collect();
            let rhs = if row == order {
                (1..=order as i64).fold(BigRational::one(), |acc, i| acc * int(i))
            } else {
                BigRational::zero()
            };
            line.push(rhs);
            line
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .expect("Vandermonde system is nonsingular for distinct offsets");
        a.swap(col, pivot);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in col..=n {
                    let delta = &f * &a[col][c];
                    a[r][c] = &a[r][c] - delta;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n].clone()).collect()
}
