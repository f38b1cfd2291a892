//! Tridiagonal solve with partial pivoting.

use crate::error::{Error, Result};
use crate::real::Real;

/// Solve `A x = b` where `A` has sub-diagonal `lower` (length n-1),
/// diagonal `diag` and super-diagonal `upper` (length n-1). Inputs are consumed.
pub(crate) fn solve<T: Real>(mut lower: Vec<T>, mut diag: Vec<T>, mut upper: Vec<T>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 {
        return Ok(b);
    }
    if lower.len() + 1 != n || upper.len() + 1 != n || b.len() != n {
        return Err(Error::Internal("tridiagonal bands have inconsistent lengths".into()));
    }
    let singular = || Error::Numerical("singular tridiagonal system".into());
    // after elimination `lower[i]` holds the second super-diagonal
    for i in 0..n.saturating_sub(1) {
        if diag[i].abs() >= lower[i].abs() {
            if diag[i] == T::zero() {
                return Err(singular());
            }
            let fact = lower[i] / diag[i];
            diag[i + 1] = diag[i + 1] - fact * upper[i];
            b[i + 1] = b[i + 1] - fact * b[i];
            lower[i] = T::zero();
        } else {
            let fact = diag[i] / lower[i];
            diag[i] = lower[i];
            let temp = diag[i + 1];
            diag[i + 1] = upper[i] - fact * temp;
            if i + 2 < n {
                lower[i] = upper[i + 1];
                upper[i + 1] = -fact * lower[i];
            } else {
                lower[i] = T::zero();
            }
            upper[i] = temp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
    }
    if diag[n - 1] == T::zero() || !diag[n - 1].is_finite() {
        return Err(singular());
    }
    b[n - 1] = b[n - 1] / diag[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - upper[n - 2] * b[n - 1]) / diag[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - upper[i] * b[i + 1] - lower[i] * b[i + 2]) / diag[i];
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(b)
}
