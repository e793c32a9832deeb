//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a symmetric matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(a.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Inverse of a symmetric positive-definite matrix, rejecting ill-conditioned input.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = spd_condition(a)?;
    if !(cond < MAX_CONDITION) {
        return Err(Error::Degenerate(format!("{what} has condition number {cond:e}")));
    }
    let inv = cholesky(a, what)?.inverse();
    Ok(symmetrize(&inv))
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(cholesky(a, what)?.solve(b))
}

/// Ratio of largest to smallest eigenvalue; infinite when not positive definite.
pub fn spd_condition(a: &DMatrix<f64>) -> Result<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !max.is_finite() || !min.is_finite() {
        return Err(Error::InvalidState("matrix has non-finite entries".into()));
    }
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Frobenius inner product ⟨A, B⟩ = tr(AᵀB).
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn ones(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0)
}

/// Asserts a square matrix of the given size.
pub(crate) fn check_square(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: a.nrows() });
    }
    if a.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: a.ncols() });
    }
    Ok(())
}

pub(crate) fn check_len(v: &DVector<f64>, d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
    }
    Ok(())
}

/// `(1 − e^{−q t}) / q`, continuous through `q = 0`.
pub fn one_minus_exp_over(q: f64, t: f64) -> f64 {
    if (q * t).abs() < 1e-8 {
        t - q * t * t / 2.0 + q * q * t * t * t / 6.0
    } else {
        -(-q * t).exp_m1() / q
    }
}

/// `(e^{q t} − 1) / q`, continuous through `q = 0`.
pub fn exp_minus_one_over(q: f64, t: f64) -> f64 {
    if (q * t).abs() < 1e-8 {
        t + q * t * t / 2.0 + q * q * t * t * t / 6.0
    } else {
        (q * t).exp_m1() / q
    }
}

/// `(e^{q t} − 1 − q t) / q²`, continuous through `q = 0`.
pub fn exp_minus_linear_over_sq(q: f64, t: f64) -> f64 {
    let qt = q * t;
    if qt.abs() < 1e-4 {
        // Series t²/2 + q t³/6 + q² t⁴/24 + q³ t⁵/120.
        t * t * (0.5 + qt / 6.0 + qt * qt / 24.0 + qt * qt * qt / 120.0)
    } else {
        (qt.exp_m1() - qt) / (q * q)
    }
}
