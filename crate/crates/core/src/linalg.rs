//! Dense linear algebra for the closed-form ELM solve.
//!
//! The SVD itself comes from `nalgebra`; the pseudoinverse and the
//! minimum-norm least-squares solve are built on top of it with a relative
//! singular-value cutoff.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

/// Row/column-indexed dense `f64` matrix.
pub type Matrix = DMatrix<f64>;

/// Default relative cutoff: singular values at or below `1e-12 × σ_max` are
/// treated as zero.
pub const DEFAULT_RCOND: f64 = 1e-12;

const SVD_MAX_ITERATIONS: usize = 10_000;

fn svd(m: &Matrix) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid("matrix must be non-empty"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))
}

/// Reciprocals of the singular values above `rcond × σ_max`, zero elsewhere.
fn inverted_spectrum(singular: &nalgebra::DVector<f64>, rcond: f64) -> Vec<f64> {
    let smax = singular.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    singular
        .iter()
        .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect()
}

/// Moore-Penrose pseudoinverse through the SVD `M = U Σ Vᵀ`, giving
/// `M† = V Σ⁺ Uᵀ`.
pub fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix> {
    if !(rcond >= 0.0) {
        return Err(Error::invalid("rcond must be non-negative"));
    }
    let svd = svd(m)?;
    let inv = inverted_spectrum(&svd.singular_values, rcond);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    // Σ⁺ Uᵀ, scaling row k of Uᵀ by 1/σ_k.
    let mut s_ut = u.transpose();
    for (k, mut row) in s_ut.row_iter_mut().enumerate() {
        row *= inv[k];
    }
    Ok(v_t.transpose() * s_ut)
}

/// Minimum-norm least-squares solution of `G β = T`, i.e. `β = G† T`.
pub fn least_squares_solve(g: &Matrix, t: &Matrix) -> Result<Matrix> {
    least_squares_solve_with(g, t, DEFAULT_RCOND)
}

pub fn least_squares_solve_with(g: &Matrix, t: &Matrix, rcond: f64) -> Result<Matrix> {
    if g.nrows() != t.nrows() {
        return Err(Error::invalid(format!(
            "G has {} rows but T has {}",
            g.nrows(),
            t.nrows()
        )));
    }
    let svd = svd(g)?;
    let inv = inverted_spectrum(&svd.singular_values, rcond);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    let mut coeffs = u.transpose() * t;
    for (k, mut row) in coeffs.row_iter_mut().enumerate() {
        row *= inv[k];
    }
    Ok(v_t.transpose() * coeffs)
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
