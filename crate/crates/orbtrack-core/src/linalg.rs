//! Small shared numerical helpers: guarded Cholesky factorization,
//! symmetrization, and angle wrapping.

use nalgebra::SMatrix;

use crate::error::{Error, Result};

/// Relative jitter ladder applied to the diagonal before declaring a
/// factorization failure. Scaled by `trace/n` so the ladder is unit-free.
const JITTER_LADDER: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Lower-triangular Cholesky factor of a symmetric PSD matrix.
///
/// A plain factorization is attempted first; on failure the diagonal is
/// inflated by an escalating jitter (1e-12 → 1e-8 relative to the mean
/// diagonal magnitude) before giving up. This tolerates the slightly
/// indefinite covariances that long filter runs accumulate, including the
/// exactly-zero matrix (factored as jitter·I).
pub fn cholesky_lower<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical("non-finite entries in covariance".into()));
    }
    let sym = symmetrize(m);
    if let Some(chol) = nalgebra::Cholesky::new(sym) {
        return Ok(chol.l());
    }
    let trace = sym.trace();
    let scale = if trace > 0.0 { trace / N as f64 } else { 1.0 };
    for jitter in JITTER_LADDER {
        let bumped = sym + SMatrix::<f64, N, N>::identity() * (jitter * scale);
        if let Some(chol) = nalgebra::Cholesky::new(bumped) {
            return Ok(chol.l());
        }
    }
    Err(Error::Numerical(format!(
        "covariance not positive semi-definite after maximum jitter (trace {trace:.3e})"
    )))
}

/// Solve `m x = b` for symmetric positive-definite `m` without jitter.
/// Fails if `m` is singular; used where an exact inverse is part of the
/// contract (measurement noise, NEES covariance).
pub fn solve_spd<const N: usize, const C: usize>(
    m: &SMatrix<f64, N, N>,
    b: &SMatrix<f64, N, C>,
) -> Result<SMatrix<f64, N, C>> {
    let chol = nalgebra::Cholesky::new(*m)
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let mut x = *b;
    chol.solve_mut(&mut x);
    Ok(x)
}

/// Force exact symmetry: (M + Mᵀ)/2.
pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Wrap an angle to the half-open interval (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a.rem_euclid(two_pi); // [0, 2π)
    if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}
