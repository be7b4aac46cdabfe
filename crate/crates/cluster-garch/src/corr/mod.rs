//! Correlation matrix parametrizations.
//!
//! The unrestricted map `γ(C) = vecl(log C)` is a bijection between
//! nonsingular n x n correlation matrices and `R^{n(n-1)/2}`; its inverse is
//! computed by a fixed-point iteration on the diagonal of the log-domain
//! matrix. The block parametrization `η` lives in [`block`].

mod block;

pub use block::{
    a_of_eta, a_of_eta_iter, b_matrix, eta_of_block, expand_gamma, pi_a, BlockFrame, BlockSpec,
    CanonicalFactors, CanonicalVariables,
};
pub(crate) use block::pi_a_from_spectral as block_pi_from_spectral;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, matrix_function, spectral, vecl, MatrixFn};
use crate::{Error, Result};

/// A symmetric positive definite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    m: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validates symmetry, the unit diagonal and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidInput("correlation matrix must be square".into()));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "diagonal entry {i} is {} (must be 1)",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidInput("matrix is not symmetric".into()));
                }
                if m[(i, j)].abs() >= 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "off-diagonal ({i},{j}) = {} outside (-1, 1)",
                        m[(i, j)]
                    )));
                }
            }
        }
        let mut sym = linalg::symmetrize(&m);
        for i in 0..n {
            sym[(i, i)] = 1.0;
        }
        let s = spectral(&sym)?;
        let min = s.values[n - 1];
        if min <= 1e-12 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        Ok(CorrelationMatrix { m: sym })
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix { m: DMatrix::identity(n, n) }
    }

    /// Wraps a matrix that is valid by construction (e.g. produced by
    /// [`corr_of_gamma`] or by normalizing an SPD matrix).
    pub(crate) fn from_valid(m: DMatrix<f64>) -> Self {
        CorrelationMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }
}

/// Normalizes an SPD covariance-like matrix to a correlation matrix.
pub fn correlation_from_covariance(s: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let n = s.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        if s[(i, i)] <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: s[(i, i)] });
        }
    }
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
        }
        out[(i, i)] = 1.0;
    }
    CorrelationMatrix::new(out)
}

/// `γ(C) = vecl(log C)`.
pub fn gamma_of_corr(c: &CorrelationMatrix) -> Result<DVector<f64>> {
    let logc = matrix_function(c.as_matrix(), MatrixFn::Log)?;
    Ok(vecl(&logc))
}

/// Number of free parameters of the unrestricted map for dimension `n`.
pub fn gamma_len(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Dimension `n` recovered from the length of a `γ` vector.
pub fn dim_of_gamma_len(d: usize) -> Result<usize> {
    let mut n = 2;
    while n * (n - 1) / 2 < d {
        n += 1;
    }
    if n * (n - 1) / 2 != d {
        return Err(Error::DimensionMismatch(format!(
            "{d} is not of the form n(n-1)/2"
        )));
    }
    Ok(n)
}

const CORR_FP_TOL: f64 = 1e-12;
const CORR_FP_MAX_ITER: usize = 200;

/// Inverse map `C(γ)`: the unique SPD unit-diagonal matrix whose matrix
/// logarithm has off-diagonal entries `γ`.
///
/// The diagonal `x` of the log-domain matrix is adjusted by the fixed-point
/// iteration `x ← x - log diag(exp S(x))` until `exp S(x)` has unit diagonal
/// to within 1e-12.
pub fn corr_of_gamma(gamma: &DVector<f64>, n: usize) -> Result<CorrelationMatrix> {
    if gamma.len() != gamma_len(n) {
        return Err(Error::DimensionMismatch(format!(
            "gamma has length {}, expected {}",
            gamma.len(),
            gamma_len(n)
        )));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("gamma has non-finite entries".into()));
    }
    let mut x = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..CORR_FP_MAX_ITER {
        let s = linalg::unvecl(gamma, &x);
        let expm = matrix_function(&s, MatrixFn::Exp)?;
        residual = (0..n)
            .map(|i| (expm[(i, i)] - 1.0).abs())
            .fold(0.0, f64::max);
        if residual < CORR_FP_TOL {
            let mut out = expm;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                        out[(i, j)] = v;
                        out[(j, i)] = v;
                    }
                }
                out[(i, i)] = 1.0;
            }
            return Ok(CorrelationMatrix::from_valid(out));
        }
        for i in 0..n {
            x[i] -= expm[(i, i)].ln();
        }
    }
    Err(Error::ConvergenceFailure { residual, iterations: CORR_FP_MAX_ITER })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn paper_3x3() -> CorrelationMatrix {
        CorrelationMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.3, 0.5, 1.0, 0.7, 0.3, 0.7, 1.0],
        ))
        .unwrap()
    }

    pub(crate) fn random_gamma(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(gamma_len(n), |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn worked_example_3x3() {
        let g = gamma_of_corr(&paper_3x3()).unwrap();
        // Printed with two decimals in the source material.
        assert_abs_diff_eq!(g[0], 0.53, epsilon = 5e-3);
        assert_abs_diff_eq!(g[1], 0.13, epsilon = 5e-3);
        assert_abs_diff_eq!(g[2], 0.85, epsilon = 5e-3);
    }

    #[test]
    fn gamma_of_identity_is_zero() {
        let g = gamma_of_corr(&CorrelationMatrix::identity(4)).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn zero_gamma_gives_identity() {
        let c = corr_of_gamma(&DVector::zeros(6), 4).unwrap();
        assert!((c.as_matrix() - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn round_trip_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [2usize, 3, 6, 10] {
            for _ in 0..5 {
                let g = random_gamma(n, 1.0, &mut rng);
                let c = corr_of_gamma(&g, n).unwrap();
                let g2 = gamma_of_corr(&c).unwrap();
                assert!((&g2 - &g).norm() < 1e-9, "n = {n}");
                let c2 = corr_of_gamma(&g2, n).unwrap();
                assert!((c2.as_matrix() - c.as_matrix()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn large_magnitude_gamma_stays_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let g = random_gamma(4, 3.0, &mut rng);
        let c = corr_of_gamma(&g, 4).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(c.as_matrix()[(i, i)], 1.0, epsilon = 1e-12);
        }
        let s = spectral(c.as_matrix()).unwrap();
        assert!(s.values[3] > 0.0);
    }

    #[test]
    fn paper_example_recovers_matrix() {
        let g = DVector::from_column_slice(&[0.53, 0.13, 0.85]);
        let c = corr_of_gamma(&g, 3).unwrap();
        let target = paper_3x3();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(
                    c.as_matrix()[(i, j)],
                    target.as_matrix()[(i, j)],
                    epsilon = 5e-3
                );
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert!(CorrelationMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 1.0]);
        assert!(CorrelationMatrix::new(m).is_err());
    }
}
