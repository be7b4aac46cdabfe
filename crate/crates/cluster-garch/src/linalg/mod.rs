//! Spectral matrix functions, vectorization operators and the
//! Kronecker-structured derivative matrices used by the correlation
//! parametrizations and the score formulas.

mod frechet;
mod operators;

pub use frechet::{
    gamma_frechet, m_matrix, m_matrix_from_frechet, omega_matrix, oplus_inverse, ExpFrechet,
    OmegaOp,
};
pub use operators::{
    commutation, duplication, elimination_diag, elimination_lower, elimination_upper,
    elimination_vech,
};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigendecomposition of a real symmetric matrix with eigenvalues sorted in
/// descending order and a deterministic sign convention for eigenvectors
/// (largest-magnitude component positive).
#[derive(Debug, Clone)]
pub struct Spectral {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl Spectral {
    /// Reassembles `Q f(Λ) Q'` for a scalar function applied to the
    /// eigenvalues, symmetrizing the result.
    pub fn assemble(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        let m = &scaled * self.vectors.transpose();
        symmetrize(&m)
    }

    /// Applies `Q diag(f(Λ)) Q'` to a vector without forming the matrix.
    pub fn apply(&self, f: impl Fn(f64) -> f64, x: &DVector<f64>) -> DVector<f64> {
        let mut w = self.vectors.transpose() * x;
        for j in 0..w.len() {
            w[j] *= f(self.values[j]);
        }
        &self.vectors * w
    }
}

/// Scalar functions supported by [`matrix_function`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixFn {
    Log,
    Exp,
    Power(f64),
}

/// Replaces a matrix by its symmetric part `(X + X') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetric eigendecomposition with descending eigenvalues and the
/// deterministic sign convention.
pub fn spectral(m: &DMatrix<f64>) -> Result<Spectral> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::InvalidInput("matrix must be square and non-empty".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        // Sign convention: largest-magnitude component positive.
        let mut lead = 0;
        for i in 1..n {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    Ok(Spectral { vectors, values })
}

/// Applies a scalar function to a symmetric matrix through its spectrum.
///
/// `log` and negative or fractional powers require the matrix to be positive
/// definite; a nonpositive eigenvalue yields [`Error::SingularMatrix`].
pub fn matrix_function(m: &DMatrix<f64>, f: MatrixFn) -> Result<DMatrix<f64>> {
    let s = spectral(m)?;
    matrix_function_spectral(&s, f)
}

/// Same as [`matrix_function`] but reusing an existing factorization.
pub fn matrix_function_spectral(s: &Spectral, f: MatrixFn) -> Result<DMatrix<f64>> {
    let needs_positive = match f {
        MatrixFn::Log => true,
        MatrixFn::Exp => false,
        MatrixFn::Power(p) => p < 0.0 || p.fract() != 0.0,
    };
    if needs_positive {
        if let Some(&min) = s
            .values
            .iter()
            .min_by(|a, b| a.partial_cmp(b).expect("finite"))
        {
            if min <= 0.0 {
                return Err(Error::SingularMatrix { eigenvalue: min });
            }
        }
    }
    Ok(match f {
        MatrixFn::Log => s.assemble(f64::ln),
        MatrixFn::Exp => s.assemble(f64::exp),
        MatrixFn::Power(p) => s.assemble(|v| v.powf(p)),
    })
}

/// Stacks the columns of a matrix (column-major `vec`).
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Rebuilds an `n x n` matrix from its column-major `vec`.
pub fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// `vech`: stacks the lower triangle including the diagonal, column-major.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Inverse of [`vech`] for symmetric matrices.
pub fn unvech(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[(i, j)] = v[k];
            out[(j, i)] = v[k];
            k += 1;
        }
    }
    out
}

/// `vecl`: stacks the strictly lower triangle, column-major.
pub fn vecl(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(n * (n - 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Builds a symmetric matrix with strictly-lower entries from `v` and a given
/// diagonal.
pub fn unvecl(v: &DVector<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let n = diag.len();
    let mut out = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        out[(j, j)] = diag[j];
        for i in (j + 1)..n {
            out[(i, j)] = v[k];
            out[(j, i)] = v[k];
            k += 1;
        }
    }
    out
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Kronecker sum `a ⊕ b = a ⊗ I + I ⊗ b` for square `a`, `b` of equal size.
pub fn kron_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    a.kronecker(&eye) + eye.kronecker(b)
}
