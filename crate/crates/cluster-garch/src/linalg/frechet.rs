//! Derivative matrices of spectral matrix functions: the Fréchet derivative
//! `Γ = ∂vec(C)/∂vec(log C)'`, the Kronecker-sum inverse `(S ⊕ I)⁻¹`, the
//! square-root derivative composite `Ω` and the correlation restriction
//! matrix `M = ∂vec(C)/∂γ'`.
//!
//! Every object comes in two forms: an operator that applies the linear map
//! through k x k algebra, and a dense materialization used on the
//! low-dimensional unrestricted path. The operators are what keeps the block
//! model free of n² x n² intermediates.

use nalgebra::{DMatrix, DVector};

use super::operators::{elimination_diag, elimination_lower, elimination_upper};
use super::{spectral, Spectral};
use crate::{Error, Result};

/// Relative gap under which two log-eigenvalues are treated as coincident and
/// the divided difference collapses to its limit `e^λ`.
const EIG_COINCIDENCE_RTOL: f64 = 1e-10;

/// Fréchet derivative of the matrix exponential evaluated at `log C`,
/// i.e. the linear map `Γ = ∂vec(C)/∂vec(log C)'`.
///
/// Holds the shared eigenvectors of `C` and `log C` together with the
/// divided-difference table `δ_ij` of `exp` at the log-eigenvalues.
#[derive(Debug, Clone)]
pub struct ExpFrechet {
    q: DMatrix<f64>,
    /// Eigenvalues of `log C`, descending.
    log_values: DVector<f64>,
    /// δ_ij table (symmetric).
    delta: DMatrix<f64>,
}

fn divided_difference_exp(li: f64, lj: f64) -> f64 {
    if (li - lj).abs() < EIG_COINCIDENCE_RTOL * li.abs().max(1.0) {
        ((li + lj) / 2.0).exp()
    } else {
        (li.exp() - lj.exp()) / (li - lj)
    }
}

impl ExpFrechet {
    /// Builds the operator from the spectral factorization of the *positive
    /// definite* matrix `C`.
    pub fn from_spd_spectral(s: &Spectral) -> Result<Self> {
        let min = s.values[s.values.len() - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        let log_values = s.values.map(f64::ln);
        Ok(Self::from_log_eigs(s.vectors.clone(), log_values))
    }

    /// Builds the operator from the eigendecomposition of `log C`.
    pub fn from_log_eigs(q: DMatrix<f64>, log_values: DVector<f64>) -> Self {
        let n = log_values.len();
        let delta = DMatrix::from_fn(n, n, |i, j| {
            divided_difference_exp(log_values[i], log_values[j])
        });
        ExpFrechet { q, log_values, delta }
    }

    pub fn dim(&self) -> usize {
        self.log_values.len()
    }

    /// Eigenvalues of `C` (exp of the stored log-eigenvalues).
    pub fn exp_values(&self) -> DVector<f64> {
        self.log_values.map(f64::exp)
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Applies `Γ` to a matrix direction: `Γ vec(E)` as a matrix.
    pub fn apply(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.q.transpose() * e * &self.q;
        let scaled = w.component_mul(&self.delta);
        &self.q * scaled * self.q.transpose()
    }

    /// Applies `Γ⁻¹` (the derivative of the matrix logarithm).
    pub fn apply_inv(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.q.transpose() * e * &self.q;
        let scaled = w.component_div(&self.delta);
        &self.q * scaled * self.q.transpose()
    }

    /// Dense `n² x n²` materialization of `Γ`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.materialize(false)
    }

    /// Dense `n² x n²` materialization of `Γ⁻¹`.
    pub fn to_matrix_inv(&self) -> DMatrix<f64> {
        self.materialize(true)
    }

    fn materialize(&self, invert: bool) -> DMatrix<f64> {
        let n = self.dim();
        let qq = self.q.kronecker(&self.q);
        let mut scaled = qq.clone();
        for a in 0..n {
            for b in 0..n {
                let d = if invert {
                    1.0 / self.delta[(b, a)]
                } else {
                    self.delta[(b, a)]
                };
                let p = a * n + b;
                for r in 0..n * n {
                    scaled[(r, p)] *= d;
                }
            }
        }
        scaled * qq.transpose()
    }

    /// `E_d Γ E_d'`: the n x n matrix of `Γ` restricted to diagonal
    /// positions, the only system the correlation restriction solves densely.
    pub fn diag_block(&self) -> DMatrix<f64> {
        let n = self.dim();
        // (Γ)_{(ii),(jj)} = Σ_{a,b} q_ia q_ib δ_ab q_ja q_jb
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += self.q[(i, a)]
                            * self.q[(i, b)]
                            * self.delta[(a, b)]
                            * self.q[(j, a)]
                            * self.q[(j, b)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

/// Fréchet derivative of the matrix exponential for a correlation matrix.
pub fn gamma_frechet(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = spectral(c)?;
    Ok(ExpFrechet::from_spd_spectral(&s)?.to_matrix())
}

/// Closed-form `(S ⊕ I)⁻¹` through the spectral factorization of `S`.
///
/// The `n² x n²` result is assembled from the eigenbasis; no dense
/// factorization of the Kronecker sum is ever performed.
pub fn oplus_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sp = spectral(s)?;
    let n = sp.values.len();
    for i in 0..n {
        for j in 0..n {
            let sum = sp.values[i] + sp.values[j];
            if sum.abs() < 1e-12 * sp.values[i].abs().max(1.0) {
                return Err(Error::SingularMatrix { eigenvalue: sum });
            }
        }
    }
    let qq = sp.vectors.kronecker(&sp.vectors);
    let mut scaled = qq.clone();
    for a in 0..n {
        for b in 0..n {
            let d = 1.0 / (sp.values[a] + sp.values[b]);
            let p = a * n + b;
            for r in 0..n * n {
                scaled[(r, p)] *= d;
            }
        }
    }
    Ok(scaled * qq.transpose())
}

/// The operator `Ω = (I ⊗ C^{-1/2}) (C^{1/2} ⊕ I)⁻¹` built from one spectral
/// factorization of the SPD matrix `C`.
#[derive(Debug, Clone)]
pub struct OmegaOp {
    q: DMatrix<f64>,
    sqrt_values: DVector<f64>,
    /// `g_ij = 1 / (√λ_i + √λ_j)`.
    g: DMatrix<f64>,
}

impl OmegaOp {
    pub fn from_spd_spectral(s: &Spectral) -> Result<Self> {
        let min = s.values[s.values.len() - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        let sqrt_values = s.values.map(f64::sqrt);
        let n = sqrt_values.len();
        let g = DMatrix::from_fn(n, n, |i, j| 1.0 / (sqrt_values[i] + sqrt_values[j]));
        Ok(OmegaOp { q: s.vectors.clone(), sqrt_values, g })
    }

    pub fn from_spd(c: &DMatrix<f64>) -> Result<Self> {
        Self::from_spd_spectral(&spectral(c)?)
    }

    /// `Ω vec(X)` as a matrix.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.q.transpose() * x * &self.q;
        let mut scaled = w.component_mul(&self.g);
        for i in 0..self.q.nrows() {
            let inv = 1.0 / self.sqrt_values[i];
            for j in 0..self.q.ncols() {
                scaled[(i, j)] *= inv;
            }
        }
        &self.q * scaled * self.q.transpose()
    }

    /// `Ω' vec(X)` as a matrix.
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = self.q.transpose() * x * &self.q;
        for i in 0..self.q.nrows() {
            let inv = 1.0 / self.sqrt_values[i];
            for j in 0..self.q.ncols() {
                w[(i, j)] *= inv;
            }
        }
        let scaled = w.component_mul(&self.g);
        &self.q * scaled * self.q.transpose()
    }

    /// Dense `n² x n²` materialization.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.q.nrows();
        let qq = self.q.kronecker(&self.q);
        let mut scaled = qq.clone();
        for a in 0..n {
            for b in 0..n {
                let d = self.g[(a, b)] / self.sqrt_values[b];
                let p = a * n + b;
                for r in 0..n * n {
                    scaled[(r, p)] *= d;
                }
            }
        }
        scaled * qq.transpose()
    }
}

/// Composite derivative `Ω = (I ⊗ C^{-1/2})(C^{1/2} ⊕ I)⁻¹` as a dense
/// matrix, reusing a single spectral factorization of `C`.
pub fn omega_matrix(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(OmegaOp::from_spd(c)?.to_matrix())
}

/// `M = ∂vec(C)/∂γ'` for a nonsingular correlation matrix `C`, from the
/// spectral factorization of `C`.
///
/// `M = (E_l + E_u)' E_l (I - Γ E_d' (E_d Γ E_d')⁻¹ E_d) Γ (E_l + E_u)'`;
/// only the n x n diagonal-restriction system is solved densely.
pub fn m_matrix_from_frechet(fr: &ExpFrechet) -> Result<DMatrix<f64>> {
    let n = fr.dim();
    let d = n * (n - 1) / 2;
    let gamma = fr.to_matrix();
    let el = elimination_lower(n);
    let eu = elimination_upper(n);
    let ed = elimination_diag(n);
    let elu_t = (&el + &eu).transpose();

    // Γ (E_l + E_u)'
    let g_lu = &gamma * &elu_t;
    // E_d Γ E_d' and its dense solve against E_d Γ (E_l+E_u)'
    let diag_block = fr.diag_block();
    let rhs = &ed * &g_lu;
    let sol = diag_block
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularMatrix { eigenvalue: 0.0 })?;
    // (I - Γ E_d' (E_d Γ E_d')⁻¹ E_d) Γ (E_l+E_u)'
    let correction = (&gamma * ed.transpose()) * sol;
    let inner = g_lu - correction;
    let m = elu_t * (el * inner);
    debug_assert_eq!(m.ncols(), d);
    Ok(m)
}

/// Convenience wrapper building [`m_matrix_from_frechet`] from `C` directly.
pub fn m_matrix(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = spectral(c)?;
    m_matrix_from_frechet(&ExpFrechet::from_spd_spectral(&s)?)
}
