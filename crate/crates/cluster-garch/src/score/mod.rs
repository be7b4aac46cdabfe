//! Closed-form scores and Fisher information matrices of the correlation
//! log-likelihoods, with respect to `γ = vecl(log C)` for a general
//! correlation matrix and `η = vech(C̃)` for a block matrix.
//!
//! Each context precomputes everything that depends on the correlation
//! parameters but not on the observation (the restriction matrix `M` or
//! `Π_A`, and the full information matrix), so repeated evaluations at one
//! parameter point only cost the observation-dependent score vector.

mod block;

pub use block::BlockScoreCtx;

use nalgebra::{DMatrix, DVector};

use crate::corr::CorrelationMatrix;
use crate::dist::{
    loglik_convt_precomputed, loglik_gaussian_precomputed, loglik_mvt_precomputed,
    ConvolutionSpec, ModelDistribution,
};
use crate::linalg::{
    self, m_matrix_from_frechet, spectral, vec_of, ExpFrechet, OmegaOp, Spectral,
};
use crate::{Error, Result};

/// Score vector, Fisher information and its diagonal (the scaling used by
/// the score-driven recursions) for one observation.
#[derive(Debug, Clone)]
pub struct ScoreResult {
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
    pub scale: DVector<f64>,
}

impl ScoreResult {
    pub(crate) fn new(score: DVector<f64>, information: DMatrix<f64>) -> Self {
        let scale = information.diagonal();
        ScoreResult { score, information, scale }
    }

    pub fn dim(&self) -> usize {
        self.score.len()
    }
}

/// The scaled innovation `ε_i = ∇_i / I_ii`.
pub fn scaled_innovation(r: &ScoreResult) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(r.dim());
    for i in 0..r.dim() {
        if !(r.scale[i] > 0.0) {
            return Err(Error::DegenerateInformation { index: i, value: r.scale[i] });
        }
        out[i] = r.score[i] / r.scale[i];
    }
    Ok(out)
}

/// One filtering step's likelihood and score bundle.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub loglik: f64,
    pub score: ScoreResult,
}

/// Score context for an unrestricted correlation matrix (dense derivative
/// matrices; intended for moderate n).
pub struct GeneralScoreCtx {
    n: usize,
    spect: Spectral,
    log_det: f64,
    inv: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    /// `M = ∂vec(C)/∂γ'`.
    m: DMatrix<f64>,
    kind: GeneralKind,
    information: DMatrix<f64>,
}

enum GeneralKind {
    /// Multivariate t (`dof = ∞` encoded as `None` for the Gaussian case).
    Elliptic { dof: Option<f64> },
    /// Convolution-t with groups; `p_cols[g]` holds `P_g`.
    Convolution {
        spec: ConvolutionSpec,
        p: DMatrix<f64>,
        /// `Ω' M` is not needed; the score uses `M' Ω' v`; store `(Ω M)` for
        /// the information and apply `Ω'` through the operator each step.
        omega: OmegaOp,
    },
}

impl GeneralScoreCtx {
    pub fn new(
        c: &CorrelationMatrix,
        dist: &ModelDistribution,
        block_for_dist: Option<&crate::corr::BlockSpec>,
    ) -> Result<Self> {
        let n = c.dim();
        let spect = spectral(c.as_matrix())?;
        let min = spect.values[n - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        let log_det: f64 = spect.values.iter().map(|v| v.ln()).sum();
        let inv = spect.assemble(|v| 1.0 / v);
        let inv_sqrt = spect.assemble(|v| 1.0 / v.sqrt());
        let frechet = ExpFrechet::from_spd_spectral(&spect)?;
        let m = m_matrix_from_frechet(&frechet)?;

        match dist {
            ModelDistribution::Gaussian | ModelDistribution::MultivariateT { .. } => {
                let dof = match dist {
                    ModelDistribution::MultivariateT { dof } => {
                        if !(*dof > 2.0) {
                            return Err(Error::InvalidSpec(format!(
                                "dof must exceed 2 (got {dof})"
                            )));
                        }
                        Some(*dof)
                    }
                    _ => None,
                };
                // I = 1/4 M' [φ C⊗⁻¹ H_n + (φ-1) vec(C⁻¹)vec(C⁻¹)'] M
                //   = φ/2 M' C⊗⁻¹ M + (φ-1)/4 (M'vec(C⁻¹))(M'vec(C⁻¹))'.
                let phi = match dof {
                    Some(v) => (v + n as f64) / (v + n as f64 + 2.0),
                    None => 1.0,
                };
                let cinv_kron = inv.kronecker(&inv);
                let mtci = m.transpose() * cinv_kron * &m;
                let mvi = m.transpose() * vec_of(&inv);
                let information = linalg::symmetrize(
                    &(0.5 * phi * mtci + 0.25 * (phi - 1.0) * &mvi * mvi.transpose()),
                );
                Ok(GeneralScoreCtx {
                    n,
                    spect,
                    log_det,
                    inv,
                    inv_sqrt,
                    m,
                    kind: GeneralKind::Elliptic { dof },
                    information,
                })
            }
            _ => {
                let spec = dist
                    .convolution_spec(n, block_for_dist)?
                    .expect("convolution tags produce a spec");
                let p = spec.p_matrix();
                let omega = OmegaOp::from_spd_spectral(&spect)?;
                // I = (Ω M)' (K_n + Υ_G) (Ω M).
                let om = omega.to_matrix() * &m;
                let upsilon = convolution_upsilon(&spec, &p);
                let kn = linalg::commutation(n);
                let information =
                    linalg::symmetrize(&(om.transpose() * (kn + upsilon) * &om));
                Ok(GeneralScoreCtx {
                    n,
                    spect,
                    log_det,
                    inv,
                    inv_sqrt,
                    m,
                    kind: GeneralKind::Convolution { spec, p, omega },
                    information,
                })
            }
        }
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn state_dim(&self) -> usize {
        self.m.ncols()
    }

    /// Log-likelihood and score at one observation.
    pub fn eval(&self, z: &DVector<f64>) -> Result<StepEval> {
        if z.len() != self.n {
            return Err(Error::DimensionMismatch("observation length".into()));
        }
        match &self.kind {
            GeneralKind::Elliptic { dof } => {
                let cz = &self.inv * z;
                let maha = z.dot(&cz);
                let (loglik, w) = match dof {
                    Some(nu) => (
                        loglik_mvt_precomputed(self.n, self.log_det, maha, *nu),
                        (nu + self.n as f64) / (nu - 2.0 + maha),
                    ),
                    None => (loglik_gaussian_precomputed(self.n, self.log_det, maha), 1.0),
                };
                // ∇ = 1/2 M' vec(W (C⁻¹Z)(C⁻¹Z)' - C⁻¹).
                let inner = w * &cz * cz.transpose() - &self.inv;
                let score = 0.5 * self.m.transpose() * vec_of(&inner);
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
            GeneralKind::Convolution { spec, p, omega } => {
                let u = &self.inv_sqrt * z;
                let v = p.transpose() * &u;
                let (loglik, weights) =
                    loglik_convt_precomputed(self.log_det, &v, spec)?;
                // ∇ = M' Ω' vec((Σ_g W_g P_g V_g) U' - I).
                let mut wv = v;
                for g in 0..spec.num_groups() {
                    let off = spec.offset(g);
                    for i in 0..spec.partition()[g] {
                        wv[off + i] *= weights[g];
                    }
                }
                let pwv = p * wv;
                let mut inner = &pwv * u.transpose();
                for i in 0..self.n {
                    inner[(i, i)] -= 1.0;
                }
                let score = self.m.transpose() * vec_of(&omega.apply_transpose(&inner));
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
        }
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spect
    }
}

/// `Υ_G = Σ_g Ψ_g` of the convolution-t information matrix, dense.
fn convolution_upsilon(spec: &ConvolutionSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.dim();
    let kn = linalg::commutation(n);
    let mut upsilon = DMatrix::zeros(n * n, n * n);
    for g in 0..spec.num_groups() {
        let off = spec.offset(g);
        let m = spec.partition()[g];
        let nu = spec.dofs()[g];
        let mf = m as f64;
        let phi = (nu + mf) / (nu + mf + 2.0);
        let psi = phi * nu / (nu - 2.0);
        let pg = p.columns(off, m);
        let jg = &pg * pg.transpose();
        let eye = DMatrix::identity(n, n);
        let jg_kron = jg.kronecker(&jg);
        let vec_jg = vec_of(&jg);
        upsilon += psi * eye.kronecker(&jg)
            + (phi - psi) * &jg_kron
            + (phi - 1.0) * (&jg_kron * &kn + &vec_jg * vec_jg.transpose());
    }
    upsilon
}
