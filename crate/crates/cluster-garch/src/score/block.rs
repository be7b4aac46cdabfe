//! Scores and Fisher information for block correlation matrices, with
//! respect to `η = vech(C̃)`. All algebra runs in K x K (or K² x d) objects:
//! nothing of size n² x n² is ever formed.

use nalgebra::{DMatrix, DVector};

use super::{ScoreResult, StepEval};
use crate::corr::{BlockFrame, CanonicalFactors, CanonicalVariables};
use crate::dist::{t_const, ModelDistribution};
use crate::linalg::{self, matrix_function_spectral, vec_of, MatrixFn, OmegaOp, Spectral};
use crate::{Error, Result};

/// Precomputed score machinery for one `(A, λ)` parameter point and one
/// distribution tag.
pub struct BlockScoreCtx<'a> {
    factors: CanonicalFactors,
    frame: &'a BlockFrame,
    dist: ModelDistribution,
    a_spec: Spectral,
    a_inv: DMatrix<f64>,
    a_inv_sqrt: DMatrix<f64>,
    omega: OmegaOp,
    log_det: f64,
    /// `Π_A = ∂vec(A)/∂η'` (K² x d).
    pi: DMatrix<f64>,
    /// Rows of `Π_A` at the diagonal positions (K x d), i.e. `E_d Π_A`.
    pi_diag: DMatrix<f64>,
    information: DMatrix<f64>,
}

fn diag_pos(k: usize, kk: usize) -> usize {
    k * kk + k
}

impl<'a> BlockScoreCtx<'a> {
    pub fn new(
        factors: CanonicalFactors,
        frame: &'a BlockFrame,
        dist: &ModelDistribution,
    ) -> Result<Self> {
        let spec = factors.spec().clone();
        let kk = spec.num_clusters();
        let n = spec.total();
        validate_dist(dist, kk, n)?;
        let a_spec = factors.a_spectral()?;
        let min = a_spec.values[kk - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        let a_inv = a_spec.assemble(|v| 1.0 / v);
        let a_inv_sqrt = a_spec.assemble(|v| 1.0 / v.sqrt());
        let omega = OmegaOp::from_spd_spectral(&a_spec)?;
        let log_det = factors.log_det()?;
        let pi = crate::corr::block_pi_from_spectral(&factors, &a_spec)?;
        let d = pi.ncols();
        let mut pi_diag = DMatrix::zeros(kk, d);
        for k in 0..kk {
            for j in 0..d {
                pi_diag[(k, j)] = pi[(diag_pos(k, kk), j)];
            }
        }
        let mut ctx = BlockScoreCtx {
            factors,
            frame,
            dist: dist.clone(),
            a_spec,
            a_inv,
            a_inv_sqrt,
            omega,
            log_det,
            pi,
            pi_diag,
            information: DMatrix::zeros(d, d),
        };
        ctx.information = ctx.build_information()?;
        Ok(ctx)
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn state_dim(&self) -> usize {
        self.pi.ncols()
    }

    pub fn factors(&self) -> &CanonicalFactors {
        &self.factors
    }

    /// `Π_A' v` for a K²-vector given as a K x K matrix.
    fn project(&self, inner: &DMatrix<f64>) -> DVector<f64> {
        self.pi.transpose() * vec_of(inner)
    }

    /// Adds `1/2 E_d' s` (in vec(A) space) projected through `Π_A`.
    fn project_diag(&self, s: &DVector<f64>) -> DVector<f64> {
        self.pi_diag.transpose() * s
    }

    /// Log-likelihood and score for one observation.
    pub fn eval(&self, z: &DVector<f64>) -> Result<StepEval> {
        let vars = CanonicalVariables::rotate_with_spectral(
            z,
            &self.factors,
            self.frame,
            &self.a_spec,
        )?;
        let spec = self.factors.spec();
        let kk = spec.num_clusters();
        let n = spec.total();
        let lambda = self.factors.lambda();
        let sizes = spec.sizes();

        let mut lambda_log_term = 0.0;
        for k in 0..kk {
            lambda_log_term += (sizes[k] as f64 - 1.0) * lambda[k].ln();
        }

        match &self.dist {
            ModelDistribution::Gaussian | ModelDistribution::MultivariateT { .. } => {
                let dof = match &self.dist {
                    ModelDistribution::MultivariateT { dof } => Some(*dof),
                    _ => None,
                };
                let maha = vars.mahalanobis();
                let (loglik, w) = match dof {
                    Some(nu) => (
                        t_const(nu, n) - 0.5 * self.log_det
                            - 0.5 * (nu + n as f64) * (maha / (nu - 2.0)).ln_1p(),
                        (nu + n as f64) / (nu - 2.0 + maha),
                    ),
                    None => (
                        -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
                            - 0.5 * self.log_det
                            - 0.5 * maha,
                        1.0,
                    ),
                };
                // ∇_A = 1/2 A⊗^{-1/2} [W vec(X0 X0') - vec(I)] + 1/2 E_d'S.
                let mut inner = w * &vars.x0 * vars.x0.transpose();
                for k in 0..kk {
                    inner[(k, k)] -= 1.0;
                }
                let inner = 0.5 * &self.a_inv_sqrt * inner * &self.a_inv_sqrt;
                let s = DVector::from_fn(kk, |k, _| {
                    let nk = sizes[k] as f64;
                    (1.0 - w * vars.xs[k].norm_squared() / (nk - 1.0)) / lambda[k]
                });
                let score = self.project(&inner) + 0.5 * self.project_diag(&s);
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
            ModelDistribution::ClusterT { dofs } => {
                let mut loglik = -0.5 * self.log_det;
                let mut weighted_x0 = DVector::zeros(kk);
                let mut s = DVector::zeros(kk);
                for k in 0..kk {
                    let nk = sizes[k] as f64;
                    let nu = dofs[k];
                    let qk = vars.x0[k] * vars.x0[k] + vars.xs[k].norm_squared();
                    loglik += t_const(nu, sizes[k])
                        - 0.5 * (nk - 1.0) * lambda[k].ln()
                        - 0.5 * (nu + nk) * (qk / (nu - 2.0)).ln_1p();
                    let w_k = (nu + nk) / (nu - 2.0 + qk);
                    weighted_x0[k] = w_k * vars.x0[k];
                    s[k] = (1.0 - w_k * vars.xs[k].norm_squared() / (nk - 1.0)) / lambda[k];
                }
                // ∇_A = Ω' vec((W∘X0) X0' - I) + 1/2 E_d'S.
                let mut inner = &weighted_x0 * vars.x0.transpose();
                for k in 0..kk {
                    inner[(k, k)] -= 1.0;
                }
                let rotated = self.omega.apply_transpose(&inner);
                let score = self.project(&rotated) + 0.5 * self.project_diag(&s);
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
            ModelDistribution::HeteroT { dofs } => {
                let u = self.frame.unrotate(&vars.x0, &vars.xs);
                let mut loglik = -0.5 * self.log_det;
                let mut h = DVector::zeros(kk);
                let mut s = DVector::zeros(kk);
                for k in 0..kk {
                    let nk = sizes[k] as f64;
                    let off = spec.offset(k);
                    let sqrt_nk = nk.sqrt();
                    let mut wsum = 0.0;
                    let mut ssum = 0.0;
                    for i in 0..sizes[k] {
                        let nu = dofs[off + i];
                        let ui = u[off + i];
                        loglik += t_const(nu, 1)
                            - 0.5 * (nu + 1.0) * (ui * ui / (nu - 2.0)).ln_1p();
                        let w = (nu + 1.0) / (nu - 2.0 + ui * ui);
                        wsum += w * ui;
                        ssum += w * ui * (ui - vars.x0[k] / sqrt_nk);
                    }
                    loglik -= 0.5 * (nk - 1.0) * lambda[k].ln();
                    h[k] = wsum / sqrt_nk;
                    s[k] = ((nk - 1.0) - ssum) / ((nk - 1.0) * lambda[k]);
                }
                let mut inner = &h * vars.x0.transpose();
                for k in 0..kk {
                    inner[(k, k)] -= 1.0;
                }
                let rotated = self.omega.apply_transpose(&inner);
                let score = self.project(&rotated) + 0.5 * self.project_diag(&s);
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
            ModelDistribution::CanonicalBlockT { dof0, dofs } => {
                let q0 = vars.x0.norm_squared();
                let mut loglik = -0.5 * self.log_det;
                loglik += t_const(*dof0, kk)
                    - 0.5 * (dof0 + kk as f64) * (q0 / (dof0 - 2.0)).ln_1p();
                let w0 = (dof0 + kk as f64) / (dof0 - 2.0 + q0);
                let mut s = DVector::zeros(kk);
                for k in 0..kk {
                    let nk = sizes[k] as f64;
                    let nu = dofs[k];
                    let qk = vars.xs[k].norm_squared();
                    loglik += t_const(nu, sizes[k] - 1)
                        - 0.5 * (nk - 1.0) * lambda[k].ln()
                        - 0.5 * (nu + nk - 1.0) * (qk / (nu - 2.0)).ln_1p();
                    let w_k = (nu + nk - 1.0) / (nu - 2.0 + qk);
                    s[k] = (1.0 - w_k * qk / (nk - 1.0)) / lambda[k];
                }
                let mut inner = w0 * &vars.x0 * vars.x0.transpose();
                for k in 0..kk {
                    inner[(k, k)] -= 1.0;
                }
                let inner = 0.5 * &self.a_inv_sqrt * inner * &self.a_inv_sqrt;
                let score = self.project(&inner) + 0.5 * self.project_diag(&s);
                Ok(StepEval {
                    loglik,
                    score: ScoreResult::new(score, self.information.clone()),
                })
            }
        }
    }

    /// `Π' A⊗⁻¹ Π` and `Π' vec(A⁻¹)`: the elliptic information blocks.
    fn elliptic_pieces(&self) -> (DMatrix<f64>, DVector<f64>) {
        let kk = self.factors.spec().num_clusters();
        let d = self.pi.ncols();
        let mut b = DMatrix::zeros(kk * kk, d);
        for j in 0..d {
            let col = self.pi.column(j);
            let x = DMatrix::from_fn(kk, kk, |r, c| col[c * kk + r]);
            let bx = &self.a_inv * x * &self.a_inv;
            for idx in 0..kk * kk {
                b[(idx, j)] = bx[idx];
            }
        }
        let quad = self.pi.transpose() * b;
        let w1 = self.pi.transpose() * vec_of(&self.a_inv);
        (quad, w1)
    }

    /// `B = Ω_A Π` column-wise through the operator.
    fn omega_pi(&self) -> DMatrix<f64> {
        let kk = self.factors.spec().num_clusters();
        let d = self.pi.ncols();
        let mut b = DMatrix::zeros(kk * kk, d);
        for j in 0..d {
            let col = self.pi.column(j);
            let x = DMatrix::from_fn(kk, kk, |r, c| col[c * kk + r]);
            let bx = self.omega.apply(&x);
            for idx in 0..kk * kk {
                b[(idx, j)] = bx[idx];
            }
        }
        b
    }

    fn build_information(&self) -> Result<DMatrix<f64>> {
        let spec = self.factors.spec();
        let kk = spec.num_clusters();
        let sizes = spec.sizes();
        let lambda = self.factors.lambda();
        let d = self.pi.ncols();

        match &self.dist {
            ModelDistribution::Gaussian | ModelDistribution::MultivariateT { .. } => {
                let n = spec.total() as f64;
                let phi = match &self.dist {
                    ModelDistribution::MultivariateT { dof } => (dof + n) / (dof + n + 2.0),
                    _ => 1.0,
                };
                let (quad, w1) = self.elliptic_pieces();
                let xi = DVector::from_fn(kk, |k, _| 1.0 / lambda[k]);
                let cap_xi = DVector::from_fn(kk, |k, _| {
                    1.0 / (lambda[k] * lambda[k] * (sizes[k] as f64 - 1.0))
                });
                let w2 = self.pi_diag.transpose() * &xi;
                let mut info = 0.5 * phi * quad
                    + 0.25 * (phi - 1.0) * &w1 * w1.transpose()
                    + 0.25 * (phi - 1.0) * &w2 * w2.transpose()
                    + 0.25 * (1.0 - phi) * (&w1 * w2.transpose() + &w2 * w1.transpose());
                let scaled = DMatrix::from_fn(kk, d, |k, j| cap_xi[k] * self.pi_diag[(k, j)]);
                info += 0.5 * phi * self.pi_diag.transpose() * scaled;
                Ok(linalg::symmetrize(&info))
            }
            ModelDistribution::CanonicalBlockT { dof0, dofs } => {
                let phi0 = (dof0 + kk as f64) / (dof0 + kk as f64 + 2.0);
                let (quad, w1) = self.elliptic_pieces();
                let cap_xi = DVector::from_fn(kk, |k, _| {
                    let nk = sizes[k] as f64;
                    let phi_k = (dofs[k] + nk - 1.0) / (dofs[k] + nk + 1.0);
                    2.0 * phi_k / (lambda[k] * lambda[k] * (nk - 1.0))
                        + (phi_k - 1.0) / (lambda[k] * lambda[k])
                });
                let mut info = 0.5 * phi0 * quad + 0.25 * (phi0 - 1.0) * &w1 * w1.transpose();
                let scaled = DMatrix::from_fn(kk, d, |k, j| cap_xi[k] * self.pi_diag[(k, j)]);
                info += 0.25 * self.pi_diag.transpose() * scaled;
                Ok(linalg::symmetrize(&info))
            }
            ModelDistribution::ClusterT { dofs } => {
                let mut phi = DVector::zeros(kk);
                let mut psi = DVector::zeros(kk);
                for k in 0..kk {
                    let nk = sizes[k] as f64;
                    phi[k] = (dofs[k] + nk) / (dofs[k] + nk + 2.0);
                    psi[k] = phi[k] * dofs[k] / (dofs[k] - 2.0);
                }
                let cap_xi = DVector::from_fn(kk, |k, _| {
                    let nk = sizes[k] as f64;
                    (phi[k] - 1.0) / (lambda[k] * lambda[k])
                        + 2.0 * phi[k] / (lambda[k] * lambda[k] * (nk - 1.0))
                });
                let theta = DVector::from_fn(kk, |k, _| (1.0 - phi[k]) / lambda[k]);
                let upsilon = DVector::from_fn(kk * kk, |p, _| {
                    let (c, r) = (p / kk, p % kk);
                    if c == r {
                        3.0 * phi[r] - 2.0
                    } else {
                        psi[r]
                    }
                });
                self.convolution_information(&upsilon, &cap_xi, &theta)
            }
            ModelDistribution::HeteroT { dofs } => {
                let mut phi_bar = DVector::zeros(kk);
                let mut psi_bar = DVector::zeros(kk);
                for k in 0..kk {
                    let off = spec.offset(k);
                    let nk = sizes[k] as f64;
                    let mut pb = 0.0;
                    let mut sb = 0.0;
                    for i in 0..sizes[k] {
                        let nu = dofs[off + i];
                        let p = (nu + 1.0) / (nu + 3.0);
                        pb += p;
                        sb += p * nu / (nu - 2.0);
                    }
                    phi_bar[k] = pb / nk;
                    psi_bar[k] = sb / nk;
                }
                let cap_xi = DVector::from_fn(kk, |k, _| {
                    let nk = sizes[k] as f64;
                    (3.0 * phi_bar[k] - 1.0 + (psi_bar[k] + 1.0) / (nk - 1.0))
                        / (lambda[k] * lambda[k] * nk)
                });
                let theta = DVector::from_fn(kk, |k, _| {
                    let nk = sizes[k] as f64;
                    (psi_bar[k] + 2.0 - 3.0 * phi_bar[k]) / (lambda[k] * nk)
                });
                let upsilon = DVector::from_fn(kk * kk, |p, _| {
                    let (c, r) = (p / kk, p % kk);
                    let nk = sizes[r] as f64;
                    psi_bar[r]
                        + if c == r {
                            (3.0 * phi_bar[r] - 2.0 - psi_bar[r]) / nk
                        } else {
                            0.0
                        }
                });
                self.convolution_information(&upsilon, &cap_xi, &theta)
            }
        }
    }

    /// Shared assembly for the cluster/hetero information:
    /// `I = B'(K + Υ)B + 1/4 Pd'Ξ Pd + 1/2 Pd'(Θ B) + transpose`, with
    /// `B = Ω_A Π`, diagonal `Υ` (K²-vector) and `Θ` encoded by its row
    /// coefficients at the diagonal columns.
    fn convolution_information(
        &self,
        upsilon: &DVector<f64>,
        cap_xi: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let kk = self.factors.spec().num_clusters();
        let d = self.pi.ncols();
        let b = self.omega_pi();
        // (K_K + Υ) B.
        let mut g = DMatrix::zeros(kk * kk, d);
        for j in 0..d {
            for c in 0..kk {
                for r in 0..kk {
                    let p = c * kk + r;
                    let swapped = r * kk + c;
                    g[(p, j)] = b[(swapped, j)] + upsilon[p] * b[(p, j)];
                }
            }
        }
        let mut info = b.transpose() * g;
        // 1/4 Pd' Ξ Pd.
        let scaled = DMatrix::from_fn(kk, d, |k, j| cap_xi[k] * self.pi_diag[(k, j)]);
        info += 0.25 * self.pi_diag.transpose() * scaled;
        // 1/2 Pd' (Θ B) + transpose: row k of ΘB is θ_k times row (kk) of B.
        let theta_b = DMatrix::from_fn(kk, d, |k, j| theta[k] * b[(diag_pos(k, kk), j)]);
        let cross = 0.5 * self.pi_diag.transpose() * theta_b;
        info += &cross + cross.transpose();
        Ok(linalg::symmetrize(&info))
    }
}

fn validate_dist(dist: &ModelDistribution, kk: usize, n: usize) -> Result<()> {
    match dist {
        ModelDistribution::Gaussian => Ok(()),
        ModelDistribution::MultivariateT { dof } => {
            if *dof > 2.0 {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("dof must exceed 2 (got {dof})")))
            }
        }
        ModelDistribution::ClusterT { dofs } => {
            if dofs.len() != kk {
                Err(Error::InvalidSpec(format!(
                    "cluster-t needs {kk} dofs, got {}",
                    dofs.len()
                )))
            } else if dofs.iter().any(|v| !(*v > 2.0)) {
                Err(Error::InvalidSpec("all dofs must exceed 2".into()))
            } else {
                Ok(())
            }
        }
        ModelDistribution::HeteroT { dofs } => {
            if dofs.len() != n {
                Err(Error::InvalidSpec(format!(
                    "hetero-t needs {n} dofs, got {}",
                    dofs.len()
                )))
            } else if dofs.iter().any(|v| !(*v > 2.0)) {
                Err(Error::InvalidSpec("all dofs must exceed 2".into()))
            } else {
                Ok(())
            }
        }
        ModelDistribution::CanonicalBlockT { dof0, dofs } => {
            if dofs.len() != kk {
                Err(Error::InvalidSpec(format!(
                    "canonical-block-t needs {kk} within dofs, got {}",
                    dofs.len()
                )))
            } else if !(*dof0 > 2.0) || dofs.iter().any(|v| !(*v > 2.0)) {
                Err(Error::InvalidSpec("all dofs must exceed 2".into()))
            } else {
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use crate::corr::{a_of_eta, b_matrix, BlockSpec};
    use crate::dist::{
        loglik_canon_block, loglik_cluster_block, loglik_gaussian_block, loglik_hetero_block,
        loglik_mvt_block, sample, CorrState,
    };
    use crate::score::GeneralScoreCtx;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn block_loglik(
        eta: &DVector<f64>,
        spec: &BlockSpec,
        frame: &BlockFrame,
        dist: &ModelDistribution,
        z: &DVector<f64>,
    ) -> f64 {
        let f = a_of_eta(eta, spec).unwrap();
        let vars = CanonicalVariables::rotate(z, &f, frame).unwrap();
        match dist {
            ModelDistribution::Gaussian => loglik_gaussian_block(&vars, &f).unwrap(),
            ModelDistribution::MultivariateT { dof } => {
                loglik_mvt_block(&vars, &f, *dof).unwrap()
            }
            ModelDistribution::ClusterT { dofs } => {
                loglik_cluster_block(&vars, &f, dofs).unwrap()
            }
            ModelDistribution::HeteroT { dofs } => {
                loglik_hetero_block(&vars, &f, frame, dofs).unwrap()
            }
            ModelDistribution::CanonicalBlockT { dof0, dofs } => {
                loglik_canon_block(&vars, &f, *dof0, dofs).unwrap()
            }
        }
    }

    fn fd_check_block(dist: &ModelDistribution, sizes: Vec<usize>, seed: u64) {
        let spec = BlockSpec::new(sizes).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let eta = DVector::from_fn(spec.eta_len(), |_, _| rng.gen_range(-0.5..0.5));
            let f = a_of_eta(&eta, &spec).unwrap();
            let ctx = BlockScoreCtx::new(f, &frame, dist).unwrap();
            let n = spec.total();
            let z = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
            let eval = ctx.eval(&z).unwrap();
            // Consistency: context log-likelihood equals the dist-module one.
            let direct = block_loglik(&eta, &spec, &frame, dist, &z);
            assert!(
                (eval.loglik - direct).abs() < 1e-10 * direct.abs().max(1.0),
                "{}: loglik mismatch",
                dist.name()
            );
            let spec2 = spec.clone();
            let frame2 = frame.clone();
            let dist2 = dist.clone();
            let z2 = z.clone();
            let fd = fd_gradient(
                &move |e: &DVector<f64>| block_loglik(e, &spec2, &frame2, &dist2, &z2),
                &eta,
                1e-6,
            );
            let rel = rel_err(&eval.score.score, &fd);
            assert!(rel < 1e-5, "{}: rel err {rel}", dist.name());
        }
    }

    #[test]
    fn theorem3_gaussian_fd() {
        fd_check_block(&ModelDistribution::Gaussian, vec![3, 3, 3], 71);
    }

    #[test]
    fn theorem3_student_fd() {
        fd_check_block(
            &ModelDistribution::MultivariateT { dof: 6.0 },
            vec![3, 3, 3],
            72,
        );
    }

    #[test]
    fn theorem4_cluster_fd() {
        fd_check_block(
            &ModelDistribution::ClusterT { dofs: vec![5.0, 8.0, 11.0] },
            vec![3, 3, 3],
            73,
        );
    }

    #[test]
    fn theorem5_hetero_fd() {
        fd_check_block(
            &ModelDistribution::HeteroT {
                dofs: vec![4.0, 5.0, 6.0, 7.0, 8.0],
            },
            vec![2, 3],
            74,
        );
    }

    #[test]
    fn theorem6_canonical_fd() {
        fd_check_block(
            &ModelDistribution::CanonicalBlockT { dof0: 6.0, dofs: vec![5.0, 8.0, 11.0] },
            vec![3, 3, 3],
            75,
        );
    }

    #[test]
    fn theorem3_gaussian_limit() {
        // ν → ∞ reproduces the Gaussian score and information.
        let spec = BlockSpec::new(vec![2, 3]).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let f = random_block(&spec, 0.5, &mut rng);
        let gauss = BlockScoreCtx::new(f.clone(), &frame, &ModelDistribution::Gaussian).unwrap();
        let student = BlockScoreCtx::new(
            f,
            &frame,
            &ModelDistribution::MultivariateT { dof: 1e8 },
        )
        .unwrap();
        let z = DVector::from_fn(5, |_, _| rng.gen_range(-1.5..1.5));
        let a = gauss.eval(&z).unwrap();
        let b = student.eval(&z).unwrap();
        assert!(rel_err(&b.score.score, &a.score.score) < 1e-6);
        let info_rel =
            (&b.score.information - &a.score.information).norm() / a.score.information.norm();
        assert!(info_rel < 1e-6);
    }

    #[test]
    fn theorem4_large_dofs_approach_gaussian() {
        let spec = BlockSpec::new(vec![2, 3]).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f = random_block(&spec, 0.5, &mut rng);
        let gauss = BlockScoreCtx::new(f.clone(), &frame, &ModelDistribution::Gaussian).unwrap();
        let cluster = BlockScoreCtx::new(
            f,
            &frame,
            &ModelDistribution::ClusterT { dofs: vec![1e6, 1e6] },
        )
        .unwrap();
        let z = DVector::from_fn(5, |_, _| rng.gen_range(-1.5..1.5));
        let a = gauss.eval(&z).unwrap();
        let b = cluster.eval(&z).unwrap();
        assert!(rel_err(&b.score.score, &a.score.score) < 1e-3);
        let info_rel =
            (&b.score.information - &a.score.information).norm() / a.score.information.norm();
        assert!(info_rel < 1e-3);
    }

    #[test]
    fn hetero_block_matches_general_path() {
        // Equal block C: the block score in η must equal B' times the
        // general-path score in γ, and likewise for the information.
        let spec = BlockSpec::new(vec![2, 3]).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let f = random_block(&spec, 0.5, &mut rng);
        let c = f.compose().unwrap();
        let dofs = vec![4.0, 5.5, 7.0, 8.5, 10.0];
        let dist = ModelDistribution::HeteroT { dofs };
        let block_ctx = BlockScoreCtx::new(f, &frame, &dist).unwrap();
        let general_ctx = GeneralScoreCtx::new(&c, &dist, None).unwrap();
        let b = b_matrix(&spec);
        for _ in 0..10 {
            let z = DVector::from_fn(5, |_, _| rng.gen_range(-1.5..1.5));
            let blk = block_ctx.eval(&z).unwrap();
            let gen = general_ctx.eval(&z).unwrap();
            let projected = b.transpose() * &gen.score.score;
            assert!(rel_err(&blk.score.score, &projected) < 1e-8);
            let proj_info = b.transpose() * &gen.score.information * &b;
            let info_rel =
                (&blk.score.information - &proj_info).norm() / proj_info.norm();
            assert!(info_rel < 1e-8, "information mismatch {info_rel}");
            assert!((blk.loglik - gen.loglik).abs() < 1e-9 * gen.loglik.abs());
        }
    }

    #[test]
    fn cluster_block_mc_information() {
        let spec = BlockSpec::new(vec![2, 3]).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let f = random_block(&spec, 0.4, &mut rng);
        let dist = ModelDistribution::ClusterT { dofs: vec![6.0, 9.0] };
        let ctx = BlockScoreCtx::new(f.clone(), &frame, &dist).unwrap();
        let draws = 200_000;
        let z = sample(&dist, CorrState::Block(&f, &frame), draws, &mut rng).unwrap();
        let d = ctx.state_dim();
        let mut mean = DMatrix::zeros(d, d);
        let mut m2 = DMatrix::zeros(d, d);
        let mut mean_score = DVector::zeros(d);
        for t in 0..draws {
            let row = DVector::from_fn(5, |j, _| z[(t, j)]);
            let s = ctx.eval(&row).unwrap().score.score;
            mean_score += &s;
            for i in 0..d {
                for j in 0..d {
                    let v = s[i] * s[j];
                    mean[(i, j)] += v;
                    m2[(i, j)] += v * v;
                }
            }
        }
        mean_score /= draws as f64;
        mean /= draws as f64;
        m2 /= draws as f64;
        for i in 0..d {
            for j in 0..d {
                let se = ((m2[(i, j)] - mean[(i, j)] * mean[(i, j)]) / draws as f64).sqrt();
                let diff = (mean[(i, j)] - ctx.information()[(i, j)]).abs();
                assert!(
                    diff < 3.0 * se + 1e-12,
                    "info ({i},{j}): diff {diff:.3e} vs 3se {:.3e}",
                    3.0 * se
                );
            }
        }
        for i in 0..d {
            let sd = ctx.information()[(i, i)].sqrt();
            assert!(mean_score[i].abs() < 3.0 * sd / (draws as f64).sqrt() + 1e-10);
        }
    }

    #[test]
    fn information_is_symmetric_psd() {
        let spec = BlockSpec::new(vec![3, 2, 4]).unwrap();
        let frame = spec.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for dist in [
            ModelDistribution::Gaussian,
            ModelDistribution::MultivariateT { dof: 5.0 },
            ModelDistribution::ClusterT { dofs: vec![5.0, 7.0, 9.0] },
            ModelDistribution::HeteroT {
                dofs: (0..9).map(|i| 4.0 + i as f64).collect(),
            },
            ModelDistribution::CanonicalBlockT { dof0: 6.0, dofs: vec![5.0, 7.0, 9.0] },
        ] {
            let f = random_block(&spec, 0.5, &mut rng);
            let ctx = BlockScoreCtx::new(f, &frame, &dist).unwrap();
            let info = ctx.information();
            assert!((info - info.transpose()).norm() < 1e-10 * info.norm());
            let s = crate::linalg::spectral(info).unwrap();
            let min = s.values[s.values.len() - 1];
            let trace = info.trace();
            assert!(min >= -1e-8 * trace, "{}: min eig {min}", dist.name());
            for i in 0..info.nrows() {
                assert!(info[(i, i)] > 0.0);
            }
        }
    }
}
