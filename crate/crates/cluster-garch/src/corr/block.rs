//! Block correlation matrices: the canonical decomposition `C = Q D Q'`, the
//! condensed parametrization `η = vech(C̃)` and its inverse, the expansion
//! `γ = B η`, and the derivative `Π_A = ∂vec(A)/∂η'`.

use nalgebra::{DMatrix, DVector};

use super::{gamma_len, CorrelationMatrix};
use crate::linalg::{
    matrix_function_spectral, spectral, unvech, vech, ExpFrechet, MatrixFn, Spectral,
};
use crate::{Error, Result};

/// Ordered cluster sizes of a block structure. Assets are assumed sorted so
/// that clusters are contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    sizes: Vec<usize>,
}

impl BlockSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput(
                "cluster sizes must be positive and non-empty".into(),
            ));
        }
        Ok(BlockSpec { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of clusters `K`.
    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `n`.
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Cluster index of asset `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        let mut acc = 0;
        for (k, &s) in self.sizes.iter().enumerate() {
            acc += s;
            if i < acc {
                return k;
            }
        }
        panic!("asset index {i} out of range");
    }

    /// Offset of the first asset of cluster `k`.
    pub fn offset(&self, k: usize) -> usize {
        self.sizes[..k].iter().sum()
    }

    /// Length of the `η` vector, `K(K+1)/2`.
    pub fn eta_len(&self) -> usize {
        let k = self.num_clusters();
        k * (k + 1) / 2
    }

    /// Number of free correlation parameters: `K(K+1)/2` minus one per
    /// singleton cluster (a 1 x 1 diagonal block has no correlation).
    pub fn free_param_count(&self) -> usize {
        let singletons = self.sizes.iter().filter(|&&s| s == 1).count();
        self.eta_len() - singletons
    }

    pub fn has_singletons(&self) -> bool {
        self.sizes.iter().any(|&s| s == 1)
    }

    /// vech index of the cluster pair `(k, l)` (order-insensitive).
    pub fn eta_index(&self, k: usize, l: usize) -> usize {
        let kk = self.num_clusters();
        let (hi, lo) = if k >= l { (k, l) } else { (l, k) };
        // Column-major lower triangle including the diagonal.
        lo * kk - lo * (lo + 1) / 2 + lo + (hi - lo)
    }

    /// The rotation frame (per-cluster orthonormal complements).
    pub fn frame(&self) -> BlockFrame {
        BlockFrame::new(self.clone())
    }

    /// The full orthonormal rotation `Q`, columns ordered as
    /// `(v_{n_1}, …, v_{n_K}, v⊥_{n_1}, …, v⊥_{n_K})`.
    pub fn build_q(&self) -> DMatrix<f64> {
        self.frame().q_matrix()
    }
}

/// Orthonormal complement of the normalized ones vector in dimension `m`,
/// computed by modified Gram-Schmidt on `[v, e_1, …, e_{m-1}]`.
fn ones_complement(m: usize) -> DMatrix<f64> {
    let v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut basis: Vec<DVector<f64>> = vec![v];
    for j in 0..(m - 1) {
        let mut col = DVector::zeros(m);
        col[j] = 1.0;
        for b in &basis {
            let proj = b.dot(&col);
            col -= proj * b;
        }
        // Second orthogonalization pass for numerical cleanliness.
        for b in &basis {
            let proj = b.dot(&col);
            col -= proj * b;
        }
        let norm = col.norm();
        col /= norm;
        basis.push(col);
    }
    let mut out = DMatrix::zeros(m, m - 1);
    for (j, b) in basis.iter().skip(1).enumerate() {
        out.set_column(j, b);
    }
    out
}

/// Precomputed rotation machinery for a block structure. Rotations are
/// applied cluster by cluster, so no n x n product is ever formed.
#[derive(Debug, Clone)]
pub struct BlockFrame {
    spec: BlockSpec,
    vperp: Vec<DMatrix<f64>>,
}

impl BlockFrame {
    pub fn new(spec: BlockSpec) -> Self {
        let vperp = spec
            .sizes()
            .iter()
            .map(|&m| {
                if m == 1 {
                    DMatrix::zeros(1, 0)
                } else {
                    ones_complement(m)
                }
            })
            .collect();
        BlockFrame { spec, vperp }
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn vperp(&self, k: usize) -> &DMatrix<f64> {
        &self.vperp[k]
    }

    /// `Y = Q'z` partitioned into the common part `y0` and the within-cluster
    /// parts `y_k` (length `n_k - 1`).
    pub fn rotate(&self, z: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let kk = self.spec.num_clusters();
        let mut y0 = DVector::zeros(kk);
        let mut ys = Vec::with_capacity(kk);
        for k in 0..kk {
            let off = self.spec.offset(k);
            let m = self.spec.sizes()[k];
            let zk = z.rows(off, m);
            let scale = 1.0 / (m as f64).sqrt();
            y0[k] = zk.sum() * scale;
            ys.push(self.vperp[k].transpose() * zk);
        }
        (y0, ys)
    }

    /// `z = Q y` from the partitioned representation.
    pub fn unrotate(&self, y0: &DVector<f64>, ys: &[DVector<f64>]) -> DVector<f64> {
        let n = self.spec.total();
        let mut z = DVector::zeros(n);
        for k in 0..self.spec.num_clusters() {
            let off = self.spec.offset(k);
            let m = self.spec.sizes()[k];
            let scale = 1.0 / (m as f64).sqrt();
            let within = &self.vperp[k] * &ys[k];
            for i in 0..m {
                z[off + i] = y0[k] * scale + within[i];
            }
        }
        z
    }

    /// Dense `Q` (tests and small-n convenience).
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let n = self.spec.total();
        let kk = self.spec.num_clusters();
        let mut q = DMatrix::zeros(n, n);
        for k in 0..kk {
            let off = self.spec.offset(k);
            let m = self.spec.sizes()[k];
            let scale = 1.0 / (m as f64).sqrt();
            for i in 0..m {
                q[(off + i, k)] = scale;
            }
        }
        let mut col = kk;
        for k in 0..kk {
            let off = self.spec.offset(k);
            let m = self.spec.sizes()[k];
            for j in 0..(m - 1) {
                for i in 0..m {
                    q[(off + i, col)] = self.vperp[k][(i, j)];
                }
                col += 1;
            }
        }
        q
    }
}

/// The canonical factors `(A, λ)` of a block correlation matrix:
/// `C = Q diag(A, λ_1 I, …, λ_K I) Q'`.
#[derive(Debug, Clone)]
pub struct CanonicalFactors {
    spec: BlockSpec,
    a: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl CanonicalFactors {
    /// Validates `A` SPD and `λ_k > 0` (`λ_k = 1` placeholder for singleton
    /// clusters).
    pub fn new(spec: BlockSpec, a: DMatrix<f64>, lambda: DVector<f64>) -> Result<Self> {
        let kk = spec.num_clusters();
        if a.nrows() != kk || a.ncols() != kk || lambda.len() != kk {
            return Err(Error::DimensionMismatch("canonical factor dimensions".into()));
        }
        let s = spectral(&a)?;
        if s.values[kk - 1] <= 0.0 {
            return Err(Error::InvalidBlockCorrelation(format!(
                "A is not positive definite (min eigenvalue {:.3e})",
                s.values[kk - 1]
            )));
        }
        for (k, &l) in lambda.iter().enumerate() {
            if l <= 0.0 {
                return Err(Error::InvalidBlockCorrelation(format!(
                    "lambda[{k}] = {l} must be positive"
                )));
            }
        }
        Ok(CanonicalFactors { spec, a, lambda })
    }

    pub fn identity(spec: BlockSpec) -> Self {
        let kk = spec.num_clusters();
        CanonicalFactors {
            spec,
            a: DMatrix::identity(kk, kk),
            lambda: DVector::from_element(kk, 1.0),
        }
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn a_spectral(&self) -> Result<Spectral> {
        spectral(&self.a)
    }

    /// Within/between-cluster correlations implied by the factors.
    pub fn rho(&self, k: usize, l: usize) -> f64 {
        let sizes = self.spec.sizes();
        if k == l {
            if sizes[k] == 1 {
                1.0
            } else {
                (self.a[(k, k)] - 1.0) / (sizes[k] as f64 - 1.0)
            }
        } else {
            self.a[(k, l)] / ((sizes[k] * sizes[l]) as f64).sqrt()
        }
    }

    /// Rebuilds the dense block correlation matrix.
    pub fn compose(&self) -> Result<CorrelationMatrix> {
        let n = self.spec.total();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            let ki = self.spec.cluster_of(i);
            c[(i, i)] = 1.0;
            for j in 0..i {
                let kj = self.spec.cluster_of(j);
                let rho = self.rho(ki, kj);
                c[(i, j)] = rho;
                c[(j, i)] = rho;
            }
        }
        CorrelationMatrix::new(c)
    }

    /// Extracts the canonical factors from a block-structured correlation
    /// matrix, checking block constancy to within `tol` (1e-10 by default).
    pub fn decompose(c: &CorrelationMatrix, spec: &BlockSpec) -> Result<Self> {
        Self::decompose_with_tol(c, spec, 1e-10)
    }

    pub fn decompose_with_tol(
        c: &CorrelationMatrix,
        spec: &BlockSpec,
        tol: f64,
    ) -> Result<Self> {
        let n = spec.total();
        if c.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix dim {} vs block spec total {n}",
                c.dim()
            )));
        }
        let kk = spec.num_clusters();
        let m = c.as_matrix();
        let mut rho = DMatrix::zeros(kk, kk);
        for k in 0..kk {
            for l in 0..=k {
                let (ok_off, nk) = (spec.offset(k), spec.sizes()[k]);
                let (ol_off, nl) = (spec.offset(l), spec.sizes()[l]);
                let mut sum = 0.0;
                let mut count = 0usize;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..nk {
                    for j in 0..nl {
                        if k == l && i == j {
                            continue;
                        }
                        let v = m[(ok_off + i, ol_off + j)];
                        sum += v;
                        count += 1;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if count == 0 {
                    continue; // singleton diagonal block
                }
                if hi - lo > tol {
                    return Err(Error::NotBlockStructured(format!(
                        "block ({k},{l}) varies by {:.3e}",
                        hi - lo
                    )));
                }
                rho[(k, l)] = sum / count as f64;
                rho[(l, k)] = rho[(k, l)];
            }
        }
        let mut a = DMatrix::zeros(kk, kk);
        let mut lambda = DVector::zeros(kk);
        for k in 0..kk {
            let nk = spec.sizes()[k] as f64;
            a[(k, k)] = 1.0 + (nk - 1.0) * rho[(k, k)];
            lambda[k] = if spec.sizes()[k] == 1 {
                1.0
            } else {
                (nk - a[(k, k)]) / (nk - 1.0)
            };
            for l in 0..k {
                let nl = spec.sizes()[l] as f64;
                a[(k, l)] = rho[(k, l)] * (nk * nl).sqrt();
                a[(l, k)] = a[(k, l)];
            }
        }
        CanonicalFactors::new(spec.clone(), a, lambda)
    }

    /// `log |C| = log |A| + Σ (n_k - 1) log λ_k`.
    pub fn log_det(&self) -> Result<f64> {
        let s = self.a_spectral()?;
        let min = s.values[s.values.len() - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        let mut out: f64 = s.values.iter().map(|v| v.ln()).sum();
        for (k, &nk) in self.spec.sizes().iter().enumerate() {
            out += (nk as f64 - 1.0) * self.lambda[k].ln();
        }
        Ok(out)
    }
}

/// The canonical variables of one observation: `Y = Q'Z` partitioned, plus
/// the standardized `X_0 = A^{-1/2} Y_0` and `X_k = λ_k^{-1/2} Y_k`.
#[derive(Debug, Clone)]
pub struct CanonicalVariables {
    pub y0: DVector<f64>,
    pub ys: Vec<DVector<f64>>,
    pub x0: DVector<f64>,
    pub xs: Vec<DVector<f64>>,
}

impl CanonicalVariables {
    /// Rotates one observation into canonical coordinates.
    pub fn rotate(z: &DVector<f64>, factors: &CanonicalFactors, frame: &BlockFrame) -> Result<Self> {
        let s = factors.a_spectral()?;
        let min = s.values[s.values.len() - 1];
        if min <= 0.0 {
            return Err(Error::SingularMatrix { eigenvalue: min });
        }
        Self::rotate_with_spectral(z, factors, frame, &s)
    }

    pub(crate) fn rotate_with_spectral(
        z: &DVector<f64>,
        factors: &CanonicalFactors,
        frame: &BlockFrame,
        a_spec: &Spectral,
    ) -> Result<Self> {
        let (y0, ys) = frame.rotate(z);
        let x0 = a_spec.apply(|v| 1.0 / v.sqrt(), &y0);
        let xs = ys
            .iter()
            .enumerate()
            .map(|(k, yk)| yk / factors.lambda()[k].sqrt())
            .collect();
        Ok(CanonicalVariables { y0, ys, x0, xs })
    }

    /// `Z' C^{-1} Z = Y_0' A^{-1} Y_0 + Σ λ_k^{-1} Y_k' Y_k`, computed as
    /// `X_0'X_0 + Σ X_k'X_k`.
    pub fn mahalanobis(&self) -> f64 {
        let mut q = self.x0.norm_squared();
        for xk in &self.xs {
            q += xk.norm_squared();
        }
        q
    }
}

/// `η = vech(Λ_n^{-1} (log A - log Λ_λ) Λ_n^{-1})`.
pub fn eta_of_block(factors: &CanonicalFactors) -> Result<DVector<f64>> {
    let spec = factors.spec();
    let kk = spec.num_clusters();
    let s = factors.a_spectral()?;
    let min = s.values[kk - 1];
    if min <= 0.0 {
        return Err(Error::SingularMatrix { eigenvalue: min });
    }
    let log_a = matrix_function_spectral(&s, MatrixFn::Log)?;
    let mut w = log_a;
    for k in 0..kk {
        w[(k, k)] -= factors.lambda()[k].ln();
    }
    let mut ctilde = DMatrix::zeros(kk, kk);
    for k in 0..kk {
        for l in 0..kk {
            let scale = ((spec.sizes()[k] * spec.sizes()[l]) as f64).sqrt();
            ctilde[(k, l)] = w[(k, l)] / scale;
        }
    }
    Ok(vech(&ctilde))
}

const ETA_FP_TOL: f64 = 1e-12;
const ETA_FP_MAX_ITER: usize = 500;

/// Max-norm of the unit-diagonal residual at a candidate shift `y`.
fn diag_residual(
    atilde: &DMatrix<f64>,
    y: &DVector<f64>,
    ctilde: &DMatrix<f64>,
    spec: &BlockSpec,
) -> Result<f64> {
    let kk = spec.num_clusters();
    let mut shifted = atilde.clone();
    for k in 0..kk {
        shifted[(k, k)] += y[k];
    }
    let s = spectral(&shifted)?;
    let expm = matrix_function_spectral(&s, MatrixFn::Exp)?;
    let mut worst = 0.0f64;
    for k in 0..kk {
        let nk = spec.sizes()[k] as f64;
        let shift: f64 = y[k] - ctilde[(k, k)];
        let inner = expm[(k, k)] + (nk - 1.0) * shift.exp();
        if !inner.is_finite() {
            return Err(Error::ConvergenceFailure { residual: inner, iterations: 0 });
        }
        worst = worst.max((inner - nk).abs());
    }
    Ok(worst)
}

/// Inverse of [`eta_of_block`]: recovers `(A, λ)` from `η` by the three-step
/// fixed-point algorithm. Also returns the number of iterations used.
pub fn a_of_eta_iter(
    eta: &DVector<f64>,
    spec: &BlockSpec,
) -> Result<(CanonicalFactors, usize)> {
    let kk = spec.num_clusters();
    if eta.len() != spec.eta_len() {
        return Err(Error::DimensionMismatch(format!(
            "eta has length {}, expected {}",
            eta.len(),
            spec.eta_len()
        )));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("eta has non-finite entries".into()));
    }
    let ctilde = unvech(eta, kk);

    // Step 1: the log-domain matrix with diagonal left free.
    let mut atilde = DMatrix::zeros(kk, kk);
    for k in 0..kk {
        let nk = spec.sizes()[k] as f64;
        atilde[(k, k)] = ctilde[(k, k)] * (nk - 1.0);
        for l in 0..k {
            let nl = spec.sizes()[l] as f64;
            atilde[(k, l)] = ctilde[(k, l)] * (nk * nl).sqrt();
            atilde[(l, k)] = atilde[(k, l)];
        }
    }

    // Step 2: solve the unit-diagonal conditions
    //   F_k(y) = [exp(Ã + diag y)]_kk + (n_k - 1) e^{y_k - c̃_kk} - n_k = 0
    // for the diagonal shift y. The fixed point is the one of the plain
    // recursion y_k ← y_k + log n_k - log(...), but a damped Newton step
    // (Jacobian from the same eigendecomposition via the exponential's
    // Fréchet derivative) converges quadratically and stays under the
    // iteration budget even for ill-conditioned inputs. When Newton cannot
    // make progress the plain recursion step is taken instead.
    //
    // Attainable accuracy is limited by eigendecomposition noise on
    // diag(exp(·)), which scales with the largest eigenvalue of A; the exit
    // tolerance is lifted to that floor when it exceeds the nominal 1e-12.
    let mut y: DVector<f64> = DVector::zeros(kk);
    let mut iterations = 0usize;
    let mut best_resid = f64::INFINITY;
    let mut stall_run = 0usize;
    loop {
        iterations += 1;
        let mut shifted = atilde.clone();
        for k in 0..kk {
            shifted[(k, k)] += y[k];
        }
        let s = spectral(&shifted)?;
        let expm = matrix_function_spectral(&s, MatrixFn::Exp)?;
        let noise_floor = 100.0 * f64::EPSILON * s.values[0].exp().max(1.0);

        let mut f_resid = DVector::zeros(kk);
        let mut within = DVector::zeros(kk);
        let mut rel_resid = 0.0f64;
        for k in 0..kk {
            let nk = spec.sizes()[k] as f64;
            let shift: f64 = y[k] - ctilde[(k, k)];
            within[k] = (nk - 1.0) * shift.exp();
            let inner = expm[(k, k)] + within[k];
            if !inner.is_finite() {
                return Err(Error::ConvergenceFailure { residual: inner, iterations });
            }
            f_resid[k] = inner - nk;
            rel_resid = rel_resid.max(f_resid[k].abs() / nk);
        }
        if rel_resid < ETA_FP_TOL.max(noise_floor) {
            break;
        }
        if rel_resid < best_resid * 0.98 {
            best_resid = rel_resid;
            stall_run = 0;
        } else {
            stall_run += 1;
            // Stuck at a numerical floor the estimate above did not predict:
            // accept if already very accurate, fail otherwise.
            if stall_run >= 15 {
                if best_resid < 1e-9 {
                    break;
                }
                return Err(Error::ConvergenceFailure {
                    residual: rel_resid,
                    iterations,
                });
            }
        }
        if iterations >= ETA_FP_MAX_ITER {
            return Err(Error::ConvergenceFailure { residual: rel_resid, iterations });
        }

        // Newton direction: J = E_d Γ E_d' + diag((n_k-1) e^{y_k - c̃_kk}).
        let log_vals = s.values.clone();
        let frechet = ExpFrechet::from_log_eigs(s.vectors.clone(), log_vals);
        let mut jac = frechet.diag_block();
        for k in 0..kk {
            jac[(k, k)] += within[k];
        }
        let newton = jac.lu().solve(&f_resid).map(|d| -d);

        let mut moved = false;
        if let Some(dir) = newton {
            if dir.iter().all(|v| v.is_finite()) {
                let fnorm = f_resid.amax();
                let mut t = 1.0f64;
                while t >= 1.0 / 64.0 {
                    let cand = &y + &dir * t;
                    if let Ok(resid) = diag_residual(&atilde, &cand, &ctilde, spec) {
                        if resid < (1.0 - 0.5 * t) * fnorm {
                            y = cand;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
            }
        }
        if !moved {
            // Plain contraction step from the three-step algorithm.
            for k in 0..kk {
                let nk = spec.sizes()[k] as f64;
                let inner = expm[(k, k)] + within[k];
                if !(inner > 0.0) {
                    return Err(Error::ConvergenceFailure {
                        residual: rel_resid,
                        iterations,
                    });
                }
                y[k] += nk.ln() - inner.ln();
            }
        }
    }

    // Step 3: assemble A and the repeated eigenvalues.
    let mut log_a = atilde;
    for k in 0..kk {
        log_a[(k, k)] += y[k];
    }
    let s = spectral(&log_a)?;
    let a = matrix_function_spectral(&s, MatrixFn::Exp)?;
    let mut lambda = DVector::zeros(kk);
    for k in 0..kk {
        let nk = spec.sizes()[k] as f64;
        lambda[k] = if spec.sizes()[k] == 1 {
            1.0
        } else {
            (nk - a[(k, k)]) / (nk - 1.0)
        };
        if lambda[k] <= 0.0 {
            return Err(Error::InvalidBlockCorrelation(format!(
                "recovered lambda[{k}] = {} is not positive",
                lambda[k]
            )));
        }
    }
    Ok((CanonicalFactors::new(spec.clone(), a, lambda)?, iterations))
}

/// Inverse of [`eta_of_block`].
pub fn a_of_eta(eta: &DVector<f64>, spec: &BlockSpec) -> Result<CanonicalFactors> {
    a_of_eta_iter(eta, spec).map(|(f, _)| f)
}

/// The 0/1 expansion matrix `B` with `γ = B η` (one 1 per row).
pub fn b_matrix(spec: &BlockSpec) -> DMatrix<f64> {
    let n = spec.total();
    let d = gamma_len(n);
    let mut b = DMatrix::zeros(d, spec.eta_len());
    let mut row = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            let col = spec.eta_index(spec.cluster_of(i), spec.cluster_of(j));
            b[(row, col)] = 1.0;
            row += 1;
        }
    }
    b
}

/// `γ = B η` without materializing `B`.
pub fn expand_gamma(eta: &DVector<f64>, spec: &BlockSpec) -> Result<DVector<f64>> {
    if eta.len() != spec.eta_len() {
        return Err(Error::DimensionMismatch(format!(
            "eta has length {}, expected {}",
            eta.len(),
            spec.eta_len()
        )));
    }
    let n = spec.total();
    let mut gamma = DVector::zeros(gamma_len(n));
    let mut row = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            gamma[row] = eta[spec.eta_index(spec.cluster_of(i), spec.cluster_of(j))];
            row += 1;
        }
    }
    Ok(gamma)
}

/// `Π_A = ∂vec(A)/∂η'` (K² x K(K+1)/2), via the Woodbury form
/// `[Γ_A - Γ_A E_d' (Φ + E_d Γ_A E_d')⁻¹ E_d Γ_A] Λ_{n⊗} D_K`
/// with `Φ_kk = λ_k (n_k - 1)`. Only a K x K system is solved.
///
/// Requires all cluster sizes ≥ 2: singleton diagonal coordinates of `η`
/// carry no correlation content and are excluded from the dynamics.
pub fn pi_a(factors: &CanonicalFactors) -> Result<DMatrix<f64>> {
    let s = factors.a_spectral()?;
    pi_a_from_spectral(factors, &s)
}

pub(crate) fn pi_a_from_spectral(
    factors: &CanonicalFactors,
    a_spec: &Spectral,
) -> Result<DMatrix<f64>> {
    let spec = factors.spec();
    let kk = spec.num_clusters();
    if spec.has_singletons() {
        return Err(Error::InvalidSpec(
            "pi_a requires all cluster sizes >= 2".into(),
        ));
    }
    let min = a_spec.values[kk - 1];
    if min <= 0.0 {
        return Err(Error::SingularMatrix { eigenvalue: min });
    }
    let log_vals = a_spec.values.map(f64::ln);
    let frechet = ExpFrechet::from_log_eigs(a_spec.vectors.clone(), log_vals);

    // Γ_A applied to the diagonal unit directions, and the K x K system.
    let mut gamma_diag_cols: Vec<DMatrix<f64>> = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut e = DMatrix::zeros(kk, kk);
        e[(k, k)] = 1.0;
        gamma_diag_cols.push(frechet.apply(&e));
    }
    let mut system = DMatrix::zeros(kk, kk);
    for k in 0..kk {
        let nk = spec.sizes()[k] as f64;
        for l in 0..kk {
            system[(k, l)] = gamma_diag_cols[l][(k, k)];
        }
        system[(k, k)] += factors.lambda()[k] * (nk - 1.0);
    }
    let system_lu = system.lu();

    let d = spec.eta_len();
    let mut pi = DMatrix::zeros(kk * kk, d);
    let mut col = 0;
    for l in 0..kk {
        for k in l..kk {
            // Direction Λ_n Ẽ_{kl} Λ_n of vec(W) per unit of η_{kl}.
            let scale = ((spec.sizes()[k] * spec.sizes()[l]) as f64).sqrt();
            let mut dir = DMatrix::zeros(kk, kk);
            dir[(k, l)] = scale;
            dir[(l, k)] = scale;
            if k == l {
                dir[(k, k)] = scale;
            }
            let g = frechet.apply(&dir);
            let rhs = DVector::from_fn(kk, |i, _| g[(i, i)]);
            let w = system_lu
                .solve(&rhs)
                .ok_or(Error::SingularMatrix { eigenvalue: 0.0 })?;
            let mut corr = DMatrix::zeros(kk, kk);
            for (j, gd) in gamma_diag_cols.iter().enumerate() {
                corr += gd * w[j];
            }
            let total = g - corr;
            for (idx, v) in total.iter().enumerate() {
                pi[(idx, col)] = *v;
            }
            col += 1;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{corr_of_gamma, gamma_of_corr};
    use crate::linalg::vec_of;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn paper_7x7_factors() -> CanonicalFactors {
        // Block sizes (2,2,3) with ρ = (.8, .4, .2, .6, .1, .3).
        let spec = BlockSpec::new(vec![2, 2, 3]).unwrap();
        let mut c = DMatrix::zeros(7, 7);
        let rho = [
            [0.8, 0.4, 0.2],
            [0.4, 0.6, 0.1],
            [0.2, 0.1, 0.3],
        ];
        for i in 0..7 {
            c[(i, i)] = 1.0;
            for j in 0..i {
                let v = rho[spec.cluster_of(i)][spec.cluster_of(j)];
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let c = CorrelationMatrix::new(c).unwrap();
        CanonicalFactors::decompose(&c, &spec).unwrap()
    }

    pub(crate) fn random_eta(spec: &BlockSpec, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(spec.eta_len(), |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn q_is_orthonormal() {
        let spec = BlockSpec::new(vec![2, 2, 3]).unwrap();
        let q = spec.build_q();
        let err = (q.transpose() * &q - DMatrix::identity(7, 7)).norm();
        assert!(err < 1e-12, "orthonormality error {err}");
    }

    #[test]
    fn q_for_singletons_is_identity_up_to_order() {
        let spec = BlockSpec::new(vec![1, 1]).unwrap();
        let q = spec.build_q();
        assert!((q - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn ones_complement_is_orthogonal_to_ones() {
        for m in 2..=10 {
            let v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
            let vp = ones_complement(m);
            let cross = vp.transpose() * &v;
            assert!(cross.amax() < 1e-14, "m = {m}");
            let gram = vp.transpose() * &vp;
            assert!((gram - DMatrix::identity(m - 1, m - 1)).norm() < 1e-13);
        }
    }

    #[test]
    fn paper_7x7_canonical_values() {
        let f = paper_7x7_factors();
        assert_abs_diff_eq!(f.a()[(0, 0)], 1.8, epsilon = 1e-12);
        assert_abs_diff_eq!(f.a()[(0, 1)], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(f.lambda()[0], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn paper_7x7_condensed_log_matrix() {
        let f = paper_7x7_factors();
        let eta = eta_of_block(&f).unwrap();
        let expected = [1.02, 0.251, 0.115, 0.626, 0.036, 0.259];
        for (i, e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(eta[i], *e, epsilon = 5e-3);
        }
    }

    #[test]
    fn paper_7x7_expand_matches_dense_log() {
        let f = paper_7x7_factors();
        let eta = eta_of_block(&f).unwrap();
        let gamma = expand_gamma(&eta, f.spec()).unwrap();
        let dense = gamma_of_corr(&f.compose().unwrap()).unwrap();
        assert!((gamma - dense).amax() < 1e-8);
    }

    #[test]
    fn identity_decomposes_to_identity() {
        let spec = BlockSpec::new(vec![2, 3]).unwrap();
        let f = CanonicalFactors::decompose(&CorrelationMatrix::identity(5), &spec).unwrap();
        assert!((f.a() - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((f.lambda() - DVector::from_element(2, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn compose_decompose_round_trip() {
        let f = paper_7x7_factors();
        let c = f.compose().unwrap();
        let f2 = CanonicalFactors::decompose(&c, f.spec()).unwrap();
        assert!((f.a() - f2.a()).norm() < 1e-12);
        assert!((f.lambda() - f2.lambda()).norm() < 1e-12);
    }

    #[test]
    fn decompose_rejects_non_block() {
        let spec = BlockSpec::new(vec![2, 1]).unwrap();
        let mut m = DMatrix::identity(3, 3);
        m[(0, 2)] = 0.3;
        m[(2, 0)] = 0.3;
        m[(1, 2)] = 0.1;
        m[(2, 1)] = 0.1;
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        let c = CorrelationMatrix::new(m).unwrap();
        assert!(matches!(
            CanonicalFactors::decompose(&c, &spec),
            Err(Error::NotBlockStructured(_))
        ));
    }

    #[test]
    fn determinant_identity() {
        let f = paper_7x7_factors();
        let dense_det = f.compose().unwrap().as_matrix().determinant();
        let rel = (f.log_det().unwrap() - dense_det.ln()).abs() / dense_det.ln().abs();
        assert!(rel < 1e-10);
    }

    #[test]
    fn quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = paper_7x7_factors();
        let frame = f.spec().frame();
        let c = f.compose().unwrap();
        let inv = c.as_matrix().clone().lu().try_inverse().unwrap();
        for _ in 0..10 {
            let z = DVector::from_fn(7, |_, _| rng.gen_range(-2.0..2.0));
            let dense = (z.transpose() * &inv * &z)[(0, 0)];
            let vars = CanonicalVariables::rotate(&z, &f, &frame).unwrap();
            let rel = (vars.mahalanobis() - dense).abs() / dense.abs();
            assert!(rel < 1e-10, "relative error {rel}");
        }
    }

    #[test]
    fn sqrt_from_factors_squares_to_c() {
        let f = paper_7x7_factors();
        let frame = f.spec().frame();
        let q = frame.q_matrix();
        let s = f.a_spectral().unwrap();
        let a_half = matrix_function_spectral(&s, MatrixFn::Power(0.5)).unwrap();
        let mut d_half = DMatrix::zeros(7, 7);
        d_half.view_mut((0, 0), (3, 3)).copy_from(&a_half);
        let mut idx = 3;
        for k in 0..3 {
            for _ in 0..(f.spec().sizes()[k] - 1) {
                d_half[(idx, idx)] = f.lambda()[k].sqrt();
                idx += 1;
            }
        }
        let c_half = &q * d_half * q.transpose();
        assert!((&c_half - c_half.transpose()).norm() < 1e-12);
        assert!((&c_half * &c_half - f.compose().unwrap().as_matrix()).norm() < 1e-10);
    }

    #[test]
    fn eta_zero_gives_identity_a() {
        let spec = BlockSpec::new(vec![3, 2]).unwrap();
        let (f, _) = a_of_eta_iter(&DVector::zeros(3), &spec).unwrap();
        assert!((f.a() - DMatrix::identity(2, 2)).norm() < 1e-11);
    }

    #[test]
    fn eta_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for sizes in [vec![2, 3], vec![4, 2, 3], vec![2, 2, 2, 3, 4, 2]] {
            let spec = BlockSpec::new(sizes).unwrap();
            for _ in 0..10 {
                let eta = random_eta(&spec, 1.0, &mut rng);
                let (f, iters) = a_of_eta_iter(&eta, &spec).unwrap();
                assert!(iters < 50, "{iters} iterations");
                let eta2 = eta_of_block(&f).unwrap();
                assert!((&eta2 - &eta).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn eta_consistency_with_gamma_parametrization() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let spec = BlockSpec::new(vec![2, 3, 2]).unwrap();
        let eta = random_eta(&spec, 0.7, &mut rng);
        let f = a_of_eta(&eta, &spec).unwrap();
        let gamma_direct = expand_gamma(&eta, &spec).unwrap();
        let gamma_dense = gamma_of_corr(&f.compose().unwrap()).unwrap();
        assert!((gamma_direct - gamma_dense).amax() < 1e-8);
    }

    #[test]
    fn b_matrix_column_sums_count_pairs() {
        let spec = BlockSpec::new(vec![2, 2, 3]).unwrap();
        let b = b_matrix(&spec);
        for row in 0..b.nrows() {
            assert_eq!(b.row(row).sum(), 1.0);
        }
        let sums = b.row_sum(); // column sums (nalgebra sums over rows)
        // Within-cluster pairs n_k(n_k-1)/2 on diagonal entries of vech,
        // between-cluster n_k * n_l elsewhere.
        assert_eq!(sums[spec.eta_index(0, 0)], 1.0);
        assert_eq!(sums[spec.eta_index(1, 0)], 4.0);
        assert_eq!(sums[spec.eta_index(2, 0)], 6.0);
        assert_eq!(sums[spec.eta_index(1, 1)], 1.0);
        assert_eq!(sums[spec.eta_index(2, 1)], 6.0);
        assert_eq!(sums[spec.eta_index(2, 2)], 3.0);
    }

    #[test]
    fn expand_gamma_single_cluster() {
        let spec = BlockSpec::new(vec![4]).unwrap();
        let eta = DVector::from_element(1, 0.37);
        let gamma = expand_gamma(&eta, &spec).unwrap();
        assert!(gamma.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn pi_a_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let spec = BlockSpec::new(vec![2, 3, 2]).unwrap();
        for trial in 0..3 {
            let eta = if trial == 0 {
                DVector::zeros(spec.eta_len())
            } else {
                random_eta(&spec, 0.6, &mut rng)
            };
            let f = a_of_eta(&eta, &spec).unwrap();
            let pi = pi_a(&f).unwrap();
            let h = 1e-6;
            for j in 0..spec.eta_len() {
                let mut up = eta.clone();
                up[j] += h;
                let mut dn = eta.clone();
                dn[j] -= h;
                let fu = a_of_eta(&up, &spec).unwrap();
                let fd = a_of_eta(&dn, &spec).unwrap();
                let diff = (fu.a() - fd.a()) / (2.0 * h);
                let fd_col = vec_of(&diff);
                let an_col = pi.column(j).clone_owned();
                let rel = (&fd_col - &an_col).norm() / an_col.norm().max(1e-12);
                assert!(rel < 1e-5, "column {j} relative error {rel}");
            }
        }
    }

    #[test]
    fn pi_a_scalar_case() {
        let spec = BlockSpec::new(vec![2]).unwrap();
        let eta = DVector::from_element(1, 0.4);
        let f = a_of_eta(&eta, &spec).unwrap();
        let pi = pi_a(&f).unwrap();
        assert_eq!(pi.shape(), (1, 1));
        let h = 1e-6;
        let fu = a_of_eta(&DVector::from_element(1, 0.4 + h), &spec).unwrap();
        let fd = a_of_eta(&DVector::from_element(1, 0.4 - h), &spec).unwrap();
        let fd_val = (fu.a()[(0, 0)] - fd.a()[(0, 0)]) / (2.0 * h);
        assert_abs_diff_eq!(pi[(0, 0)], fd_val, epsilon = 1e-6 * fd_val.abs());
    }

    #[test]
    fn pi_a_rejects_singletons() {
        let spec = BlockSpec::new(vec![1, 3]).unwrap();
        let f = CanonicalFactors::identity(spec);
        assert!(matches!(pi_a(&f), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rotate_zero_is_zero() {
        let f = paper_7x7_factors();
        let frame = f.spec().frame();
        let vars = CanonicalVariables::rotate(&DVector::zeros(7), &f, &frame).unwrap();
        assert!(vars.y0.norm() == 0.0 && vars.x0.norm() == 0.0);
        assert!(vars.ys.iter().all(|y| y.norm() == 0.0));
    }

    #[test]
    fn corr_of_gamma_matches_block_path() {
        // A block eta expanded to gamma and inverted densely must equal the
        // composed block matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let spec = BlockSpec::new(vec![3, 2]).unwrap();
        let eta = random_eta(&spec, 0.8, &mut rng);
        let f = a_of_eta(&eta, &spec).unwrap();
        let gamma = expand_gamma(&eta, &spec).unwrap();
        let dense = corr_of_gamma(&gamma, 5).unwrap();
        assert!((dense.as_matrix() - f.compose().unwrap().as_matrix()).norm() < 1e-9);
    }

    #[test]
    fn free_param_count_discounts_singletons() {
        let spec = BlockSpec::new(vec![1, 3, 1, 2]).unwrap();
        assert_eq!(spec.eta_len(), 10);
        assert_eq!(spec.free_param_count(), 8);
    }
}
