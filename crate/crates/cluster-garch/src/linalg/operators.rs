//! Elimination, duplication and commutation matrices, materialized with
//! explicit 0/1 entries so the derivative formulas can be composed exactly as
//! written.

use nalgebra::DMatrix;

/// Commutation matrix `K_n`: `K_n vec(B) = vec(B')`.
pub fn commutation(n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            // vec position of B[i][j] is j*n + i; of B'[j][i] is i*n + j.
            k[(i * n + j, j * n + i)] = 1.0;
        }
    }
    k
}

/// Duplication matrix `D_n`: `D_n vech(A) = vec(A)` for symmetric `A`.
pub fn duplication(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n * n, n * (n + 1) / 2);
    let mut col = 0;
    for j in 0..n {
        for i in j..n {
            d[(j * n + i, col)] = 1.0;
            d[(i * n + j, col)] = 1.0;
            col += 1;
        }
    }
    d
}

/// Lower elimination matrix `E_l`: `E_l vec(B) = vecl(B)`.
pub fn elimination_lower(n: usize) -> DMatrix<f64> {
    let d = n * (n - 1) / 2;
    let mut e = DMatrix::zeros(d, n * n);
    let mut row = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            e[(row, j * n + i)] = 1.0;
            row += 1;
        }
    }
    e
}

/// Upper elimination matrix `E_u`: `E_u vec(B) = vecl(B')`.
pub fn elimination_upper(n: usize) -> DMatrix<f64> {
    let d = n * (n - 1) / 2;
    let mut e = DMatrix::zeros(d, n * n);
    let mut row = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            // B'[i][j] = B[j][i], stored at vec position i*n + j.
            e[(row, i * n + j)] = 1.0;
            row += 1;
        }
    }
    e
}

/// Diagonal elimination matrix `E_d`: `E_d vec(B) = diag(B)`.
pub fn elimination_diag(n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n * n);
    for i in 0..n {
        e[(i, i * n + i)] = 1.0;
    }
    e
}

/// Full elimination matrix `L_n`: `L_n vec(B) = vech(B)`.
pub fn elimination_vech(n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n * (n + 1) / 2, n * n);
    let mut row = 0;
    for j in 0..n {
        for i in j..n {
            e[(row, j * n + i)] = 1.0;
            row += 1;
        }
    }
    e
}
