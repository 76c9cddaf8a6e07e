//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive (semi)definite `a`, adding a ridge
/// of increasing size when the Cholesky factorisation fails. Returns the
/// solution and the ridge that was needed.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let scale = (a.trace() / a.nrows().max(1) as f64).abs().max(1e-300);
    let mut ridge = 0.0;
    for attempt in 0..12 {
        let mut m = a.clone();
        if ridge > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, ridge));
            }
        }
        ridge = scale * 1e-12 * 10f64.powi(attempt);
    }
    Err(Error::Numeric("matrix is not positive definite even after ridge repair".into()))
}

/// Inverse of a symmetric positive definite matrix (with the same ridge
/// fallback as [`solve_spd`]).
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (a.trace() / n.max(1) as f64).abs().max(1e-300);
    let mut ridge = 0.0;
    for attempt in 0..12 {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(ch.inverse());
        }
        ridge = scale * 1e-12 * 10f64.powi(attempt);
    }
    Err(Error::Numeric("matrix inverse failed".into()))
}

/// Projects a symmetric matrix onto the positive definite cone by clipping
/// eigenvalues at `floor`, then rescales to unit diagonal.
pub fn repair_correlation(r: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..out.nrows()).map(|i| out[(i, i)].sqrt()).collect();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] /= d[i] * d[j];
        }
    }
    out
}

/// Lower Cholesky factor of a correlation/covariance matrix, repairing it
/// first if it is not positive definite.
pub fn robust_cholesky(r: &DMatrix<f64>, is_correlation: bool) -> Result<DMatrix<f64>> {
    if let Some(ch) = r.clone().cholesky() {
        return Ok(ch.l());
    }
    let repaired = if is_correlation {
        repair_correlation(r, 1e-10)
    } else {
        let sym = (r + r.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let vals = eig.eigenvalues.map(|v| v.max(1e-10));
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    };
    repaired
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numeric("Cholesky failed after eigenvalue repair".into()))
}

/// Pearson correlation matrix of the columns of `x` (rows are observations).
/// Constant columns get zero off-diagonal correlation.
pub fn correlation_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut centered = x.clone();
    for j in 0..p {
        let m = x.column(j).sum() / n as f64;
        for i in 0..n {
            centered[(i, j)] -= m;
        }
    }
    let cov = centered.transpose() * &centered;
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
                r[(i, j)] = if d > 0.0 { cov[(i, j)] / d } else { 0.0 };
            }
        }
    }
    r
}

/// `XᵀWX` for non-negative weights `w`, computed on cache-sized row blocks.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (nr, p) = x.shape();
    let sw = w.map(f64::sqrt);
    let mut xs = x.clone();
    for j in 0..p {
        xs.column_mut(j).component_mul_assign(&sw);
    }
    let mut g = DMatrix::zeros(p, p);
    let data = xs.as_slice();
    const BLOCK: usize = 512;
    let mut r0 = 0;
    while r0 < nr {
        let r1 = (r0 + BLOCK).min(nr);
        for j in 0..p {
            let cj = &data[j * nr + r0..j * nr + r1];
            for k in j..p {
                g[(j, k)] += dot(cj, &data[k * nr + r0..k * nr + r1]);
            }
        }
        r0 = r1;
    }
    for j in 0..p {
        for k in 0..j {
            g[(j, k)] = g[(k, j)];
        }
    }
    g
}

/// Dot product with four independent accumulators so it vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}
