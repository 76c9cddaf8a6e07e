//! Copula sampling and rank reordering of ensembles.
//!
//! Ensembles are `M × T` matrices: one row per member, one column per step.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::robust_cholesky;
use super::tdist::std_normal_cdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CopulaKind {
    /// Gaussian copula with the given correlation matrix.
    Gaussian(DMatrix<f64>),
    Independence,
    /// Maximal dependence: one uniform repeated across every step.
    Comonotone,
    /// Pairwise minimal dependence: u_{t+1} = 1 - u_t.
    Countermonotone,
}

impl CopulaKind {
    pub fn name(&self) -> &'static str {
        match self {
            CopulaKind::Gaussian(_) => "gaussian",
            CopulaKind::Independence => "independence",
            CopulaKind::Comonotone => "comonotone",
            CopulaKind::Countermonotone => "countermonotone",
        }
    }
}

fn check_correlation(r: &DMatrix<f64>, t: usize) -> Result<()> {
    if r.nrows() != t || r.ncols() != t {
        return Err(Error::Input(format!(
            "correlation matrix is {}x{}, expected {t}x{t}",
            r.nrows(),
            r.ncols()
        )));
    }
    for i in 0..t {
        if (r[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::Input("correlation matrix must have a unit diagonal".into()));
        }
        for j in 0..i {
            if !r[(i, j)].is_finite() || (r[(i, j)] - r[(j, i)]).abs() > 1e-10 {
                return Err(Error::Input("correlation matrix must be finite and symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Draws `m` rows of `t` uniforms coupled by `kind`. Rows are generated in
/// order, so a fixed seed gives a fixed matrix.
pub fn copula_uniforms<R: Rng + ?Sized>(
    kind: &CopulaKind,
    m: usize,
    t: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut u = DMatrix::zeros(m, t);
    match kind {
        CopulaKind::Independence => {
            for i in 0..m {
                for j in 0..t {
                    u[(i, j)] = rng.random::<f64>();
                }
            }
        }
        CopulaKind::Comonotone => {
            for i in 0..m {
                let v = rng.random::<f64>();
                for j in 0..t {
                    u[(i, j)] = v;
                }
            }
        }
        CopulaKind::Countermonotone => {
            for i in 0..m {
                let v = rng.random::<f64>();
                for j in 0..t {
                    u[(i, j)] = if j % 2 == 0 { v } else { 1.0 - v };
                }
            }
        }
        CopulaKind::Gaussian(r) => {
            check_correlation(r, t)?;
            let l = robust_cholesky(r, true)?;
            let mut z = vec![0.0; t];
            for i in 0..m {
                for zj in z.iter_mut() {
                    *zj = rng.sample(StandardNormal);
                }
                for j in 0..t {
                    let mut acc = 0.0;
                    for k in 0..=j {
                        acc += l[(j, k)] * z[k];
                    }
                    u[(i, j)] = std_normal_cdf(acc);
                }
            }
        }
    }
    Ok(u)
}

/// Ranks of the entries of a column, 0-based; ties broken by row index.
fn column_ranks(col: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|a, b| col[*a].total_cmp(&col[*b]).then(a.cmp(b)));
    let mut ranks = vec![0; col.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// Permutes the values within each column so that their ranks follow
/// `uniforms`. Every column keeps exactly its multiset of values.
pub fn reorder_by_ranks(ensemble: &DMatrix<f64>, uniforms: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if ensemble.shape() != uniforms.shape() {
        return Err(Error::Input("ensemble and rank template shapes differ".into()));
    }
    let (m, t) = ensemble.shape();
    let mut out = DMatrix::zeros(m, t);
    for j in 0..t {
        let mut sorted: Vec<f64> = ensemble.column(j).iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let template: Vec<f64> = uniforms.column(j).iter().copied().collect();
        for (i, r) in column_ranks(&template).into_iter().enumerate() {
            out[(i, j)] = sorted[r];
        }
    }
    Ok(out)
}

/// Replaces the dependence structure of an ensemble by `kind` while leaving
/// each column's marginal sample untouched.
pub fn reorder_to_copula<R: Rng + ?Sized>(
    ensemble: &DMatrix<f64>,
    kind: &CopulaKind,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (m, t) = ensemble.shape();
    let u = copula_uniforms(kind, m, t, rng)?;
    reorder_by_ranks(ensemble, &u)
}
