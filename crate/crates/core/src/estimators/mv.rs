//! Zero-mean multivariate normal and t laws for whole difference trajectories.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::statcore::linalg::robust_cholesky;

pub const NU_GRID: [f64; 11] = [2.1, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 30.0];
const EM_MAX_ITER: usize = 500;
const EM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MvFamily {
    Normal,
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvFit {
    pub family: MvFamily,
    /// Covariance of the law (not the t scatter matrix).
    pub cov: DMatrix<f64>,
    pub nu: Option<f64>,
    /// Shrinkage intensity applied toward the diagonal (0 if none).
    pub shrinkage: f64,
    pub log_likelihood: f64,
}

impl MvFit {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// Draws `m` zero-mean vectors as rows.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let scatter = match self.nu {
            Some(nu) => &self.cov * ((nu - 2.0) / nu),
            None => self.cov.clone(),
        };
        let l = robust_cholesky(&scatter, false)?;
        let chi = match self.nu {
            Some(nu) => Some(ChiSquared::new(nu).map_err(|e| Error::Domain(e.to_string()))?),
            None => None,
        };
        let mut out = DMatrix::zeros(m, d);
        let mut z = DVector::zeros(d);
        for j in 0..m {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let scale = match (&chi, self.nu) {
                (Some(c), Some(nu)) => (nu / c.sample(rng)).sqrt(),
                _ => 1.0,
            };
            let x = &l * &z * scale;
            out.row_mut(j).copy_from(&x.transpose());
        }
        Ok(out)
    }
}

/// Ledoit-Wolf intensity for shrinking the zero-mean second-moment matrix
/// of `x` toward its diagonal.
fn ledoit_wolf_intensity(x: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let (n, d) = x.shape();
    let mut num = 0.0;
    for i in 0..n {
        let row = x.row(i);
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    let e = row[a] * row[b] - s[(a, b)];
                    num += e * e;
                }
            }
        }
    }
    num /= (n * n) as f64;
    let mut den = 0.0;
    for a in 0..d {
        for b in 0..d {
            if a != b {
                den += s[(a, b)] * s[(a, b)];
            }
        }
    }
    if den <= 0.0 {
        1.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

fn shrink(s: &DMatrix<f64>, intensity: f64) -> DMatrix<f64> {
    let d = s.nrows();
    let floor = 1e-10 * (s.trace() / d as f64).max(1e-300);
    DMatrix::from_fn(d, d, |a, b| {
        if a == b {
            s[(a, a)].max(floor)
        } else {
            (1.0 - intensity) * s[(a, b)]
        }
    })
}

fn is_well_conditioned(s: &DMatrix<f64>) -> bool {
    match s.clone().cholesky() {
        Some(ch) => {
            let diag = ch.l_dirty().diagonal();
            let (mn, mx) = (diag.min(), diag.max());
            mn > 0.0 && mn / mx > 1e-7
        }
        None => false,
    }
}

fn normal_loglik(x: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = x.shape();
    let l = robust_cholesky(cov, false)?;
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let z = l.solve_lower_triangular(&x.transpose()).ok_or_else(|| Error::Numeric("triangular solve".into()))?;
    let q: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (n as f64) * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet) - 0.5 * q)
}

/// Mahalanobis distances of the rows of `x` under `scatter`, and log det.
fn mahalanobis(x: &DMatrix<f64>, scatter: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let l = robust_cholesky(scatter, false)?;
    let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let z = l.solve_lower_triangular(&x.transpose()).ok_or_else(|| Error::Numeric("triangular solve".into()))?;
    Ok(((0..x.nrows()).map(|i| z.column(i).norm_squared()).collect(), logdet))
}

fn t_loglik(delta: &[f64], logdet: f64, d: usize, nu: f64) -> f64 {
    let df = d as f64;
    let c = ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * df * (nu * std::f64::consts::PI).ln() - 0.5 * logdet;
    delta.iter().map(|q| c - 0.5 * (nu + df) * (q / nu).ln_1p()).sum()
}

/// EM for the scatter matrix at fixed ν.
fn t_scatter(x: &DMatrix<f64>, nu: f64, start: &DMatrix<f64>, intensity: f64) -> Result<(DMatrix<f64>, f64)> {
    let (n, d) = x.shape();
    let mut scatter = start.clone();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        let (delta, logdet) = mahalanobis(x, &scatter)?;
        let ll = t_loglik(&delta, logdet, d, nu);
        let w: Vec<f64> = delta.iter().map(|q| (nu + d as f64) / (nu + q)).collect();
        let mut xs = x.clone();
        for i in 0..n {
            let s = w[i].sqrt();
            xs.row_mut(i).scale_mut(s);
        }
        let mut next = xs.transpose() * &xs / n as f64;
        if intensity > 0.0 {
            next = shrink(&next, intensity);
        }
        scatter = next;
        if (ll - prev).abs() <= EM_TOL * (1.0 + ll.abs()) {
            break;
        }
        prev = ll;
    }
    let (delta, logdet) = mahalanobis(x, &scatter)?;
    Ok((scatter.clone(), t_loglik(&delta, logdet, d, nu)))
}

/// Fits a zero-mean normal or t law to the rows of `x` (days × steps).
pub fn fit_mv(x: &DMatrix<f64>, family: MvFamily) -> Result<MvFit> {
    let (n, d) = x.shape();
    if n < 2 || d == 0 {
        return Err(Error::Estimation(format!("multivariate fit needs at least 2 rows, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite entry in multivariate fit".into()));
    }
    let s = x.transpose() * x / n as f64;
    if s.diagonal().iter().all(|v| *v <= 0.0) {
        return Err(Error::Estimation("all differences are zero; covariance is degenerate".into()));
    }
    let mut intensity = 0.0;
    let mut cov = s.clone();
    if n <= d || !is_well_conditioned(&s) {
        intensity = ledoit_wolf_intensity(x, &s).max(1e-3);
        cov = shrink(&s, intensity);
        warn!("sample covariance is singular or ill-conditioned; shrinking toward the diagonal by {intensity:.4}");
    }
    match family {
        MvFamily::Normal => Ok(MvFit {
            family,
            log_likelihood: normal_loglik(x, &cov)?,
            cov,
            nu: None,
            shrinkage: intensity,
        }),
        MvFamily::T => {
            let mut best: Option<(f64, DMatrix<f64>, f64)> = None;
            for &nu in &NU_GRID {
                let start = &cov * ((nu - 2.0) / nu);
                let (scatter, ll) = t_scatter(x, nu, &start, intensity)?;
                if best.as_ref().is_none_or(|b| ll > b.2) {
                    best = Some((nu, scatter, ll));
                }
            }
            let (nu, scatter, ll) = best.expect("ν grid is non-empty");
            Ok(MvFit {
                family,
                cov: scatter * (nu / (nu - 2.0)),
                nu: Some(nu),
                shrinkage: intensity,
                log_likelihood: ll,
            })
        }
    }
}
