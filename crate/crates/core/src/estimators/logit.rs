//! Lasso-penalized logistic regression: IRLS outer loop with coordinate
//! descent on the weighted Gram matrix, warm starts along a log-spaced λ
//! path, and BIC selection.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::designmatrix::{standardize, FeatureMatrix, Standardization, INTERCEPT};
use crate::error::{Error, Result};
use crate::statcore::linalg::weighted_gram;

/// Linear predictors are clamped to ±30 before the logistic transform.
pub const ETA_CLAMP: f64 = 30.0;
const MAX_PASSES: usize = 10_000;
const REFRESH_ABOVE: f64 = 1e-3;
/// Coordinate descent stops when no update moves the quadratic model by more
/// than this (the change `g_jj Δβ_j²`).
const CD_TOL: f64 = 1e-13;
/// Outer iterations stop once the relative objective decrease falls below this.
const OBJ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitLassoFit {
    pub names: Vec<String>,
    /// Coefficients on the standardized scale; entry 0 is the intercept.
    pub beta: Vec<f64>,
    pub lambda_selected: f64,
    pub lambdas: Vec<f64>,
    pub bic_path: Vec<f64>,
    pub standardization: Standardization,
    pub n_obs: usize,
}

pub fn sigmoid(eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
    1.0 / (1.0 + (-e).exp())
}

impl LogitLassoFit {
    /// Trade probability for a raw (unstandardized) feature row laid out as
    /// `names`.
    pub fn predict_row(&self, raw: &[f64]) -> f64 {
        let s = &self.standardization;
        let mut eta = 0.0;
        for j in 0..raw.len() {
            let b = self.beta[j];
            if b != 0.0 {
                let x = if s.scaled[j] { (raw[j] - s.means[j]) / s.sds[j] } else { raw[j] };
                eta += b * x;
            }
        }
        sigmoid(eta)
    }

    pub fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Checked prediction: the caller's feature names must match the fit.
pub fn predict_pi(fit: &LogitLassoFit, names: &[String], raw: &[f64]) -> Result<f64> {
    if names != fit.names.as_slice() || raw.len() != fit.names.len() {
        return Err(Error::Contract("feature names differ from the fitted logit model".into()));
    }
    Ok(fit.predict_row(raw))
}

/// Penalty weights: 0 for the intercept, 1 for scaled columns, and `None`
/// (coefficient pinned at zero) for constant columns.
fn penalty_factors(stats: &Standardization) -> Vec<Option<f64>> {
    stats
        .names
        .iter()
        .zip(&stats.scaled)
        .map(|(n, s)| {
            if n == INTERCEPT {
                Some(0.0)
            } else if *s {
                Some(1.0)
            } else {
                None
            }
        })
        .collect()
}

fn log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(e, yi)| {
            let e = e.clamp(-ETA_CLAMP, ETA_CLAMP);
            // y·η − log(1 + e^η), computed stably
            yi * e - if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() }
        })
        .sum()
}

fn penalized_objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, lambda: f64, pf: &[Option<f64>]) -> f64 {
    let n = y.len() as f64;
    let pen: f64 = beta.iter().zip(pf).map(|(b, p)| p.unwrap_or(0.0) * b.abs()).sum();
    -log_likelihood(x, y, beta) / n + lambda * pen
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Coordinate descent on the quadratic approximation
/// ½βᵀGβ − cᵀβ + λΣ pf_j|β_j|, sweeping the active set to convergence
/// between full sweeps. Returns the number of sweeps.
fn cd_quadratic(g: &DMatrix<f64>, c: &DVector<f64>, beta: &mut DVector<f64>, lambda: f64, pf: &[Option<f64>], tol: f64) -> usize {
    let p = beta.len();
    let mut gb = g * &*beta;
    let mut sweeps = 0;
    let update = |j: usize, beta: &mut DVector<f64>, gb: &mut DVector<f64>| -> f64 {
        let Some(w) = pf[j] else { return 0.0 };
        let gjj = g[(j, j)];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let z = c[j] - gb[j] + gjj * old;
        let new = soft_threshold(z, lambda * w) / gjj;
        if new != old {
            let d = new - old;
            beta[j] = new;
            for k in 0..p {
                gb[k] += g[(k, j)] * d;
            }
            d * d * gjj
        } else {
            0.0
        }
    };
    loop {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, beta, &mut gb));
        }
        sweeps += 1;
        if max_change < tol || sweeps >= MAX_PASSES {
            return sweeps;
        }
        loop {
            let active: Vec<usize> = (0..p).filter(|j| beta[*j] != 0.0).collect();
            let mut max_change: f64 = 0.0;
            for &j in &active {
                max_change = max_change.max(update(j, beta, &mut gb));
            }
            sweeps += 1;
            if max_change < tol || sweeps >= MAX_PASSES {
                break;
            }
        }
    }
}

/// `XᵀWX/n` with IRLS weights at the linear predictor `eta`.
fn irls_gram(x: &DMatrix<f64>, eta: &DVector<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let w = eta.map(|e| {
        let q = sigmoid(e);
        (q * (1.0 - q)).max(1e-5) / n
    });
    weighted_gram(x, &w)
}

/// Solves the penalized problem at one λ from a warm start. The weighted
/// Gram matrix is reused across steps (fixed-Hessian Newton) and refreshed
/// after large steps or any backtracking. Returns coordinate sweeps.
fn solve_lambda(x: &DMatrix<f64>, y: &[f64], beta: &mut DVector<f64>, lambda: f64, pf: &[Option<f64>]) -> Result<usize> {
    let n = y.len() as f64;
    let mut passes = 0;
    let mut obj = penalized_objective(x, y, beta, lambda, pf);
    let mut gram: Option<DMatrix<f64>> = None;
    for _ in 0..500 {
        let eta = x * &*beta;
        let g = gram.get_or_insert_with(|| irls_gram(x, &eta));
        let resid = DVector::from_fn(y.len(), |i, _| y[i] - sigmoid(eta[i]));
        let c = &*g * &*beta + x.tr_mul(&resid) / n;
        let old = beta.clone();
        let mut cand = beta.clone();
        passes += cd_quadratic(g, &c, &mut cand, lambda, pf, CD_TOL);
        // backtrack so the true objective never increases
        let mut new_obj = penalized_objective(x, y, &cand, lambda, pf);
        let mut halvings = 0;
        let slack = 1e-13 * obj.abs().max(1e-300);
        while new_obj > obj + slack && halvings < 30 {
            cand = (&cand + &old) * 0.5;
            new_obj = penalized_objective(x, y, &cand, lambda, pf);
            halvings += 1;
        }
        if new_obj > obj + slack {
            cand = old.clone();
            new_obj = obj;
        }
        let change = (&cand - &old).amax();
        if halvings > 0 || change > REFRESH_ABOVE {
            gram = None;
        }
        *beta = cand;
        // a flat direction (the intercept against the full set of dummies)
        // keeps coefficients drifting long after the objective has settled
        let done = change < 1e-9 || halvings > 0 || obj - new_obj <= OBJ_TOL * obj.abs();
        obj = new_obj;
        if passes >= MAX_PASSES {
            return Err(Error::Convergence {
                iterations: passes,
                detail: format!("logit lasso at λ={lambda:.3e}, objective {obj:.6e}"),
            });
        }
        if done {
            break;
        }
    }
    Ok(passes)
}

/// Largest violation of the lasso optimality conditions at `beta`.
pub fn kkt_violation(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, lambda: f64, pf: &[Option<f64>]) -> f64 {
    let n = y.len() as f64;
    let eta = x * beta;
    let resid = DVector::from_fn(y.len(), |i, _| y[i] - sigmoid(eta[i]));
    let grad = x.transpose() * resid / n;
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let Some(w) = pf[j] else { continue };
        let v = if beta[j] != 0.0 {
            (grad[j] - lambda * w * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - lambda * w).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Smallest λ at which every penalized coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], pf: &[Option<f64>]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let mut m: f64 = 0.0;
    for j in 0..x.ncols() {
        if let Some(w) = pf[j] {
            if w > 0.0 {
                let s: f64 = x.column(j).iter().zip(y).map(|(xi, yi)| xi * (yi - ybar)).sum();
                m = m.max(s.abs() / n / w);
            }
        }
    }
    m
}

/// Result of solving along an explicit λ sequence.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub betas: Vec<DVector<f64>>,
    pub log_likelihoods: Vec<f64>,
}

/// Solves the lasso along `lambdas` (in the given order, warm-started) on an
/// already standardized design whose column 0 is the intercept.
pub fn logit_lasso_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64], pf: &[Option<f64>]) -> Result<LassoPath> {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let mut beta = DVector::zeros(x.ncols());
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut betas = Vec::with_capacity(lambdas.len());
    let mut lls = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        solve_lambda(x, y, &mut beta, lam, pf)?;
        lls.push(log_likelihood(x, y, &beta));
        betas.push(beta.clone());
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        betas,
        log_likelihoods: lls,
    })
}

fn check_labels(y: &[bool]) -> Result<Vec<f64>> {
    let ones = y.iter().filter(|v| **v).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::Estimation(format!(
            "logit needs both outcomes; got {ones} of {} positive",
            y.len()
        )));
    }
    Ok(y.iter().map(|v| *v as u8 as f64).collect())
}

/// Fits the lasso path on `grid_size` λ values from λ_max down to
/// λ_max·1e-4 and keeps the BIC-minimizing solution.
pub fn fit_logit_lasso(x: &FeatureMatrix, y: &[bool], grid_size: usize) -> Result<LogitLassoFit> {
    if x.nrows() != y.len() {
        return Err(Error::Input("design rows and labels differ in length".into()));
    }
    if x.names.first().map(String::as_str) != Some(INTERCEPT) {
        return Err(Error::Input("logit design must start with the intercept column".into()));
    }
    if grid_size < 2 {
        return Err(Error::Config("λ grid needs at least two values".into()));
    }
    let yf = check_labels(y)?;
    let (xs, stats) = standardize(x, None)?;
    let pf = penalty_factors(&stats);
    let lmax = lambda_max(&xs.data, &yf, &pf).max(1e-12);
    let ratio: f64 = 1e-4;
    let lambdas: Vec<f64> = (0..grid_size)
        .map(|k| lmax * ratio.powf(k as f64 / (grid_size - 1) as f64))
        .collect();
    let path = logit_lasso_path(&xs.data, &yf, &lambdas, &pf)?;
    let n = y.len() as f64;
    let bic_path: Vec<f64> = path
        .betas
        .iter()
        .zip(&path.log_likelihoods)
        .map(|(b, ll)| -2.0 * ll + b.iter().filter(|v| **v != 0.0).count() as f64 * n.ln())
        .collect();
    let best = bic_path
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty path");
    debug!(
        "logit lasso: λ_max={lmax:.4e}, selected λ={:.4e} with {} nonzero",
        lambdas[best],
        path.betas[best].iter().filter(|v| **v != 0.0).count()
    );
    Ok(LogitLassoFit {
        names: x.names.clone(),
        beta: path.betas[best].iter().copied().collect(),
        lambda_selected: lambdas[best],
        lambdas,
        bic_path,
        standardization: stats,
        n_obs: y.len(),
    })
}
