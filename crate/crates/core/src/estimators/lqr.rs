//! Linear quantile regression on forecast-origin regressors, one model per
//! horizon and quantile level, and the monotone marginal CDFs built from it.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designmatrix::{standardize, FeatureMatrix, Standardization};
use crate::error::{Error, Result};
use crate::statcore::linalg::{solve_spd, weighted_gram};
use crate::statcore::MonotoneCdf;

pub const DEFAULT_MIN_DAYS: usize = 150;
/// Initial half-width of the smoothed check function; each later stage is
/// ten times narrower.
const SMOOTHING: [f64; 3] = [1e-4, 1e-5, 1e-6];
const MAX_ITER_PER_STAGE: usize = 200;
const RIDGE: f64 = 1e-8;
/// A stage ends once an iteration lowers the pinball loss by less than this
/// relative amount.
const STAGE_TOL: f64 = 1e-6;
/// Separation enforced between CDF knots that would otherwise coincide.
const KNOT_GAP: f64 = 1e-9;

/// Quantile levels 0.01, 0.02, ..., 0.99.
pub fn quantile_levels() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrFit {
    pub names: Vec<String>,
    pub standardization: Standardization,
    pub taus: Vec<f64>,
    /// `coefs[t - 1]` is `p × 99`, standardized scale; constant columns are 0.
    pub coefs: Vec<DMatrix<f64>>,
    pub support: Vec<(f64, f64)>,
    pub n_obs: usize,
}

impl LqrFit {
    pub fn steps(&self) -> usize {
        self.coefs.len()
    }

    /// Fitted quantiles (in τ order, possibly crossing) for a raw row.
    pub fn quantiles(&self, raw: &[f64], t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > self.steps() {
            return Err(Error::Precondition(format!("horizon {t} outside 1..={}", self.steps())));
        }
        if raw.len() != self.names.len() {
            return Err(Error::Contract(format!(
                "quantile regression row has {} features, fit has {}",
                raw.len(),
                self.names.len()
            )));
        }
        let mut x = raw.to_vec();
        self.standardization.apply_row(&mut x);
        let b = &self.coefs[t - 1];
        Ok((0..b.ncols()).map(|k| (0..x.len()).map(|j| x[j] * b[(j, k)]).sum()).collect())
    }
}

/// Pinball (check) loss summed over residuals.
pub fn pinball_total(residuals: impl IntoIterator<Item = f64>, tau: f64) -> f64 {
    residuals
        .into_iter()
        .map(|r| if r >= 0.0 { tau * r } else { (tau - 1.0) * r })
        .sum()
}

/// Minimizes the pinball loss by majorize-minimize reweighted least squares
/// on a smoothed check function, starting from `beta`.
pub fn quantile_regression(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, beta: &mut DVector<f64>) -> Result<()> {
    let (n, p) = x.shape();
    let ones_x = DVector::from_fn(p, |j, _| x.column(j).sum()) * (2.0 * tau - 1.0);
    let obj = |b: &DVector<f64>| pinball_total((y - x * b).iter().copied(), tau);
    let mut best = beta.clone();
    let mut best_obj = obj(beta);
    let mut prev_obj = best_obj;
    for h in SMOOTHING {
        for _ in 0..MAX_ITER_PER_STAGE {
            let r = y - x * &*beta;
            let w = r.map(|v| 1.0 / v.abs().max(h));
            let mut g = weighted_gram(x, &w);
            for j in 0..p {
                g[(j, j)] += RIDGE;
            }
            let rhs = x.transpose() * w.component_mul(y) + &ones_x;
            let (next, _) = solve_spd(&g, &rhs)?;
            let change = (&next - &*beta).amax();
            let scale = 1.0 + next.amax();
            *beta = next;
            let o = obj(beta);
            let gain = prev_obj - o;
            prev_obj = o;
            if o < best_obj {
                best_obj = o;
                best.copy_from(beta);
            }
            if change < 1e-10 * scale || gain.abs() <= STAGE_TOL * o.abs().max(1e-300) {
                break;
            }
        }
        beta.copy_from(&best);
    }
    if n > 0 && !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("quantile regression diverged".into()));
    }
    Ok(())
}

/// Fits all horizons and quantile levels. `targets` is `n × T` with the
/// origin-to-horizon price differences.
pub fn fit_lqr(x: &FeatureMatrix, targets: &DMatrix<f64>, min_obs: usize) -> Result<LqrFit> {
    let n = x.nrows();
    if n < min_obs {
        return Err(Error::Estimation(format!(
            "quantile regression needs at least {min_obs} in-sample days, got {n}"
        )));
    }
    if targets.nrows() != n {
        return Err(Error::Input("quantile regression targets differ in row count".into()));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite quantile regression target".into()));
    }
    let (xs, stats) = standardize(x, None)?;
    let keep: Vec<usize> = (0..xs.ncols()).filter(|j| *j == 0 || stats.scaled[*j]).collect();
    let xk = xs.data.select_columns(&keep);
    let gram = xk.transpose() * &xk;
    if gram.clone().cholesky().is_none() || gram.clone().symmetric_eigenvalues().min() < 1e-10 * n as f64 {
        warn!("quantile regression design is rank deficient; ridge {RIDGE} applied");
    }
    let taus = quantile_levels();
    let steps = targets.ncols();
    let per_t: Vec<Result<DMatrix<f64>>> = (0..steps)
        .into_par_iter()
        .map(|t| {
            let y = targets.column(t).into_owned();
            let mut b = DVector::zeros(keep.len());
            // start at the lowest quantile level and warm-start upwards
            let mut sorted: Vec<f64> = y.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            b[0] = crate::statcore::stats::quantile_sorted(&sorted, taus[0]);
            let mut out = DMatrix::zeros(xs.ncols(), taus.len());
            for (k, &tau) in taus.iter().enumerate() {
                quantile_regression(&xk, &y, tau, &mut b)?;
                for (i, &j) in keep.iter().enumerate() {
                    out[(j, k)] = b[i];
                }
            }
            Ok(out)
        })
        .collect();
    let coefs = per_t.into_iter().collect::<Result<Vec<_>>>()?;
    let support = (0..steps)
        .map(|t| {
            let c = targets.column(t);
            (c.min(), c.max())
        })
        .collect();
    Ok(LqrFit {
        names: x.names.clone(),
        standardization: stats,
        taus,
        coefs,
        support,
        n_obs: n,
    })
}

/// Monotone CDF of the horizon-`t` difference for a raw origin row: sorted
/// fitted quantiles between the in-sample support endpoints.
pub fn build_marginal_cdf(fit: &LqrFit, raw: &[f64], t: usize) -> Result<MonotoneCdf> {
    let mut q = fit.quantiles(raw, t)?;
    let (lo, hi) = fit.support[t - 1];
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    if q.iter().all(|v| *v < lo - tol || *v > hi + tol) {
        return Err(Error::Estimation(format!("all fitted quantiles at horizon {t} fall outside the support")));
    }
    q.sort_by(f64::total_cmp);
    let mut xs = Vec::with_capacity(q.len() + 2);
    let mut ps = Vec::with_capacity(q.len() + 2);
    xs.push(lo);
    ps.push(0.0);
    for (v, tau) in q.iter().zip(&fit.taus) {
        xs.push(v.clamp(lo, hi));
        ps.push(*tau);
    }
    xs.push(hi);
    ps.push(1.0);
    for k in 1..xs.len() {
        if xs[k] < xs[k - 1] + KNOT_GAP {
            xs[k] = xs[k - 1] + KNOT_GAP;
        }
    }
    MonotoneCdf::new(&xs, &ps)
}
