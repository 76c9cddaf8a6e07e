//! Proper scoring rules and point/interval measures for trajectory
//! ensembles. Every marginal quantity is computed from sorted columns, so
//! permuting members within a column cannot change it by a single bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::quantile_levels;
use crate::statcore::stats::quantile_sorted;

pub const COVERAGE_LEVELS: [f64; 3] = [0.5, 0.9, 0.99];
const DSS_EPS_START: f64 = 1e-8;
const DSS_EPS_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyScore {
    pub es: f64,
    pub ed: f64,
    pub ei: f64,
}

fn check_shape(obs: &[f64], ens: &DMatrix<f64>) -> Result<()> {
    if ens.ncols() != obs.len() {
        return Err(Error::Contract(format!(
            "ensemble has {} steps, observation has {}",
            ens.ncols(),
            obs.len()
        )));
    }
    Ok(())
}

/// `ES = ED - EI/2` with Euclidean distances over the trajectory.
pub fn energy_score(obs: &[f64], ens: &DMatrix<f64>) -> Result<EnergyScore> {
    check_shape(obs, ens)?;
    let (m, t) = ens.shape();
    if m < 2 {
        return Err(Error::Contract(format!("energy score needs at least 2 members, got {m}")));
    }
    // row-major copy for contiguous member access
    let rows: Vec<f64> = (0..m).flat_map(|j| (0..t).map(move |k| (j, k))).map(|(j, k)| ens[(j, k)]).collect();
    let member = |j: usize| &rows[j * t..(j + 1) * t];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let ed = (0..m).map(|j| dist(obs, member(j))).sum::<f64>() / m as f64;
    let mut pair_sum = 0.0;
    for j in 0..m {
        let a = member(j);
        for i in j + 1..m {
            pair_sum += dist(a, member(i));
        }
    }
    let ei = 2.0 * pair_sum / (m * (m - 1)) as f64;
    Ok(EnergyScore { es: ed - ei / 2.0, ed, ei })
}

pub fn pinball(obs: f64, q: f64, tau: f64) -> f64 {
    if obs >= q {
        tau * (obs - q)
    } else {
        (1.0 - tau) * (q - obs)
    }
}

/// Members of each column in ascending order.
pub fn sorted_columns(ens: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..ens.ncols())
        .map(|k| {
            let mut c: Vec<f64> = ens.column(k).iter().copied().collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect()
}

/// Pinball losses at the 99 levels for one sorted marginal sample, and
/// their mean (the CRPS approximation).
pub fn crps_pinball_sorted(obs: f64, sorted: &[f64]) -> (f64, Vec<f64>) {
    let pb: Vec<f64> = quantile_levels()
        .into_iter()
        .map(|tau| pinball(obs, quantile_sorted(sorted, tau), tau))
        .collect();
    (pb.iter().sum::<f64>() / pb.len() as f64, pb)
}

pub fn crps_pinball(obs: f64, members: &[f64]) -> Result<(f64, Vec<f64>)> {
    if members.is_empty() {
        return Err(Error::Contract("CRPS needs at least one member".into()));
    }
    let mut s = members.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(crps_pinball_sorted(obs, &s))
}

/// Variogram score of order 1 with the ensemble term averaged over members.
pub fn variogram_score(obs: &[f64], ens: &DMatrix<f64>) -> Result<f64> {
    check_shape(obs, ens)?;
    let (m, t) = ens.shape();
    if m == 0 {
        return Err(Error::Contract("variogram score needs at least one member".into()));
    }
    let mut total = 0.0;
    for i in 0..t {
        for j in i + 1..t {
            let ens_term = (0..m).map(|k| (ens[(k, i)] - ens[(k, j)]).abs()).sum::<f64>() / m as f64;
            let d = (obs[i] - obs[j]).abs() - ens_term;
            total += 2.0 * d * d;
        }
    }
    Ok(total / (t * t) as f64)
}

/// Ensemble mean computed from sorted columns (order independent).
pub fn ensemble_mean(sorted: &[Vec<f64>]) -> Vec<f64> {
    sorted.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

pub fn ensemble_median(sorted: &[Vec<f64>]) -> Vec<f64> {
    sorted.iter().map(|c| quantile_sorted(c, 0.5)).collect()
}

/// Dawid-Sebastiani score from the ensemble mean and covariance; `None`
/// when the covariance cannot be made positive definite.
pub fn dawid_sebastiani(obs: &[f64], ens: &DMatrix<f64>) -> Result<Option<f64>> {
    check_shape(obs, ens)?;
    let (m, t) = ens.shape();
    if m < t + 1 {
        return Err(Error::Contract(format!("Dawid-Sebastiani score needs at least {} members, got {m}", t + 1)));
    }
    let mean = DVector::from_fn(t, |k, _| ens.column(k).sum() / m as f64);
    let mut centered = ens.clone();
    for k in 0..t {
        for j in 0..m {
            centered[(j, k)] -= mean[k];
        }
    }
    let cov = centered.transpose() * &centered / (m - 1) as f64;
    let avg_var = cov.trace() / t as f64;
    if !(avg_var > 0.0) || !avg_var.is_finite() {
        return Ok(None);
    }
    let mut eps = 0.0;
    loop {
        let mut c = cov.clone();
        for k in 0..t {
            c[(k, k)] += eps * avg_var;
        }
        if let Some(ch) = c.cholesky() {
            let diff = DVector::from_fn(t, |k, _| obs[k] - mean[k]);
            let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let z = ch.l().solve_lower_triangular(&diff).expect("non-singular factor");
            let v = logdet + z.norm_squared();
            return Ok(v.is_finite().then_some(v));
        }
        eps = if eps == 0.0 { DSS_EPS_START } else { eps * 10.0 };
        if eps > DSS_EPS_MAX {
            return Ok(None);
        }
    }
}

/// Strict containment in the central `level` interval of a sorted sample.
pub fn covered(obs: f64, sorted: &[f64], level: f64) -> bool {
    let lo = quantile_sorted(sorted, (1.0 - level) / 2.0);
    let hi = quantile_sorted(sorted, (1.0 + level) / 2.0);
    lo < obs && obs < hi
}

/// All measures for one ensemble against one realized trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayScores {
    pub es: f64,
    pub ed: f64,
    pub ei: f64,
    /// Mean over steps of the per-step CRPS.
    pub crps: f64,
    pub crps_by_step: Vec<f64>,
    /// Pinball loss per level, averaged over steps.
    pub pinball: Vec<f64>,
    pub vs: f64,
    pub dss: Option<f64>,
    /// Mean over steps of |obs − median|.
    pub mae: f64,
    /// Mean over steps of (obs − mean)².
    pub mse: f64,
    /// Fraction of steps covered at 50/90/99%.
    pub coverage: [f64; 3],
}

pub fn score_day(obs: &[f64], ens: &DMatrix<f64>) -> Result<DayScores> {
    check_shape(obs, ens)?;
    let t = obs.len();
    let energy = energy_score(obs, ens)?;
    let sorted = sorted_columns(ens);
    let mut crps_by_step = Vec::with_capacity(t);
    let mut pb_sum = vec![0.0; 99];
    for k in 0..t {
        let (c, pb) = crps_pinball_sorted(obs[k], &sorted[k]);
        crps_by_step.push(c);
        for (acc, v) in pb_sum.iter_mut().zip(pb) {
            *acc += v;
        }
    }
    let mean = ensemble_mean(&sorted);
    let median = ensemble_median(&sorted);
    let mut coverage = [0.0; 3];
    for (c, level) in coverage.iter_mut().zip(COVERAGE_LEVELS) {
        *c = (0..t).filter(|k| covered(obs[*k], &sorted[*k], level)).count() as f64 / t as f64;
    }
    let dss = if ens.nrows() > t { dawid_sebastiani(obs, ens)? } else { None };
    Ok(DayScores {
        es: energy.es,
        ed: energy.ed,
        ei: energy.ei,
        crps: crps_by_step.iter().sum::<f64>() / t as f64,
        crps_by_step,
        pinball: pb_sum.into_iter().map(|v| v / t as f64).collect(),
        vs: variogram_score(obs, ens)?,
        dss,
        mae: (0..t).map(|k| (obs[k] - median[k]).abs()).sum::<f64>() / t as f64,
        mse: (0..t).map(|k| (obs[k] - mean[k]).powi(2)).sum::<f64>() / t as f64,
        coverage,
    })
}

/// Aggregate over product-days, shaped like the usual results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub days: usize,
    pub es: f64,
    pub crps: f64,
    pub vs: f64,
    /// Mean over days with a usable covariance.
    pub dss: Option<f64>,
    pub dss_degenerate: usize,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: [f64; 3],
}

pub fn summarize<'a>(scores: impl IntoIterator<Item = &'a DayScores>) -> Result<ScoreSummary> {
    let mut n = 0usize;
    let (mut es, mut crps, mut vs, mut mae, mut mse) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut cov = [0.0; 3];
    let (mut dss, mut dss_n, mut dss_bad) = (0.0, 0usize, 0usize);
    for s in scores {
        n += 1;
        es += s.es;
        crps += s.crps;
        vs += s.vs;
        mae += s.mae;
        mse += s.mse;
        for k in 0..3 {
            cov[k] += s.coverage[k];
        }
        match s.dss {
            Some(v) => {
                dss += v;
                dss_n += 1;
            }
            None => dss_bad += 1,
        }
    }
    if n == 0 {
        return Err(Error::Input("no scores to summarize".into()));
    }
    if dss_bad > 0 {
        log::warn!("{dss_bad} of {n} product-days have a degenerate ensemble covariance; excluded from DSS");
    }
    let nf = n as f64;
    Ok(ScoreSummary {
        days: n,
        es: es / nf,
        crps: crps / nf,
        vs: vs / nf,
        dss: (dss_n > 0).then(|| dss / dss_n as f64),
        dss_degenerate: dss_bad,
        mae: mae / nf,
        rmse: (mse / nf).sqrt(),
        coverage: cov.map(|c| c / nf),
    })
}
