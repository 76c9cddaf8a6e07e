//! Diebold-Mariano comparison of two models on multivariate daily losses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DAYS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LongRunVariance {
    /// Newey-West with lag ⌊N^{1/3}⌋.
    NeweyWest,
    /// Newey-West with an explicit lag (0 is the plain sample variance).
    Lag(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// p-value of H0 against "A has lower expected loss".
    pub p_a_better: f64,
    /// p-value of H0 against "B has lower expected loss".
    pub p_b_better: f64,
    pub mean_diff: f64,
    pub lag: usize,
}

/// Outcome of a test; identical loss series give no statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DmOutcome {
    Test(DmResult),
    Degenerate,
}

/// Newey-West long-run variance of `x` with Bartlett weights.
pub fn newey_west_variance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma = |k: usize| (k..n).map(|i| c[i] * c[i - k]).sum::<f64>() / n as f64;
    let mut v = gamma(0);
    for k in 1..=lag.min(n - 1) {
        v += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    v
}

/// Standard normal upper tail `1 - Φ(z)` computed without cancellation.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Tests on `Δ_d = ‖L_A^d‖₁ − ‖L_B^d‖₁` with rows as days and columns as
/// products.
pub fn dm_test(loss_a: &DMatrix<f64>, loss_b: &DMatrix<f64>, variance: LongRunVariance) -> Result<DmOutcome> {
    if loss_a.shape() != loss_b.shape() {
        return Err(Error::Contract("loss panels are not aligned".into()));
    }
    let n = loss_a.nrows();
    if n < MIN_DAYS {
        return Err(Error::Precondition(format!("DM test needs at least {MIN_DAYS} days, got {n}")));
    }
    if loss_a.iter().chain(loss_b.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Contract("losses must be finite and non-negative".into()));
    }
    let delta: Vec<f64> = (0..n).map(|d| loss_a.row(d).sum() - loss_b.row(d).sum()).collect();
    Ok(dm_from_differential(&delta, variance))
}

/// Tests on a precomputed loss differential series.
pub fn dm_from_differential(delta: &[f64], variance: LongRunVariance) -> DmOutcome {
    let n = delta.len();
    let lag = match variance {
        LongRunVariance::NeweyWest => (n as f64).cbrt().floor() as usize,
        LongRunVariance::Lag(l) => l,
    };
    let mean = delta.iter().sum::<f64>() / n as f64;
    let v = newey_west_variance(delta, lag);
    let scale = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if !(v > 1e-28 * scale * scale) || !v.is_finite() {
        return DmOutcome::Degenerate;
    }
    let statistic = mean / (v / n as f64).sqrt();
    // A better means a negative differential. The smaller tail is computed
    // once so that swapping the models swaps the p-values bit for bit.
    let small = normal_sf(statistic.abs());
    let (p_a_better, p_b_better) = if statistic < 0.0 { (small, 1.0 - small) } else { (1.0 - small, small) };
    DmOutcome::Test(DmResult {
        statistic,
        p_a_better,
        p_b_better,
        mean_diff: mean,
        lag,
    })
}
