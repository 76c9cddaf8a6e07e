//! Synthetic markets drawn from the recursive zero-inflated t process, with
//! the generating parameters kept as ground truth.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{delivery_start, FundamentalRow, GridSpec, PriceGrid, TradeRecord};
use super::io::{write_da_prices, write_grid_store, write_trades};
use super::MarketData;
use crate::designmatrix::{
    build_logit_features, build_mu_features, build_sigma_features, logit_feature_names, sigma_feature_names,
    weekday_dummies,
};
use crate::error::{Error, Result};
use crate::statcore::{link_g2_inverse, rng_from_seed, substream_seed, zit_sample, SimRng, ZeroInflatedTParams};

/// Smooth of the previous price: `amp * ((p - center) / scale)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSmooth {
    pub amp: f64,
    pub center: f64,
    pub scale: f64,
}

impl PriceSmooth {
    pub fn eval(&self, p: f64) -> f64 {
        let z = (p - self.center) / self.scale;
        self.amp * z * z
    }
}

/// Smooth of the step index: `amp * exp(-(steps - t) / decay) + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSmooth {
    pub amp: f64,
    pub decay: f64,
    pub shift: f64,
}

impl StepSmooth {
    pub fn eval(&self, t: f64, steps: usize) -> f64 {
        self.amp * (-(steps as f64 - t) / self.decay).exp() + self.shift
    }
}

struct AlignedTruth {
    logit: Vec<f64>,
    sigma: Vec<f64>,
}

/// Generating parameters. Coefficients act on raw (unstandardized) features
/// and are keyed by feature name; absent names have coefficient zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTruth {
    pub logit: BTreeMap<String, f64>,
    /// Replaces the logistic model (and the pre-origin rate) by a constant.
    pub pi_override: Option<f64>,
    pub mu: [f64; 3],
    pub sigma: BTreeMap<String, f64>,
    pub sigma_price: PriceSmooth,
    pub sigma_step: StepSmooth,
    pub nu: f64,
    pub pre_origin_pi: f64,
    pub pre_origin_sigma: f64,
    pub da_mean: f64,
    pub da_sd: f64,
}

impl Default for SyntheticTruth {
    fn default() -> Self {
        let mut logit = BTreeMap::new();
        logit.insert("intercept".to_string(), -0.3);
        for j in 1..=31 {
            logit.insert(format!("ttm_{j}"), 0.05 * j as f64);
        }
        logit.insert("alphabar_1".into(), 0.6);
        logit.insert("alphabar_3".into(), 0.4);
        logit.insert("absdp_lag1".into(), 0.1);
        logit.insert("da_load".into(), 1e-5);
        logit.insert("sat".into(), -0.3);
        logit.insert("sun".into(), -0.4);
        let sigma = [
            ("intercept", 0.2),
            ("absdp_lag1", 0.35),
            ("absdp_lag2", 0.1),
            ("absdp_lag3", 0.05),
            ("absdp_sum7_12", 0.02),
            ("sat", 0.4),
            ("sun", 0.6),
            ("da_wind_on", 3e-5),
            ("alpha_lag1", -0.5),
            ("alpha_lag2", -0.25),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            logit,
            pi_override: None,
            mu: [-0.4, -0.2, -0.1],
            sigma,
            sigma_price: PriceSmooth {
                amp: 0.3,
                center: 40.0,
                scale: 30.0,
            },
            sigma_step: StepSmooth {
                amp: 0.8,
                decay: 3.0,
                shift: -0.1,
            },
            nu: 5.0,
            pre_origin_pi: 0.6,
            pre_origin_sigma: 1.5,
            da_mean: 40.0,
            da_sd: 10.0,
        }
    }
}

impl SyntheticTruth {
    /// Always trading, zero location, constant σ: a pure t random walk.
    pub fn random_walk(sigma: f64, nu: f64) -> Self {
        let mut s = BTreeMap::new();
        s.insert("intercept".to_string(), crate::statcore::link_g2(sigma).unwrap_or(f64::NAN));
        Self {
            logit: BTreeMap::new(),
            pi_override: Some(1.0),
            mu: [0.0; 3],
            sigma: s,
            sigma_price: PriceSmooth {
                amp: 0.0,
                center: 0.0,
                scale: 1.0,
            },
            sigma_step: StepSmooth {
                amp: 0.0,
                decay: 1.0,
                shift: 0.0,
            },
            nu,
            pre_origin_pi: 1.0,
            pre_origin_sigma: sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.nu > 2.0) || !self.nu.is_finite() {
            return Err(Error::Config(format!("degrees of freedom must exceed 2, got {}", self.nu)));
        }
        let logit_names = logit_feature_names(steps);
        if let Some(k) = self.logit.keys().find(|k| !logit_names.contains(k)) {
            return Err(Error::Config(format!("unknown logit feature {k:?}")));
        }
        let sigma_names = sigma_feature_names();
        if let Some(k) = self.sigma.keys().find(|k| !sigma_names.contains(k)) {
            return Err(Error::Config(format!("unknown sigma feature {k:?}")));
        }
        let probs = [Some(self.pre_origin_pi), self.pi_override];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("trade probabilities must lie in [0, 1]".into()));
        }
        if !(self.pre_origin_sigma > 0.0) || !(self.da_sd >= 0.0) {
            return Err(Error::Config("pre-origin σ must be positive and DA sd non-negative".into()));
        }
        if self.sigma.values().chain(self.logit.values()).chain(&self.mu).any(|v| !v.is_finite()) {
            return Err(Error::Config("truth coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Coefficients laid out in design-matrix column order.
    fn aligned(coefs: &BTreeMap<String, f64>, names: &[String]) -> Vec<f64> {
        names.iter().map(|n| coefs.get(n).copied().unwrap_or(0.0)).collect()
    }

    fn coefs(&self, steps: usize) -> AlignedTruth {
        AlignedTruth {
            logit: Self::aligned(&self.logit, &logit_feature_names(steps)),
            sigma: Self::aligned(&self.sigma, &sigma_feature_names()),
        }
    }

    /// Mixture parameters of step `t` given the grid history before it.
    pub fn step_params(&self, grid: &PriceGrid, f: &FundamentalRow, t: usize) -> Result<ZeroInflatedTParams> {
        self.step_params_with(&self.coefs(grid.steps()), grid, f, t)
    }

    fn step_params_with(
        &self,
        coefs: &AlignedTruth,
        grid: &PriceGrid,
        f: &FundamentalRow,
        t: usize,
    ) -> Result<ZeroInflatedTParams> {
        let steps = grid.steps();
        let dot = |b: &[f64], x: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        let pi = match self.pi_override {
            Some(p) => p,
            None => {
                let row = build_logit_features(grid, f, t)?;
                1.0 / (1.0 + (-dot(&coefs.logit, &row)).exp())
            }
        };
        let mu_row = build_mu_features(grid, t)?;
        let mu = dot(&self.mu, &mu_row);
        let (srow, [p_prev, tt]) = build_sigma_features(grid, f, t)?;
        let eta = dot(&coefs.sigma, &srow) + self.sigma_price.eval(p_prev) + self.sigma_step.eval(tt, steps);
        let sigma = link_g2_inverse(eta);
        if !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::Config(format!("truth produced non-finite σ or μ at step {t}")));
        }
        ZeroInflatedTParams::new(pi, mu, sigma, self.nu).map_err(|e| Error::Config(e.to_string()))
    }

    fn pre_origin_params(&self) -> Result<ZeroInflatedTParams> {
        let pi = self.pi_override.unwrap_or(self.pre_origin_pi);
        ZeroInflatedTParams::new(pi, 0.0, self.pre_origin_sigma, self.nu).map_err(|e| Error::Config(e.to_string()))
    }

    /// Draws steps 1..T onto `grid` in place, overwriting anything there.
    pub fn continue_grid<R: Rng + ?Sized>(&self, grid: &mut PriceGrid, f: &FundamentalRow, rng: &mut R) -> Result<()> {
        self.continue_with(&self.coefs(grid.steps()), grid, f, rng)
    }

    fn continue_with<R: Rng + ?Sized>(
        &self,
        coefs: &AlignedTruth,
        grid: &mut PriceGrid,
        f: &FundamentalRow,
        rng: &mut R,
    ) -> Result<()> {
        for t in 1..=grid.steps() {
            let params = self.step_params_with(coefs, grid, f, t)?;
            let (alpha, d) = zit_sample(&params, rng);
            grid.set_window(grid.origin_index + t, alpha, d);
        }
        Ok(())
    }

    /// `m` price paths (rows) for steps 1..T from the true process, each
    /// continuing the observed history up to the origin.
    pub fn simulate_paths<R: Rng + ?Sized>(
        &self,
        grid: &PriceGrid,
        f: &FundamentalRow,
        m: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let steps = grid.steps();
        let mut out = DMatrix::zeros(m, steps);
        let mut work = grid.clone();
        let coefs = self.coefs(steps);
        for j in 0..m {
            self.continue_with(&coefs, &mut work, f, rng)?;
            for (t, p) in work.future_prices().iter().enumerate() {
                out[(j, t)] = *p;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub hours: Vec<u32>,
    pub spec: GridSpec,
    pub truth: SyntheticTruth,
}

impl SynthConfig {
    /// `products` delivery hours spread evenly over the day.
    pub fn new(days: usize, products: usize) -> Self {
        let hours = (0..products).map(|s| (8 + s * 24 / products.max(1)) as u32 % 24).collect();
        Self {
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            days,
            hours,
            spec: GridSpec::default(),
            truth: SyntheticTruth::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.truth.validate(self.spec.steps)?;
        if self.days == 0 || self.hours.is_empty() {
            return Err(Error::Config("synthetic market needs at least one day and one product".into()));
        }
        if self.hours.iter().any(|h| *h > 23) {
            return Err(Error::Config("delivery hours must be in 0..=23".into()));
        }
        let mut h = self.hours.clone();
        h.sort_unstable();
        h.dedup();
        if h.len() != self.hours.len() {
            return Err(Error::Config("delivery hours must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub config: SynthConfig,
    pub data: MarketData,
    pub da_prices: BTreeMap<(NaiveDate, u32), f64>,
}

fn synth_fundamentals(day: NaiveDate, hour: u32, rng: &mut SimRng) -> FundamentalRow {
    let h = hour as f64;
    let daylight = ((h - 6.0) * PI / 12.0).sin().max(0.0);
    let [_, sat, sun] = weekday_dummies(day);
    let z: f64 = rng.sample(StandardNormal);
    let da_load = (45_000.0 + 10_000.0 * daylight - 6_000.0 * (sat + sun) + 2_500.0 * z).max(5_000.0);
    let da_solar = 25_000.0 * daylight * rng.random_range(0.3..1.0);
    let zw: f64 = rng.sample(StandardNormal);
    let da_wind_on = 15_000.0 * (0.6 * zw).exp();
    let zo: f64 = rng.sample(StandardNormal);
    let da_wind_off = 3_000.0 * (0.5 * zo).exp();
    FundamentalRow {
        day,
        hour,
        da_load,
        da_solar,
        da_wind_on,
        da_wind_off,
    }
}

/// Draws a full synthetic market. Every product-day uses its own substream
/// of `seed`, so output does not depend on generation order.
pub fn generate_synthetic_market(config: &SynthConfig, seed: u64) -> Result<SyntheticMarket> {
    config.validate()?;
    let spec = config.spec;
    let truth = &config.truth;
    let pre = truth.pre_origin_params()?;
    let mut grids = Vec::new();
    let mut funds = BTreeMap::new();
    let mut da_prices = BTreeMap::new();
    for k in 0..config.days {
        let day = config.start + Duration::days(k as i64);
        for &hour in &config.hours {
            let mut rng = rng_from_seed(substream_seed(seed, &["synth", &day.to_string(), &hour.to_string()]));
            let f = synth_fundamentals(day, hour, &mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let da = truth.da_mean + truth.da_sd * z;
            let n = spec.len();
            let mut grid = PriceGrid {
                day,
                hour,
                origin_index: spec.origin_index(),
                prices: vec![da; n],
                traded: vec![false; n],
                diffs: vec![0.0; n],
                da_price: da,
                carry_in: da,
            };
            for i in 0..=spec.origin_index() {
                let (alpha, d) = zit_sample(&pre, &mut rng);
                grid.set_window(i, alpha, d);
            }
            truth.continue_grid(&mut grid, &f, &mut rng)?;
            grid.validate()?;
            grids.push(grid);
            funds.insert((day, hour), f);
            da_prices.insert((day, hour), da);
        }
    }
    Ok(SyntheticMarket {
        config: config.clone(),
        data: MarketData::new(spec, grids, funds)?,
        da_prices,
    })
}

/// One trade per traded window, placed mid-window, with the window's price.
/// Ingesting these trades with the same day-ahead prices rebuilds the grids.
pub fn render_trades(data: &MarketData) -> Vec<TradeRecord> {
    let spec = data.spec;
    let mut out = Vec::new();
    for g in data.grids() {
        let b = delivery_start(g.day, g.hour);
        for i in (0..g.len()).filter(|i| g.traded[*i]) {
            let secs = spec.window_end_minutes(i) * 60 + spec.window_minutes * 30;
            out.push(TradeRecord {
                delivery_day: g.day,
                delivery_hour: g.hour,
                exec_time: b - Duration::seconds(secs),
                price: g.prices[i],
                volume: 1.0,
            });
        }
    }
    out
}

/// Writes the grid store, day-ahead prices, ground truth and (optionally)
/// a trade-level rendering into `dir`.
pub fn write_synthetic_market(dir: &Path, market: &SyntheticMarket, with_trades: bool) -> Result<()> {
    write_grid_store(dir, &market.data)?;
    write_da_prices(&dir.join("da_prices.csv"), &market.da_prices)?;
    fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&market.config)? + "\n")?;
    if with_trades {
        write_trades(&dir.join("trades.csv"), &render_trades(&market.data))?;
    }
    Ok(())
}
