//! The twelve forecasting models behind one interface: fit on an in-sample
//! window of product-days, then simulate an `M × T` price ensemble.

mod ensemble;

pub use ensemble::{read_ensemble, read_ensemble_meta, write_ensemble, Ensemble, EnsembleMeta};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use log::debug;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::designmatrix::{
    build_logit_features, build_lqr_features, build_mu_features, build_sigma_features, logit_feature_names,
    lqr_feature_names, sigma_feature_names, FeatureMatrix,
};
use crate::error::{Error, Result};
use crate::estimators::{
    build_marginal_cdf, fit_logit_lasso, fit_lqr, fit_mv, fit_t_const, fit_t_gamlss, LogitLassoFit, LqrFit, MvFamily,
    MvFit, TGamData, TGamFit, TGamVariant, DEFAULT_MIN_DAYS,
};
use crate::marketdata::{FundamentalRow, MarketData, PriceGrid};
use crate::statcore::linalg::correlation_matrix;
use crate::statcore::tdist::sample_std_t;
use crate::statcore::{copula_uniforms, CopulaKind};

/// Version tag of the fitted-model JSON document.
pub const FIT_FORMAT_VERSION: u32 = 1;
/// Simulated trade probabilities are kept inside `[PI_CLAMP, 1 - PI_CLAMP]`.
pub const PI_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "Naive")]
    Naive,
    #[serde(rename = "MV.N")]
    MvN,
    #[serde(rename = "MV.t")]
    MvT,
    #[serde(rename = "RW.N")]
    RwN,
    #[serde(rename = "RW.t")]
    RwT,
    #[serde(rename = "RW.t.mix.D")]
    RwTMixD,
    #[serde(rename = "LQR.Gauss")]
    LqrGauss,
    #[serde(rename = "LQR.ind")]
    LqrInd,
    #[serde(rename = "Mix.RW.t")]
    MixRwT,
    #[serde(rename = "Mix.t.mu")]
    MixTMu,
    #[serde(rename = "Mix.t.sigma")]
    MixTSigma,
    #[serde(rename = "Mix.t.mu.sigma")]
    MixTMuSigma,
}

impl ModelId {
    pub const ALL: [ModelId; 12] = [
        ModelId::Naive,
        ModelId::MvN,
        ModelId::MvT,
        ModelId::RwN,
        ModelId::RwT,
        ModelId::RwTMixD,
        ModelId::LqrGauss,
        ModelId::LqrInd,
        ModelId::MixRwT,
        ModelId::MixTMu,
        ModelId::MixTSigma,
        ModelId::MixTMuSigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Naive => "Naive",
            ModelId::MvN => "MV.N",
            ModelId::MvT => "MV.t",
            ModelId::RwN => "RW.N",
            ModelId::RwT => "RW.t",
            ModelId::RwTMixD => "RW.t.mix.D",
            ModelId::LqrGauss => "LQR.Gauss",
            ModelId::LqrInd => "LQR.ind",
            ModelId::MixRwT => "Mix.RW.t",
            ModelId::MixTMu => "Mix.t.mu",
            ModelId::MixTSigma => "Mix.t.sigma",
            ModelId::MixTMuSigma => "Mix.t.mu.sigma",
        }
    }

    fn mix_variant(self) -> Option<TGamVariant> {
        match self {
            ModelId::MixRwT => Some(TGamVariant::ConstSigma),
            ModelId::MixTMu => Some(TGamVariant::MuOnly),
            ModelId::MixTSigma => Some(TGamVariant::SigmaOnly),
            ModelId::MixTMuSigma => Some(TGamVariant::MuAndSigma),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model id {s:?}")))
    }
}

/// Parses a comma-separated model list; `all` selects every model.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelId>> {
    if s.trim() == "all" {
        return Ok(ModelId::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let id: ModelId = part.parse()?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty model list".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Lasso path length for the trade-probability model.
    pub logit_grid_size: usize,
    /// Minimum in-sample days for quantile regression.
    pub lqr_min_days: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            logit_grid_size: 100,
            lqr_min_days: DEFAULT_MIN_DAYS,
        }
    }
}

/// A product-day: its price grid and day-ahead fundamentals.
#[derive(Debug, Clone, Copy)]
pub struct DayState<'a> {
    pub grid: &'a PriceGrid,
    pub fundamentals: &'a FundamentalRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedParams {
    /// In-sample difference trajectories, one per day.
    Naive { trajectories: Vec<Vec<f64>> },
    Mv(MvFit),
    /// Constant-law random walk; `nu = None` is the normal law and `pi`
    /// is the no-trade mixing weight when present.
    RandomWalk { sigma: f64, nu: Option<f64>, pi: Option<f64> },
    Lqr { fit: LqrFit, correlation: Option<DMatrix<f64>> },
    Mix { logit: LogitLassoFit, t: TGamFit },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub id: ModelId,
    pub steps: usize,
    pub n_days: usize,
    pub params: FittedParams,
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedModel = serde_json::from_str(s)?;
        if m.format_version != FIT_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "fitted model format {} is not supported (expected {FIT_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

impl<'a> DayState<'a> {
    /// The product-day `(day, hour)` of `data`.
    pub fn of(data: &'a MarketData, day: NaiveDate, hour: u32) -> Result<Self> {
        let grid = data
            .grid(day, hour)
            .ok_or_else(|| Error::Data(format!("no price grid for {day} h{hour}")))?;
        Ok(Self {
            grid,
            fundamentals: data.fundamentals(day, hour)?,
        })
    }

    /// All product-days of delivery hour `hour` within `days`.
    pub fn window(data: &'a MarketData, hour: u32, days: &[NaiveDate]) -> Result<Vec<Self>> {
        days.iter().map(|d| Self::of(data, *d, hour)).collect()
    }
}

fn check_window(days: &[DayState]) -> Result<usize> {
    let first = days.first().ok_or_else(|| Error::Input("empty in-sample window".into()))?;
    let steps = first.grid.steps();
    for d in days {
        if d.grid.steps() != steps || d.grid.origin_index != first.grid.origin_index {
            return Err(Error::Input("in-sample grids differ in layout".into()));
        }
        if d.fundamentals.day != d.grid.day || d.fundamentals.hour != d.grid.hour {
            return Err(Error::Data(format!("fundamentals do not match grid {} h{}", d.grid.day, d.grid.hour)));
        }
    }
    Ok(steps)
}

/// `D × T` matrix of step differences over the simulated span.
pub fn diff_matrix(days: &[DayState]) -> DMatrix<f64> {
    let steps = days[0].grid.steps();
    DMatrix::from_fn(days.len(), steps, |i, t| days[i].grid.future_diffs()[t])
}

fn all_diffs(days: &[DayState], traded_only: bool) -> Vec<f64> {
    days.iter()
        .flat_map(|d| {
            d.grid
                .future_diffs()
                .iter()
                .zip(d.grid.future_traded())
                .filter(move |(_, a)| !traded_only || **a)
                .map(|(v, _)| *v)
        })
        .collect()
}

fn fit_mix(days: &[DayState], variant: TGamVariant, opts: &ModelOptions) -> Result<FittedParams> {
    let steps = days[0].grid.steps();
    let mut logit_rows = Vec::with_capacity(days.len() * steps);
    let mut labels = Vec::with_capacity(days.len() * steps);
    let mut mu_rows = Vec::new();
    let mut sigma_rows = Vec::new();
    let mut inputs = Vec::new();
    let mut y = Vec::new();
    for d in days {
        for t in 1..=steps {
            let traded = d.grid.future_traded()[t - 1];
            logit_rows.push(build_logit_features(d.grid, d.fundamentals, t)?);
            labels.push(traded);
            if traded {
                mu_rows.push(build_mu_features(d.grid, t)?);
                let (row, sp) = build_sigma_features(d.grid, d.fundamentals, t)?;
                sigma_rows.push(row);
                inputs.push(sp);
                y.push(d.grid.future_diffs()[t - 1]);
            }
        }
    }
    let x = FeatureMatrix::from_rows(logit_feature_names(steps), &logit_rows)?;
    let logit = fit_logit_lasso(&x, &labels, opts.logit_grid_size)?;
    let n = y.len();
    let data = TGamData {
        mu_x: DMatrix::from_fn(n, 3, |i, j| mu_rows[i][j]),
        sigma_x: FeatureMatrix::from_rows(sigma_feature_names(), &sigma_rows)?,
        spline_inputs: inputs,
        y,
    };
    let t = fit_t_gamlss(&data, variant)?;
    Ok(FittedParams::Mix { logit, t })
}

/// Origin-to-horizon price differences, `D × T`.
fn lqr_targets(days: &[DayState]) -> DMatrix<f64> {
    let steps = days[0].grid.steps();
    DMatrix::from_fn(days.len(), steps, |i, t| {
        days[i].grid.future_prices()[t] - days[i].grid.origin_price()
    })
}

fn fit_lqr_model(days: &[DayState], gaussian: bool, opts: &ModelOptions) -> Result<FittedParams> {
    let rows = days
        .iter()
        .map(|d| build_lqr_features(d.grid, d.fundamentals))
        .collect::<Result<Vec<_>>>()?;
    let x = FeatureMatrix::from_rows(lqr_feature_names(), &rows)?;
    let targets = lqr_targets(days);
    let fit = fit_lqr(&x, &targets, opts.lqr_min_days)?;
    let correlation = gaussian.then(|| correlation_matrix(&targets));
    Ok(FittedParams::Lqr { fit, correlation })
}

/// Fits model `id` on the in-sample window `days` (all the same product).
pub fn fit_model(id: ModelId, days: &[DayState], opts: &ModelOptions) -> Result<FittedModel> {
    let inner = || -> Result<FittedModel> {
        let steps = check_window(days)?;
        let params = match id {
            ModelId::Naive => FittedParams::Naive {
                trajectories: days.iter().map(|d| d.grid.future_diffs().to_vec()).collect(),
            },
            ModelId::MvN => FittedParams::Mv(fit_mv(&diff_matrix(days), MvFamily::Normal)?),
            ModelId::MvT => FittedParams::Mv(fit_mv(&diff_matrix(days), MvFamily::T)?),
            ModelId::RwN => {
                let d = all_diffs(days, false);
                let sigma = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
                if !(sigma > 0.0) {
                    return Err(Error::Estimation("all in-sample differences are zero".into()));
                }
                FittedParams::RandomWalk { sigma, nu: None, pi: None }
            }
            ModelId::RwT => {
                let fit = fit_t_const(&all_diffs(days, false))?;
                FittedParams::RandomWalk {
                    sigma: fit.sigma(&[1.0], [0.0, 0.0]),
                    nu: Some(fit.nu),
                    pi: None,
                }
            }
            ModelId::RwTMixD => {
                let total = days.len() * steps;
                let traded = days.iter().flat_map(|d| d.grid.future_traded()).filter(|a| **a).count();
                let pi = traded as f64 / total as f64;
                let d = all_diffs(days, true);
                let (sigma, nu) = if d.len() >= crate::estimators::gamlss::MIN_OBS {
                    let fit = fit_t_const(&d)?;
                    (fit.sigma(&[1.0], [0.0, 0.0]), fit.nu)
                } else if pi == 0.0 {
                    // never draws from the t; any valid law will do
                    (1.0, 5.0)
                } else {
                    return Err(Error::Estimation(format!("only {} traded differences in-sample", d.len())));
                };
                FittedParams::RandomWalk { sigma, nu: Some(nu), pi: Some(pi) }
            }
            ModelId::LqrGauss => fit_lqr_model(days, true, opts)?,
            ModelId::LqrInd => fit_lqr_model(days, false, opts)?,
            ModelId::MixRwT | ModelId::MixTMu | ModelId::MixTSigma | ModelId::MixTMuSigma => {
                fit_mix(days, id.mix_variant().expect("mixture id"), opts)?
            }
        };
        debug!("fitted {id} on {} days", days.len());
        Ok(FittedModel {
            format_version: FIT_FORMAT_VERSION,
            id,
            steps,
            n_days: days.len(),
            params,
        })
    };
    inner().map_err(|e| e.for_model(id.name()))
}

/// Fits several models on one window. The two quantile-regression models
/// share their regression fit and differ only in the copula.
pub fn fit_models(ids: &[ModelId], days: &[DayState], opts: &ModelOptions) -> Vec<Result<FittedModel>> {
    let mut lqr: Option<FittedModel> = None;
    ids.iter()
        .map(|&id| match (id, &lqr) {
            (ModelId::LqrGauss | ModelId::LqrInd, Some(shared)) => {
                let mut m = shared.clone();
                m.id = id;
                if let FittedParams::Lqr { correlation, .. } = &mut m.params {
                    *correlation = (id == ModelId::LqrGauss).then(|| correlation_matrix(&lqr_targets(days)));
                }
                Ok(m)
            }
            (ModelId::LqrGauss | ModelId::LqrInd, None) => {
                let m = fit_model(id, days, opts)?;
                lqr = Some(m.clone());
                Ok(m)
            }
            _ => fit_model(id, days, opts),
        })
        .collect()
}

fn draw_t<R: Rng + ?Sized>(sigma: f64, nu: Option<f64>, rng: &mut R) -> f64 {
    match nu {
        Some(nu) => sigma * ((nu - 2.0) / nu).sqrt() * sample_std_t(nu, rng),
        None => sigma * rng.sample::<f64, _>(StandardNormal),
    }
}

impl FittedModel {
    /// Simulates `m` price trajectories for the target product-day. Only the
    /// history up to the forecast origin of `target` is read.
    pub fn simulate<R: Rng + ?Sized>(&self, target: DayState, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        self.simulate_inner(target, m, rng).map_err(|e| e.for_model(self.id.name()))
    }

    fn simulate_inner<R: Rng + ?Sized>(&self, target: DayState, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let grid = target.grid;
        let f = target.fundamentals;
        let steps = self.steps;
        if grid.steps() != steps {
            return Err(Error::Input(format!("target grid has {} steps, model expects {steps}", grid.steps())));
        }
        if f.day != grid.day || f.hour != grid.hour {
            return Err(Error::Data(format!("no fundamentals for {} h{}", grid.day, grid.hour)));
        }
        if m == 0 {
            return Err(Error::Input("ensemble size must be positive".into()));
        }
        let p0 = grid.origin_price();
        let mut out = DMatrix::zeros(m, steps);
        match &self.params {
            FittedParams::Naive { trajectories } => {
                for j in 0..m {
                    let path = &trajectories[rng.random_range(0..trajectories.len())];
                    let mut p = p0;
                    for t in 0..steps {
                        p += path[t];
                        out[(j, t)] = p;
                    }
                }
            }
            FittedParams::Mv(fit) => {
                let draws = fit.sample(m, rng)?;
                for j in 0..m {
                    let mut p = p0;
                    for t in 0..steps {
                        p += draws[(j, t)];
                        out[(j, t)] = p;
                    }
                }
            }
            FittedParams::RandomWalk { sigma, nu, pi } => {
                for j in 0..m {
                    let mut p = p0;
                    for t in 0..steps {
                        let traded = match pi {
                            Some(pi) => rng.random::<f64>() < pi.clamp(0.0, 1.0),
                            None => true,
                        };
                        if traded {
                            p += draw_t(*sigma, *nu, rng);
                        }
                        out[(j, t)] = p;
                    }
                }
            }
            FittedParams::Lqr { fit, correlation } => {
                let row = build_lqr_features(grid, f)?;
                let cdfs = (1..=steps).map(|t| build_marginal_cdf(fit, &row, t)).collect::<Result<Vec<_>>>()?;
                let kind = match correlation {
                    Some(r) => CopulaKind::Gaussian(r.clone()),
                    None => CopulaKind::Independence,
                };
                let u = copula_uniforms(&kind, m, steps, rng)?;
                for j in 0..m {
                    for t in 0..steps {
                        out[(j, t)] = p0 + cdfs[t].inverse(u[(j, t)]);
                    }
                }
            }
            FittedParams::Mix { logit, t: tfit } => {
                let mut work = grid.clone();
                let models_mu = tfit.variant.models_mu();
                let models_sigma = tfit.variant.models_sigma();
                let const_sigma = if models_sigma { 0.0 } else { tfit.sigma(&vec![1.0; tfit.sigma_linear.len()], [0.0, 0.0]) };
                for j in 0..m {
                    for t in 1..=steps {
                        let lrow = build_logit_features(&work, f, t)?;
                        let pi = logit.predict_row(&lrow).clamp(PI_CLAMP, 1.0 - PI_CLAMP);
                        let traded = rng.random::<f64>() < pi;
                        let diff = if traded {
                            let mu = if models_mu { tfit.mu(&build_mu_features(&work, t)?) } else { 0.0 };
                            let sigma = if models_sigma {
                                let (srow, sp) = build_sigma_features(&work, f, t)?;
                                tfit.sigma(&srow, sp)
                            } else {
                                const_sigma
                            };
                            mu + draw_t(sigma, Some(tfit.nu), rng)
                        } else {
                            0.0
                        };
                        work.set_window(work.origin_index + t, traded, diff);
                    }
                    for (t, p) in work.future_prices().iter().enumerate() {
                        out[(j, t)] = *p;
                    }
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("simulated ensemble contains non-finite values".into()));
        }
        Ok(out)
    }
}
