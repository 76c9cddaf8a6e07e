//! Rolling-window study: slide a window of in-sample days over the data, fit
//! every configured model, simulate ensembles for the following day(s), and
//! score them. Runs are resumable and byte-for-byte reproducible.

mod panel;

pub use panel::{
    copula_experiment, dm_matrix, evaluate, read_panel, write_dm, write_panel, write_report, CopulaRow, Loss, PanelRow,
    SummaryRow, COPULA_VARIANTS,
};

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::marketdata::MarketData;
use crate::models::{fit_models, read_ensemble_meta, write_ensemble, DayState, Ensemble, ModelId, ModelOptions};
use crate::statcore::{rng_from_seed, substream_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    /// Length D of the rolling in-sample window, in days.
    pub in_sample_days: usize,
    /// Number N of forecast days; `None` uses every day after the first window.
    pub out_of_sample_days: Option<usize>,
    /// Delivery hours to forecast; empty means every hour in the data.
    pub hours: Vec<u32>,
    /// Ensemble size M.
    pub members: usize,
    pub models: Vec<ModelId>,
    pub seed: u64,
    /// Models are refitted every `stride` forecast days.
    pub stride: usize,
    pub copula_experiment: bool,
    pub copula_base: ModelId,
    pub lqr_min_days: usize,
    pub logit_grid_size: usize,
    /// Newey-West lag for the DM tests; `None` uses ⌊N^{1/3}⌋.
    pub dm_lag: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            in_sample_days: 365,
            out_of_sample_days: None,
            hours: Vec::new(),
            members: 1000,
            models: ModelId::ALL.to_vec(),
            seed: 1,
            stride: 1,
            copula_experiment: false,
            copula_base: ModelId::MixTMuSigma,
            lqr_min_days: crate::estimators::DEFAULT_MIN_DAYS,
            logit_grid_size: 100,
            dm_lag: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_sample_days < 30 {
            return Err(Error::Config(format!("in_sample_days must be at least 30, got {}", self.in_sample_days)));
        }
        if self.members < 2 {
            return Err(Error::Config(format!("members must be at least 2, got {}", self.members)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        if self.out_of_sample_days == Some(0) {
            return Err(Error::Config("out_of_sample_days must be positive".into()));
        }
        if self.logit_grid_size < 2 {
            return Err(Error::Config("logit_grid_size must be at least 2".into()));
        }
        if self.hours.iter().any(|h| *h > 23) {
            return Err(Error::Config("hours must lie in 0..=23".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of everything that influences the artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            logit_grid_size: self.logit_grid_size,
            lqr_min_days: self.lqr_min_days,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// The forecast design resolved against a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub days: Vec<NaiveDate>,
    /// Index into `days` of the first forecast day.
    pub first: usize,
    pub n: usize,
    pub hours: Vec<u32>,
}

impl Schedule {
    pub fn new(config: &BacktestConfig, data: &MarketData) -> Result<Self> {
        let days = data.days();
        let d = config.in_sample_days;
        let available = days.len().saturating_sub(d);
        let n = config.out_of_sample_days.unwrap_or(available);
        if n == 0 || days.len() < d + n {
            return Err(Error::Data(format!(
                "data has {} days; the study needs {d} in-sample plus {n} forecast days",
                days.len()
            )));
        }
        let data_hours = data.hours();
        let hours = if config.hours.is_empty() { data_hours.clone() } else { config.hours.clone() };
        if let Some(h) = hours.iter().find(|h| !data_hours.contains(h)) {
            return Err(Error::Data(format!("hour {h} is not in the data")));
        }
        Ok(Self { days, first: d, n, hours })
    }

    pub fn test_days(&self) -> &[NaiveDate] {
        &self.days[self.first..self.first + self.n]
    }
}

pub fn ensemble_path(dir: &Path, model: ModelId, day: NaiveDate, hour: u32) -> PathBuf {
    dir.join("ensembles").join(model.name()).join(format!("{day}_{hour}.csv"))
}

pub fn cell_seed(master: u64, model: ModelId, day: NaiveDate, hour: u32) -> u64 {
    substream_seed(master, &[model.name(), &day.to_string(), &hour.to_string()])
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: ModelId,
    pub day: NaiveDate,
    pub hour: u32,
    pub kind: String,
    pub message: String,
}

fn cell_done(dir: &Path, model: ModelId, day: NaiveDate, hour: u32, hash: &str) -> bool {
    let path = ensemble_path(dir, model, day, hour);
    path.exists() && read_ensemble_meta(&path).is_ok_and(|m| m.config_hash.as_deref() == Some(hash))
}

/// Fits and simulates one refit block (one hour, `stride` consecutive days).
fn run_block(
    config: &BacktestConfig,
    data: &MarketData,
    schedule: &Schedule,
    dir: &Path,
    hash: &str,
    hour: u32,
    block: std::ops::Range<usize>,
) -> Result<Vec<CellFailure>> {
    let mut failures = Vec::new();
    let days = &schedule.days;
    let pending: Vec<ModelId> = config
        .models
        .iter()
        .copied()
        .filter(|m| block.clone().any(|i| !cell_done(dir, *m, days[i], hour, hash)))
        .collect();
    if pending.is_empty() {
        return Ok(failures);
    }
    let start = block.start;
    let window = DayState::window(data, hour, &days[start - config.in_sample_days..start])?;
    debug_assert!(window.iter().all(|d| d.grid.day < days[start]), "training window reaches the forecast day");
    let fits = fit_models(&pending, &window, &config.model_options());
    for (model, fit) in pending.iter().zip(fits) {
        for i in block.clone() {
            let day = days[i];
            if cell_done(dir, *model, day, hour, hash) {
                continue;
            }
            let outcome = fit.as_ref().map_err(|e| (e.kind(), e.to_string())).and_then(|fit| {
                let target = DayState::of(data, day, hour).map_err(|e| (e.kind(), e.to_string()))?;
                let seed = cell_seed(config.seed, *model, day, hour);
                let values = fit
                    .simulate(target, config.members, &mut rng_from_seed(seed))
                    .map_err(|e| (e.kind(), e.to_string()))?;
                let mut ens = Ensemble::new(values, *model, day, hour, seed, target.grid.origin_price())
                    .map_err(|e| (e.kind(), e.to_string()))?;
                ens.meta.config_hash = Some(hash.to_string());
                Ok(ens)
            });
            match outcome {
                Ok(ens) => write_ensemble(&ensemble_path(dir, *model, day, hour), &ens)?,
                Err((kind, message)) => {
                    warn!("{model} {day} h{hour}: {message}");
                    failures.push(CellFailure {
                        model: *model,
                        day,
                        hour,
                        kind: kind.to_string(),
                        message,
                    });
                }
            }
        }
    }
    Ok(failures)
}

fn write_failures(path: &Path, failures: &[CellFailure]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "day", "hour", "kind", "message"])?;
    for f in failures {
        w.write_record([f.model.name(), &f.day.to_string(), &f.hour.to_string(), &f.kind, &f.message])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    pub copula: Option<Vec<CopulaRow>>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs (or resumes) the full study into `dir`. `jobs = 0` uses all cores.
pub fn run_backtest(config: &BacktestConfig, data: &MarketData, dir: &Path, jobs: usize) -> Result<RunOutcome> {
    config.validate()?;
    let schedule = Schedule::new(config, data)?;
    fs::create_dir_all(dir.join("scores"))?;
    let hash = config.hash();
    let config_path = dir.join("config.json");
    if let Ok(old) = BacktestConfig::load(&config_path) {
        if old.hash() != hash {
            warn!("{} holds a different configuration; stale cells will be recomputed", dir.display());
        }
    }
    fs::write(&config_path, serde_json::to_string_pretty(config)? + "\n")?;

    let mut units = Vec::new();
    for &hour in &schedule.hours {
        let mut i = schedule.first;
        while i < schedule.first + schedule.n {
            let end = (i + config.stride).min(schedule.first + schedule.n);
            units.push((hour, i..end));
            i = end;
        }
    }
    info!("{} refit blocks over {} forecast days", units.len(), schedule.n);
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<Vec<CellFailure>>> = pool.install(|| {
        units
            .par_iter()
            .map(|(hour, block)| run_block(config, data, &schedule, dir, &hash, *hour, block.clone()))
            .collect()
    });
    let mut failures = Vec::new();
    for r in results {
        failures.extend(r?);
    }
    failures.sort();
    write_failures(&dir.join("scores").join("failures.csv"), &failures)?;

    let summary = pool.install(|| evaluate(dir, data))?;
    let copula = if config.copula_experiment {
        Some(pool.install(|| copula_experiment(dir, data, config.copula_base))?)
    } else {
        None
    };
    Ok(RunOutcome {
        summary,
        failures,
        copula,
    })
}
