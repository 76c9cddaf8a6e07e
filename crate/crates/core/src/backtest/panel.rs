//! Scoring persisted ensembles and the tables derived from the score panel.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{ensemble_path, BacktestConfig, Schedule};
use crate::dmtest::{dm_test, DmOutcome, LongRunVariance};
use crate::error::{Error, Result};
use crate::marketdata::io::format_float;
use crate::marketdata::MarketData;
use crate::models::{read_ensemble, read_ensemble_meta, ModelId};
use crate::scoring::{score_day, summarize, DayScores, ScoreSummary};
use crate::statcore::{reorder_to_copula, rng_from_seed, substream_seed, CopulaKind};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub model: ModelId,
    pub day: NaiveDate,
    pub hour: u32,
    pub scores: DayScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: ModelId,
    /// Cells without a usable ensemble.
    pub gaps: usize,
    /// `None` when every cell is a gap.
    pub summary: Option<ScoreSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Es,
    Crps,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Es => "es",
            Loss::Crps => "crps",
        }
    }

    fn of(&self, s: &DayScores) -> f64 {
        match self {
            Loss::Es => s.es,
            Loss::Crps => s.crps,
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "es" => Ok(Loss::Es),
            "crps" => Ok(Loss::Crps),
            other => Err(Error::Config(format!("unknown loss {other:?}, expected es or crps"))),
        }
    }
}

fn cell_matches(path: &Path, hash: &str) -> bool {
    path.exists() && read_ensemble_meta(path).is_ok_and(|m| m.config_hash.as_deref() == Some(hash))
}

/// Scores every persisted ensemble of the run in `dir` and writes the panel,
/// summary, DM and report tables.
pub fn evaluate(dir: &Path, data: &MarketData) -> Result<Vec<SummaryRow>> {
    let config = BacktestConfig::load(&dir.join("config.json"))?;
    let schedule = Schedule::new(&config, data)?;
    let hash = config.hash();
    let mut cells = Vec::new();
    for &model in &config.models {
        for &day in schedule.test_days() {
            for &hour in &schedule.hours {
                cells.push((model, day, hour));
            }
        }
    }
    let scored: Vec<Result<Option<PanelRow>>> = cells
        .par_iter()
        .map(|&(model, day, hour)| {
            let path = ensemble_path(dir, model, day, hour);
            if !cell_matches(&path, &hash) {
                return Ok(None);
            }
            let ens = read_ensemble(&path)?;
            let grid = data
                .grid(day, hour)
                .ok_or_else(|| Error::Data(format!("no price grid for {day} h{hour}")))?;
            let scores = score_day(grid.future_prices(), &ens.values)?;
            Ok(Some(PanelRow { model, day, hour, scores }))
        })
        .collect();
    let mut panel = Vec::new();
    let mut gaps: BTreeMap<ModelId, usize> = BTreeMap::new();
    for (cell, r) in cells.iter().zip(scored) {
        match r? {
            Some(row) => panel.push(row),
            None => *gaps.entry(cell.0).or_default() += 1,
        }
    }
    let scores_dir = dir.join("scores");
    fs::create_dir_all(&scores_dir)?;
    write_panel(&scores_dir.join("panel.csv"), &panel)?;

    let summary = summary_rows(&config.models, &panel, &gaps)?;
    write_summary(&scores_dir.join("summary.csv"), &summary)?;

    let variance = config.dm_lag.map_or(LongRunVariance::NeweyWest, LongRunVariance::Lag);
    fs::create_dir_all(dir.join("dm"))?;
    for loss in [Loss::Es, Loss::Crps] {
        let m = dm_matrix(&panel, &config.models, loss, variance)?;
        write_dm(&dir.join("dm").join(format!("{}_pvalues.csv", loss.name())), &config.models, &m)?;
    }
    write_report(dir, &panel)?;
    Ok(summary)
}

fn summary_rows(models: &[ModelId], panel: &[PanelRow], gaps: &BTreeMap<ModelId, usize>) -> Result<Vec<SummaryRow>> {
    models
        .iter()
        .map(|&model| {
            let rows: Vec<&DayScores> = panel.iter().filter(|r| r.model == model).map(|r| &r.scores).collect();
            let summary = if rows.is_empty() { None } else { Some(summarize(rows)?) };
            Ok(SummaryRow {
                model,
                gaps: gaps.get(&model).copied().unwrap_or(0),
                summary,
            })
        })
        .collect()
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn write_panel(path: &Path, panel: &[PanelRow]) -> Result<()> {
    let steps = panel.first().map_or(0, |r| r.scores.crps_by_step.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "model", "day", "hour", "es", "ed", "ei", "crps", "vs", "dss", "mae", "mse", "cov50", "cov90", "cov99",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=steps).map(|t| format!("crps_t{t}")));
    header.extend((1..=99).map(|k| format!("pb{k:02}")));
    w.write_record(&header)?;
    for r in panel {
        let s = &r.scores;
        let mut rec = vec![r.model.name().to_string(), r.day.to_string(), r.hour.to_string()];
        rec.extend([s.es, s.ed, s.ei, s.crps, s.vs].map(format_float));
        rec.push(opt_float(s.dss));
        rec.extend([s.mae, s.mse].map(format_float));
        rec.extend(s.coverage.map(format_float));
        rec.extend(s.crps_by_step.iter().map(|v| format_float(*v)));
        rec.extend(s.pinball.iter().map(|v| format_float(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel(path: &Path) -> Result<Vec<PanelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let steps = header.iter().filter(|h| h.starts_with("crps_t")).count();
    if header.len() != 14 + steps + 99 {
        return Err(Error::Input(format!("{}: unexpected panel layout", path.display())));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Input(format!("{} line {}: bad {what}", path.display(), line + 2));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&header[i]));
        let floats = |range: std::ops::Range<usize>| range.map(num).collect::<Result<Vec<f64>>>();
        rows.push(PanelRow {
            model: rec[0].parse()?,
            day: NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|_| bad("day"))?,
            hour: rec[2].parse().map_err(|_| bad("hour"))?,
            scores: DayScores {
                es: num(3)?,
                ed: num(4)?,
                ei: num(5)?,
                crps: num(6)?,
                vs: num(7)?,
                dss: if rec[8].is_empty() { None } else { Some(num(8)?) },
                mae: num(9)?,
                mse: num(10)?,
                coverage: [num(11)?, num(12)?, num(13)?],
                crps_by_step: floats(14..14 + steps)?,
                pinball: floats(14 + steps..14 + steps + 99)?,
            },
        });
    }
    Ok(rows)
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model", "days", "gaps", "es", "crps", "vs", "dss", "mae", "rmse", "cov50", "cov90", "cov99",
    ])?;
    for r in rows {
        let mut rec = vec![r.model.name().to_string()];
        match &r.summary {
            Some(s) => {
                rec.push(s.days.to_string());
                rec.push(r.gaps.to_string());
                rec.extend([s.es, s.crps, s.vs].map(format_float));
                rec.push(opt_float(s.dss));
                rec.extend([s.mae, s.rmse].map(format_float));
                rec.extend(s.coverage.map(format_float));
            }
            None => {
                rec.push("0".into());
                rec.push(r.gaps.to_string());
                rec.extend(std::iter::repeat_n(String::new(), 9));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Day-by-hour loss panels per model, keyed by day.
fn loss_panels(panel: &[PanelRow], loss: Loss) -> (BTreeSet<u32>, BTreeMap<ModelId, BTreeMap<NaiveDate, BTreeMap<u32, f64>>>) {
    let hours: BTreeSet<u32> = panel.iter().map(|r| r.hour).collect();
    let mut by_model: BTreeMap<ModelId, BTreeMap<NaiveDate, BTreeMap<u32, f64>>> = BTreeMap::new();
    for r in panel {
        by_model
            .entry(r.model)
            .or_default()
            .entry(r.day)
            .or_default()
            .insert(r.hour, loss.of(&r.scores));
    }
    (hours, by_model)
}

/// Pairwise DM p-values: entry (i, j) tests whether model i has lower
/// expected loss than model j. Pairs are aligned on the days where both
/// models have every hour; `None` marks the diagonal, degenerate
/// differentials and pairs with too few common days.
pub fn dm_matrix(
    panel: &[PanelRow],
    models: &[ModelId],
    loss: Loss,
    variance: LongRunVariance,
) -> Result<Vec<Vec<Option<f64>>>> {
    let (hours, by_model) = loss_panels(panel, loss);
    let empty = BTreeMap::new();
    let complete = |m: &ModelId| -> BTreeMap<NaiveDate, Vec<f64>> {
        by_model
            .get(m)
            .unwrap_or(&empty)
            .iter()
            .filter(|(_, row)| row.len() == hours.len())
            .map(|(d, row)| (*d, row.values().copied().collect()))
            .collect()
    };
    let rows: Vec<BTreeMap<NaiveDate, Vec<f64>>> = models.iter().map(complete).collect();
    let mut out = vec![vec![None; models.len()]; models.len()];
    for i in 0..models.len() {
        for j in 0..models.len() {
            if i == j {
                continue;
            }
            let common: Vec<NaiveDate> = rows[i].keys().filter(|d| rows[j].contains_key(*d)).copied().collect();
            if common.len() < crate::dmtest::MIN_DAYS || hours.is_empty() {
                continue;
            }
            let mat = |k: usize| {
                DMatrix::from_fn(common.len(), hours.len(), |r, c| rows[k][&common[r]][c])
            };
            out[i][j] = match dm_test(&mat(i), &mat(j), variance)? {
                DmOutcome::Test(res) => Some(res.p_a_better),
                DmOutcome::Degenerate => None,
            };
        }
    }
    Ok(out)
}

pub fn write_dm(path: &Path, models: &[ModelId], m: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["model".to_string()];
    header.extend(models.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for (model, row) in models.iter().zip(m) {
        let mut rec = vec![model.name().to_string()];
        rec.extend(row.iter().map(|p| p.map_or_else(|| "NA".to_string(), format_float)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Hour, step and quantile-level breakdowns of the score panel.
pub fn write_report(dir: &Path, panel: &[PanelRow]) -> Result<()> {
    let report = dir.join("report");
    fs::create_dir_all(&report)?;
    let models: BTreeSet<ModelId> = panel.iter().map(|r| r.model).collect();

    let mut w = csv::Writer::from_path(report.join("es_by_hour.csv"))?;
    w.write_record(["model", "hour", "days", "es"])?;
    for &model in &models {
        let mut acc: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
        for r in panel.iter().filter(|r| r.model == model) {
            let e = acc.entry(r.hour).or_default();
            e.0 += 1;
            e.1 += r.scores.es;
        }
        for (hour, (n, sum)) in acc {
            w.write_record([model.name(), &hour.to_string(), &n.to_string(), &format_float(sum / n as f64)])?;
        }
    }
    w.flush()?;

    let mean_vec = |model: ModelId, f: &dyn Fn(&DayScores) -> &Vec<f64>| -> Vec<f64> {
        let rows: Vec<&PanelRow> = panel.iter().filter(|r| r.model == model).collect();
        let len = rows.first().map_or(0, |r| f(&r.scores).len());
        let mut sum = vec![0.0; len];
        for r in &rows {
            for (a, v) in sum.iter_mut().zip(f(&r.scores)) {
                *a += v;
            }
        }
        sum.into_iter().map(|v| v / rows.len() as f64).collect()
    };

    let mut w = csv::Writer::from_path(report.join("crps_by_step.csv"))?;
    w.write_record(["model", "step", "crps"])?;
    for &model in &models {
        for (t, v) in mean_vec(model, &|s| &s.crps_by_step).into_iter().enumerate() {
            w.write_record([model.name(), &(t + 1).to_string(), &format_float(v)])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(report.join("pinball_by_level.csv"))?;
    w.write_record(["model", "tau", "pinball"])?;
    for &model in &models {
        for (k, v) in mean_vec(model, &|s| &s.pinball).into_iter().enumerate() {
            w.write_record([model.name(), &format!("{:.2}", (k + 1) as f64 / 100.0), &format_float(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const COPULA_VARIANTS: [&str; 4] = ["original", "comonotone", "countermonotone", "independence"];

#[derive(Debug, Clone, PartialEq)]
pub struct CopulaRow {
    pub variant: &'static str,
    pub summary: ScoreSummary,
}

/// Re-scores the `base` ensembles of a run under alternative dependence
/// structures. Reordering leaves every marginal untouched, so the marginal
/// columns must agree bit for bit with the original.
pub fn copula_experiment(dir: &Path, data: &MarketData, base: ModelId) -> Result<Vec<CopulaRow>> {
    let config = BacktestConfig::load(&dir.join("config.json"))?;
    let schedule = Schedule::new(&config, data)?;
    let hash = config.hash();
    let mut cells = Vec::new();
    for &day in schedule.test_days() {
        for &hour in &schedule.hours {
            let path = ensemble_path(dir, base, day, hour);
            if cell_matches(&path, &hash) {
                cells.push((day, hour, path));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Data(format!("no {base} ensembles in {}", dir.display())));
    }
    let kinds = [
        None,
        Some(CopulaKind::Comonotone),
        Some(CopulaKind::Countermonotone),
        Some(CopulaKind::Independence),
    ];
    let scored: Vec<Result<Vec<DayScores>>> = cells
        .par_iter()
        .map(|(day, hour, path)| {
            let ens = read_ensemble(path)?;
            let obs = data
                .grid(*day, *hour)
                .ok_or_else(|| Error::Data(format!("no price grid for {day} h{hour}")))?
                .future_prices();
            kinds
                .iter()
                .map(|kind| match kind {
                    None => score_day(obs, &ens.values),
                    Some(k) => {
                        let seed = substream_seed(config.seed, &["copula", k.name(), &day.to_string(), &hour.to_string()]);
                        score_day(obs, &reorder_to_copula(&ens.values, k, &mut rng_from_seed(seed))?)
                    }
                })
                .collect()
        })
        .collect();
    let scored: Vec<Vec<DayScores>> = scored.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, variant) in COPULA_VARIANTS.iter().enumerate() {
        rows.push(CopulaRow {
            variant,
            summary: summarize(scored.iter().map(|s| &s[k]))?,
        });
    }
    let orig = &rows[0].summary;
    for row in &rows[1..] {
        let s = &row.summary;
        if s.crps != orig.crps || s.mae != orig.mae || s.rmse != orig.rmse || s.coverage != orig.coverage {
            return Err(Error::Contract(format!("{} reordering changed a marginal score", row.variant)));
        }
    }
    fs::create_dir_all(dir.join("copula"))?;
    let mut w = csv::Writer::from_path(dir.join("copula").join("table.csv"))?;
    w.write_record(["variant", "days", "es", "crps", "vs", "dss", "mae", "rmse", "cov50", "cov90", "cov99"])?;
    for row in &rows {
        let s = &row.summary;
        let mut rec = vec![row.variant.to_string(), s.days.to_string()];
        rec.extend([s.es, s.crps, s.vs].map(format_float));
        rec.push(opt_float(s.dss));
        rec.extend([s.mae, s.rmse].map(format_float));
        rec.extend(s.coverage.map(format_float));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows)
}
