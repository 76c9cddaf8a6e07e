//! Simulated ensembles and their on-disk form: one CSV of members plus a JSON
//! sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelId;
use crate::error::{Error, Result};
use crate::marketdata::io::format_float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub model: ModelId,
    pub day: NaiveDate,
    pub hour: u32,
    pub seed: u64,
    pub origin_price: f64,
    pub members: usize,
    pub steps: usize,
    /// Hash of the run configuration that produced the ensemble, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// `M × T` simulated prices for one product-day.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub values: DMatrix<f64>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn new(values: DMatrix<f64>, model: ModelId, day: NaiveDate, hour: u32, seed: u64, origin_price: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("ensemble values must be finite".into()));
        }
        let (members, steps) = values.shape();
        Ok(Self {
            values,
            meta: EnsembleMeta {
                model,
                day,
                hour,
                seed,
                origin_price,
                members,
                steps,
                config_hash: None,
            },
        })
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `<path>` (CSV) and `<path stem>.meta.json`.
pub fn write_ensemble(path: &Path, ens: &Ensemble) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let (m, t) = ens.values.shape();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["member".to_string()];
    header.extend((1..=t).map(|k| format!("t{k}")));
    w.write_record(&header)?;
    for j in 0..m {
        let mut rec = vec![(j + 1).to_string()];
        rec.extend((0..t).map(|k| format_float(ens.values[(j, k)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    fs::write(sidecar(path), serde_json::to_string_pretty(&ens.meta)? + "\n")?;
    Ok(())
}

/// Reads only the sidecar of an ensemble written by [`write_ensemble`].
pub fn read_ensemble_meta(path: &Path) -> Result<EnsembleMeta> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar(path))?)?)
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble> {
    let meta: EnsembleMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("member") || header.len() != meta.steps + 1 {
        return Err(Error::Data(format!("{}: unexpected ensemble header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != meta.members {
        return Err(Error::Data(format!(
            "{}: {} members on disk, sidecar says {}",
            path.display(),
            rows.len(),
            meta.members
        )));
    }
    let values = DMatrix::from_fn(rows.len(), meta.steps, |i, j| rows[i][j]);
    let mut ens = Ensemble::new(values, meta.model, meta.day, meta.hour, meta.seed, meta.origin_price)?;
    ens.meta.config_hash = meta.config_hash;
    Ok(ens)
}
