use std::fs;
use std::path::Path;

use trajcast::backtest::{copula_experiment, evaluate, read_panel, run_backtest, BacktestConfig, COPULA_VARIANTS};
use trajcast::marketdata::{generate_synthetic_market, MarketData, SynthConfig};
use trajcast::models::ModelId;

fn market(days: usize, products: usize) -> MarketData {
    generate_synthetic_market(&SynthConfig::new(days, products), 11).unwrap().data
}

fn config(n: usize, models: Vec<ModelId>) -> BacktestConfig {
    BacktestConfig {
        in_sample_days: 40,
        out_of_sample_days: Some(n),
        members: 50,
        models,
        seed: 5,
        ..BacktestConfig::default()
    }
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn smallest_run_writes_one_ensemble_and_one_row() {
    let data = market(41, 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(1, vec![ModelId::Naive]);
    let out = run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    assert!(out.failures.is_empty());
    let ens: Vec<_> = fs::read_dir(dir.path().join("ensembles/Naive")).unwrap().collect();
    assert_eq!(ens.len(), 2, "csv plus sidecar");
    let panel = read_panel(&dir.path().join("scores/panel.csv")).unwrap();
    assert_eq!(panel.len(), 1);
    assert_eq!(out.summary.len(), 1);
    assert_eq!(out.summary[0].summary.as_ref().unwrap().days, 1);
}

#[test]
fn rerun_and_evaluate_are_idempotent() {
    let data = market(44, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(4, vec![ModelId::Naive, ModelId::RwN, ModelId::MvN]);
    let first = run_backtest(&cfg, &data, dir.path(), 2).unwrap();
    let before = files_under(dir.path());
    let second = run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    assert_eq!(first, second);
    assert_eq!(before, files_under(dir.path()));
    evaluate(dir.path(), &data).unwrap();
    assert_eq!(before, files_under(dir.path()));
}

#[test]
fn partial_rerun_matches_full_run() {
    let data = market(44, 1);
    let cfg = config(4, vec![ModelId::RwT]);
    let full = tempfile::tempdir().unwrap();
    run_backtest(&cfg, &data, full.path(), 1).unwrap();
    let partial = tempfile::tempdir().unwrap();
    run_backtest(&cfg, &data, partial.path(), 1).unwrap();
    let victim = fs::read_dir(partial.path().join("ensembles/RW.t"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    fs::remove_file(&victim).unwrap();
    run_backtest(&cfg, &data, partial.path(), 1).unwrap();
    assert_eq!(files_under(full.path()), files_under(partial.path()));
}

#[test]
fn stale_config_cells_are_recomputed() {
    let data = market(42, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(2, vec![ModelId::RwN]);
    run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    let path = dir.path().join("ensembles/RW.N");
    let old = files_under(&path);
    cfg.seed = 6;
    run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    assert_ne!(old, files_under(&path));
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    let data = market(42, 1);
    let dir = tempfile::tempdir().unwrap();
    // LQR needs far more days than the window provides
    let cfg = config(2, vec![ModelId::Naive, ModelId::LqrGauss]);
    let out = run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures.iter().all(|f| f.model == ModelId::LqrGauss && f.kind == "estimation"));
    let lqr = out.summary.iter().find(|r| r.model == ModelId::LqrGauss).unwrap();
    assert_eq!(lqr.gaps, 2);
    assert!(lqr.summary.is_none());
    let failures = fs::read_to_string(dir.path().join("scores/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 3);
    let summary = fs::read_to_string(dir.path().join("scores/summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("LQR.Gauss,0,2,")));
}

#[test]
fn stride_reuses_fits_but_keeps_cells() {
    let data = market(45, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(5, vec![ModelId::RwN]);
    cfg.stride = 3;
    let out = run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    assert_eq!(out.summary[0].summary.as_ref().unwrap().days, 5);
}

#[test]
fn too_little_data_is_rejected() {
    let data = market(41, 1);
    let dir = tempfile::tempdir().unwrap();
    let err = run_backtest(&config(2, vec![ModelId::Naive]), &data, dir.path(), 1).unwrap_err();
    assert_eq!(err.kind(), "data");
}

#[test]
fn invalid_config_is_rejected() {
    let data = market(41, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(1, vec![ModelId::Naive]);
    cfg.members = 1;
    assert_eq!(run_backtest(&cfg, &data, dir.path(), 1).unwrap_err().kind(), "config");
    let json = r#"{"in_sample_days": 40, "bogus": 1}"#;
    assert!(serde_json::from_str::<BacktestConfig>(json).is_err());
}

#[test]
fn copula_experiment_keeps_marginals() {
    let data = market(46, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(6, vec![ModelId::RwT]);
    cfg.copula_experiment = true;
    cfg.copula_base = ModelId::RwT;
    let out = run_backtest(&cfg, &data, dir.path(), 1).unwrap();
    let rows = out.copula.unwrap();
    assert_eq!(rows.iter().map(|r| r.variant).collect::<Vec<_>>(), COPULA_VARIANTS);
    let orig = &rows[0].summary;
    for r in &rows[1..] {
        assert_eq!(r.summary.crps.to_bits(), orig.crps.to_bits());
        assert_eq!(r.summary.mae.to_bits(), orig.mae.to_bits());
        assert_eq!(r.summary.rmse.to_bits(), orig.rmse.to_bits());
        assert_eq!(r.summary.coverage, orig.coverage);
    }
    let table = fs::read_to_string(dir.path().join("copula/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    // a model missing from the run is a data error
    let err = copula_experiment(dir.path(), &data, ModelId::MixTMuSigma).unwrap_err();
    assert_eq!(err.kind(), "data");
}

#[test]
fn report_tables_have_expected_shape() {
    let data = market(43, 2);
    let dir = tempfile::tempdir().unwrap();
    run_backtest(&config(3, vec![ModelId::Naive, ModelId::RwN]), &data, dir.path(), 1).unwrap();
    let lines = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    assert_eq!(lines("report/es_by_hour.csv"), 1 + 2 * 2);
    assert_eq!(lines("report/crps_by_step.csv"), 1 + 2 * data.spec.steps);
    assert_eq!(lines("report/pinball_by_level.csv"), 1 + 2 * 99);
    // three days is below the DM minimum, so every entry is NA
    let dm = fs::read_to_string(dir.path().join("dm/es_pvalues.csv")).unwrap();
    assert_eq!(dm.lines().next().unwrap(), "model,Naive,RW.N");
    assert!(dm.lines().skip(1).all(|l| l.ends_with("NA,NA")));
}
