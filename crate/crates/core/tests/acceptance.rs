//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use trajcast::backtest::{dm_matrix, read_panel, run_backtest, BacktestConfig, Loss, RunOutcome};
use trajcast::designmatrix::{standardize, FeatureMatrix, INTERCEPT};
use trajcast::dmtest::{dm_test, DmOutcome, LongRunVariance};
use trajcast::estimators::logit::logit_lasso_path;
use trajcast::estimators::lqr::{pinball_total, quantile_regression};
use trajcast::estimators::{fit_t_const, TGamVariant};
use trajcast::marketdata::{generate_synthetic_market, SynthConfig, SyntheticTruth};
use trajcast::models::{fit_model, DayState, FittedParams, ModelId, ModelOptions};
use trajcast::scoring::{crps_pinball, dawid_sebastiani, energy_score, pinball, score_day, variogram_score};
use trajcast::statcore::{rng_from_seed, TDist};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> std::result::Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: {a} vs {b}"))
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn scoring_oracles() -> Check {
    let row = |v: &[f64]| DMatrix::from_row_slice(v.len(), 1, v);
    let s = energy_score(&[1.0], &row(&[0.0, 2.0])).map_err(e)?;
    close(s.ed, 1.0, 1e-9, "ED")?;
    close(s.ei, 2.0, 1e-9, "EI")?;
    close(s.es, 0.0, 1e-9, "ES (1,2)")?;
    let s = energy_score(&[0.0], &row(&[1.0, 1.0])).map_err(e)?;
    close(s.es, 1.0, 1e-9, "ES point")?;
    close(pinball(2.0, 1.0, 0.5), 0.5, 1e-12, "pinball")?;
    let (c, _) = crps_pinball(1.0, &[0.0; 7]).map_err(e)?;
    close(c, 0.5, 1e-9, "point-ensemble CRPS")?;
    let (c, _) = crps_pinball(3.0, &[3.0; 5]).map_err(e)?;
    close(c, 0.0, 1e-12, "exact CRPS")?;
    let vs = variogram_score(&[0.0, 1.0], &DMatrix::zeros(4, 2)).map_err(e)?;
    close(vs, 0.5, 1e-9, "VS toy")?;
    let obs = [0.3, -1.2, 2.0];
    let copies = DMatrix::from_fn(6, 3, |_, j| obs[j]);
    close(variogram_score(&obs, &copies).map_err(e)?, 0.0, 1e-12, "VS copies")?;
    // realization and members both N(c, I): quadratic form has mean T and
    // log det ≈ 0, so the score averages to T
    let (reps, m, t) = (400, 10_000, 3);
    let mut rng = rng_from_seed(101);
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let y: Vec<f64> = obs.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect();
            let ens = DMatrix::from_fn(m, t, |_, j| obs[j] + rng.sample::<f64, _>(StandardNormal));
            dawid_sebastiani(&y, &ens).map(|v| v.unwrap_or(f64::NAN))
        })
        .collect::<trajcast::Result<_>>()
        .map_err(e)?;
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    close(mean, t as f64, 3.0 * sd / (reps as f64).sqrt(), "DSS χ² moment")?;
    Ok(format!("hand cases exact, DSS mean {mean:.3} ≈ {t}"))
}

/// Plain Newton logistic regression.
fn newton_logit(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let p = (x * &b).map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = x.transpose() * DVector::from_fn(y.len(), |i, _| y[i] - p[i]);
        let mut xw = x.clone();
        for (i, mut r) in xw.row_iter_mut().enumerate() {
            r *= p[i] * (1.0 - p[i]);
        }
        let step = (x.transpose() * xw).cholesky().expect("SPD Hessian").solve(&grad);
        b += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    b
}

/// Exact quantile regression by enumerating every basic solution.
fn lp_vertex_oracle(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
    let n = x.nrows();
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let m = DMatrix::from_fn(3, 3, |i, j| x[([a, b, c][i], j)]);
                if let Some(beta) = m.lu().solve(&DVector::from_vec(vec![y[a], y[b], y[c]])) {
                    best = best.min(pinball_total((y - x * &beta).iter().copied(), tau));
                }
            }
        }
    }
    best
}

fn estimator_oracles() -> Check {
    let mut rng = rng_from_seed(202);
    // logit at λ = 0
    let beta = [-0.2, 0.8, -0.6, 0.3, 0.0];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..3000 {
        let mut r = vec![1.0];
        r.extend((1..beta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push((rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())) as u8 as f64);
        rows.push(r);
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..beta.len()).map(|j| format!("x{j}")));
    let fm = FeatureMatrix::from_rows(names, &rows).map_err(e)?;
    let (xs, _) = standardize(&fm, None).map_err(e)?;
    let pf: Vec<Option<f64>> = (0..beta.len()).map(|j| Some(if j == 0 { 0.0 } else { 1.0 })).collect();
    let path = logit_lasso_path(&xs.data, &y, &[0.0], &pf).map_err(e)?;
    let oracle = newton_logit(&xs.data, &y);
    let logit_gap = path.betas[0].iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(logit_gap < 1e-4, format!("logit λ=0 differs from Newton by {logit_gap:e}"))?;

    // quantile regression against the exact LP optimum
    let mut worst: f64 = 0.0;
    for &tau in &[0.1, 0.5, 0.83] {
        let n = 200;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let yq = DVector::from_fn(n, |i, _| {
            0.5 + x[(i, 1)] - 0.7 * x[(i, 2)] + rng.sample::<f64, _>(StandardNormal) * (1.0 + x[(i, 1)].abs())
        });
        let mut b = DVector::zeros(3);
        quantile_regression(&x, &yq, tau, &mut b).map_err(e)?;
        let ours = pinball_total((&yq - &x * &b).iter().copied(), tau);
        let exact = lp_vertex_oracle(&x, &yq, tau);
        worst = worst.max(ours / exact - 1.0);
    }
    ensure(worst <= 1e-3, format!("LQR pinball exceeds LP optimum by {:.4}%", worst * 100.0))?;

    // constant-parameter t recovery
    let t = TDist::new(0.0, 3.0, 5.0).map_err(e)?;
    let ys: Vec<f64> = (0..10_000).map(|_| t.sample(&mut rng)).collect();
    let fit = fit_t_const(&ys).map_err(e)?;
    ensure(fit.variant == TGamVariant::ConstSigma, "unexpected variant")?;
    let sigma = fit.sigma(&[1.0], [0.0, 1.0]);
    close(sigma, 3.0, 0.1, "σ")?;
    close(fit.nu, 5.0, 0.75, "ν")?;
    Ok(format!(
        "logit gap {logit_gap:.1e}, LQR excess {:.4}%, σ̂ {sigma:.3}, ν̂ {:.2}",
        worst * 100.0,
        fit.nu
    ))
}

const DESK_DAYS: usize = 130;
const DESK_SEED: u64 = 2024;

fn desk_config() -> BacktestConfig {
    BacktestConfig {
        in_sample_days: 90,
        out_of_sample_days: Some(40),
        members: 200,
        models: ModelId::ALL.to_vec(),
        seed: 7,
        stride: 5,
        copula_experiment: true,
        lqr_min_days: 60,
        ..BacktestConfig::default()
    }
}

fn desk_run(dir: &Path) -> std::result::Result<RunOutcome, String> {
    let data = generate_synthetic_market(&SynthConfig::new(DESK_DAYS, 2), DESK_SEED).map_err(e)?.data;
    run_backtest(&desk_config(), &data, dir, 0).map_err(e)
}

fn ranking(out: &RunOutcome, dir: &Path) -> Check {
    ensure(out.failures.is_empty(), format!("{} failed cells", out.failures.len()))?;
    let best = |key: fn(&trajcast::scoring::ScoreSummary) -> f64| {
        out.summary
            .iter()
            .filter_map(|r| r.summary.as_ref().map(|s| (r.model, key(s))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|x| x.0)
    };
    let by_es = best(|s| s.es);
    let by_crps = best(|s| s.crps);
    ensure(by_es == Some(ModelId::MixTMuSigma), format!("lowest ES is {by_es:?}"))?;
    ensure(by_crps == Some(ModelId::MixTMuSigma), format!("lowest CRPS is {by_crps:?}"))?;
    let panel = read_panel(&dir.join("scores/panel.csv")).map_err(e)?;
    let models = [ModelId::MixTMuSigma, ModelId::RwN];
    let m = dm_matrix(&panel, &models, Loss::Es, LongRunVariance::NeweyWest).map_err(e)?;
    let p = m[0][1].ok_or("DM test vs RW.N is undefined")?;
    ensure(p < 0.05, format!("DM p-value vs RW.N is {p:.4}"))?;
    let s = out.summary.iter().find(|r| r.model == ModelId::MixTMuSigma).and_then(|r| r.summary.clone()).unwrap();
    Ok(format!("Mix.t.mu.sigma ES {:.4}, CRPS {:.4}, DM p vs RW.N {p:.2e}", s.es, s.crps))
}

fn copula_mechanism(out: &RunOutcome) -> Check {
    let rows = out.copula.as_ref().ok_or("copula experiment missing")?;
    let orig = &rows[0].summary;
    for r in &rows[1..] {
        let s = &r.summary;
        ensure(
            s.crps.to_bits() == orig.crps.to_bits()
                && s.mae.to_bits() == orig.mae.to_bits()
                && s.rmse.to_bits() == orig.rmse.to_bits()
                && s.coverage.map(f64::to_bits) == orig.coverage.map(f64::to_bits),
            format!("{} changed a marginal column", r.variant),
        )?;
    }
    let dss = |s: &trajcast::scoring::ScoreSummary| s.dss.unwrap_or(f64::NAN);
    for r in rows.iter().filter(|r| r.variant == "comonotone" || r.variant == "countermonotone") {
        ensure(r.summary.es > orig.es, format!("{} ES {} not above {}", r.variant, r.summary.es, orig.es))?;
        ensure(dss(&r.summary) > dss(orig), format!("{} DSS not above original", r.variant))?;
    }
    let es: Vec<String> = rows.iter().map(|r| format!("{} {:.3}", r.variant, r.summary.es)).collect();
    Ok(format!("marginals bit-identical; ES {}", es.join(", ")))
}

fn calibration() -> Check {
    let cfg = SynthConfig::new(1000, 2);
    let market = generate_synthetic_market(&cfg, 505).map_err(e)?;
    let data = &market.data;
    let mut hits = [0.0; 3];
    let mut n = 0usize;
    for (k, g) in data.grids().iter().enumerate() {
        let f = data.fundamentals(g.day, g.hour).map_err(e)?;
        let ens = cfg.truth.simulate_paths(g, f, 1000, &mut rng_from_seed(9000 + k as u64)).map_err(e)?;
        let s = score_day(g.future_prices(), &ens).map_err(e)?;
        for i in 0..3 {
            hits[i] += s.coverage[i];
        }
        n += 1;
    }
    let mut parts = Vec::new();
    for (i, nominal) in [0.5, 0.9, 0.99].into_iter().enumerate() {
        let emp = hits[i] / n as f64;
        // the per-day coverage fraction averages correlated indicators, so
        // its variance is at most the binomial one
        let se = (nominal * (1.0 - nominal) / n as f64).sqrt();
        ensure((emp - nominal).abs() <= 3.0 * se, format!("{nominal}: {emp:.4} outside ±{:.4}", 3.0 * se))?;
        parts.push(format!("{:.0}% → {emp:.4}", nominal * 100.0));
    }
    Ok(format!("{n} product-days: {}", parts.join(", ")))
}

/// Paths from a random walk with SD `sigma` whose increments are `z`
/// scaled per entry by `mix` (1 for the normal, √((ν−2)/W) for the t).
fn walk(origin: f64, sigma: f64, z: &DMatrix<f64>, mix: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        let mut p = origin;
        for j in 0..z.ncols() {
            p += sigma * mix(i, j) * z[(i, j)];
            out[(i, j)] = p;
        }
    }
    out
}

fn heavy_tails() -> Check {
    let mut cfg = SynthConfig::new(90 + 50_000, 2);
    cfg.truth = SyntheticTruth::random_walk(1.0, 4.0);
    let data = generate_synthetic_market(&cfg, 606).map_err(e)?.data;
    let days = data.days();
    let hours = data.hours();
    let window = DayState::window(&data, hours[0], &days[..90]).map_err(e)?;
    let opts = ModelOptions::default();
    let params = |id| match fit_model(id, &window, &opts).map(|f| f.params) {
        Ok(FittedParams::RandomWalk { sigma, nu, .. }) => Ok((sigma, nu)),
        Ok(_) => Err(format!("{id} is not a random walk")),
        Err(err) => Err(e(err)),
    };
    let (sigma_n, _) = params(ModelId::RwN)?;
    let (sigma_t, nu) = params(ModelId::RwT)?;
    let nu = nu.ok_or("RW.t has no degrees of freedom")?;
    // common random numbers: both ensembles share the normal draws, the t
    // adds an independent chi-square mixing variable per entry
    let chi = ChiSquared::new(nu).map_err(e)?;
    let mut rng = rng_from_seed(607);
    let (m, steps) = (100, data.spec.steps);
    let mut diffs = Vec::new();
    for d in &days[90..] {
        for &h in &hours {
            let grid = data.grid(*d, h).ok_or("missing grid")?;
            let z = DMatrix::from_fn(m, steps, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = DMatrix::from_fn(m, steps, |_, _| chi.sample(&mut rng));
            let en = walk(grid.origin_price(), sigma_n, &z, |_, _| 1.0);
            let et = walk(grid.origin_price(), sigma_t, &z, |i, j| ((nu - 2.0) / w[(i, j)]).sqrt());
            let obs = grid.future_prices();
            diffs.push(energy_score(obs, &en).map_err(e)?.es - energy_score(obs, &et).map_err(e)?.es);
        }
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    let summary = format!(
        "{} product-days, ES(RW.N) − ES(RW.t) = {mean:.5} ± {se:.5} (z = {:.2}; σ̂ {sigma_n:.3} vs {sigma_t:.3}, ν̂ {nu:.2})",
        diffs.len(),
        mean / se
    );
    ensure(mean > 1.645 * se, summary.clone())?;
    Ok(summary)
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism(first: &Path, second: &Path) -> Check {
    desk_run(second)?;
    let a = files_under(first);
    let b = files_under(second);
    ensure(a.len() == b.len(), format!("{} vs {} files", a.len(), b.len()))?;
    if let Some((p, _)) = a.iter().find(|(p, bytes)| b.get(*p) != Some(bytes)) {
        return Err(format!("{} differs", p.display()));
    }
    Ok(format!("{} files byte-identical", a.len()))
}

/// Asymptotic Kolmogorov-Smirnov p-value against U(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> (f64, f64) {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let pv: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, pv.clamp(0.0, 1.0))
}

fn dm_null() -> Check {
    let mut rng = rng_from_seed(808);
    let (reps, days, hours, m, t) = (1000, 100, 2, 50, 4);
    let mut pvals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut la = DMatrix::zeros(days, hours);
        let mut lb = DMatrix::zeros(days, hours);
        for d in 0..days {
            for h in 0..hours {
                let obs: Vec<f64> = (0..t).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.2).collect();
                let a = DMatrix::from_fn(m, t, |_, _| rng.sample::<f64, _>(StandardNormal));
                let b = DMatrix::from_fn(m, t, |_, _| rng.sample::<f64, _>(StandardNormal));
                la[(d, h)] = energy_score(&obs, &a).map_err(e)?.es;
                lb[(d, h)] = energy_score(&obs, &b).map_err(e)?.es;
            }
        }
        match dm_test(&la, &lb, LongRunVariance::NeweyWest).map_err(e)? {
            DmOutcome::Test(r) => pvals.push(r.p_a_better),
            DmOutcome::Degenerate => return Err("degenerate DM test under the null".into()),
        }
    }
    let (d, p) = ks_uniform(pvals);
    ensure(p > 0.01, format!("KS D = {d:.4}, p = {p:.4}"))?;
    Ok(format!("{reps} p-values, KS D = {d:.4}, p = {p:.3}"))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |k: usize| filter.is_empty() || filter.iter().any(|f| f == &k.to_string());
    let tmp = tempfile::tempdir().expect("temporary directory");
    let first = tmp.path().join("desk-a");
    let second = tmp.path().join("desk-b");
    let mut desk: Option<std::result::Result<RunOutcome, String>> = None;
    let mut desk_result = || desk.get_or_insert_with(|| desk_run(&first)).clone();

    let mut failed = 0;
    let mut report = |k: usize, name: &str, started: Instant, r: Check| {
        let secs = started.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS criterion {k} ({name}, {secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {k} ({name}, {secs:.1}s): {msg}");
            }
        }
    };
    if wanted(1) {
        let t = Instant::now();
        report(1, "scoring oracles", t, scoring_oracles());
    }
    if wanted(2) {
        let t = Instant::now();
        report(2, "estimator oracles", t, estimator_oracles());
    }
    if wanted(3) {
        let t = Instant::now();
        let r = desk_result().and_then(|out| ranking(&out, &first));
        report(3, "synthetic ranking", t, r);
    }
    if wanted(4) {
        let t = Instant::now();
        let r = desk_result().and_then(|out| copula_mechanism(&out));
        report(4, "copula mechanism", t, r);
    }
    if wanted(5) {
        let t = Instant::now();
        report(5, "calibration", t, calibration());
    }
    if wanted(6) {
        let t = Instant::now();
        report(6, "heavy tails", t, heavy_tails());
    }
    if wanted(7) {
        let t = Instant::now();
        let r = desk_result().and_then(|_| determinism(&first, &second));
        report(7, "determinism", t, r);
    }
    if wanted(8) {
        let t = Instant::now();
        report(8, "DM null calibration", t, dm_null());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
