//! Regressor rows for the trade-probability, location, scale and quantile
//! models, plus column standardization.
//!
//! Step `t` (1-based) is grid index `origin + t`; lag `j` of step `t` reads
//! grid index `origin + t - j`. Builders only read indices below
//! `origin + t`, so they work on partially simulated grids.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{FundamentalRow, PriceGrid};

pub const INTERCEPT: &str = "intercept";
pub const MAX_LAG: usize = 12;
const FUNDAMENTAL_NAMES: [&str; 4] = ["da_load", "da_solar", "da_wind_on", "da_wind_off"];

pub fn logit_feature_names(steps: usize) -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..=3).map(|j| format!("dp_lag{j}")));
    names.extend((1..=6).map(|j| format!("absdp_lag{j}")));
    names.push("absdp_sum7_12".into());
    names.extend(["mon", "sat", "sun"].map(String::from));
    names.extend((1..=steps).map(|j| format!("ttm_{j}")));
    names.extend(FUNDAMENTAL_NAMES.map(String::from));
    names.extend((1..=MAX_LAG).map(|j| format!("alphabar_{j}")));
    names
}

pub fn sigma_feature_names() -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..=6).map(|j| format!("absdp_lag{j}")));
    names.push("absdp_sum7_12".into());
    names.extend(["mon", "sat", "sun"].map(String::from));
    names.extend(FUNDAMENTAL_NAMES.map(String::from));
    names.extend(["alpha_lag1", "alpha_lag2"].map(String::from));
    names
}

pub fn mu_feature_names() -> Vec<String> {
    (1..=3).map(|j| format!("dp_lag{j}")).collect()
}

pub fn lqr_feature_names() -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..=3).map(|j| format!("dp_lag{j}")));
    names.extend((1..=6).map(|j| format!("absdp_lag{j}")));
    names.push("absdp_sum7_12".into());
    names.push("p0".into());
    names.extend(["mon", "sat", "sun"].map(String::from));
    names.extend(["alpha_lag1", "alpha_lag2"].map(String::from));
    names.extend(FUNDAMENTAL_NAMES.map(String::from));
    names
}

/// Monday, Saturday and Sunday indicators.
pub fn weekday_dummies(day: NaiveDate) -> [f64; 3] {
    let w = day.weekday();
    [
        (w == Weekday::Mon) as u8 as f64,
        (w == Weekday::Sat) as u8 as f64,
        (w == Weekday::Sun) as u8 as f64,
    ]
}

struct Lags<'a> {
    grid: &'a PriceGrid,
    pos: usize,
}

impl<'a> Lags<'a> {
    fn at_step(grid: &'a PriceGrid, t: usize) -> Result<Self> {
        let steps = grid.steps();
        if t == 0 || t > steps {
            return Err(Error::Precondition(format!("step {t} outside 1..={steps}")));
        }
        let pos = grid.origin_index + t;
        if pos < MAX_LAG {
            return Err(Error::Precondition(format!(
                "step {t} needs {MAX_LAG} lags but only {pos} windows precede it"
            )));
        }
        Ok(Self { grid, pos })
    }

    fn dp(&self, j: usize) -> f64 {
        self.grid.diffs[self.pos - j]
    }

    fn alpha(&self, j: usize) -> f64 {
        self.grid.traded[self.pos - j] as u8 as f64
    }

    fn abs_sum_7_12(&self) -> f64 {
        (7..=12).map(|j| self.dp(j).abs()).sum()
    }

    fn prev_price(&self) -> f64 {
        self.grid.prices[self.pos - 1]
    }
}

fn check_fundamentals(grid: &PriceGrid, f: &FundamentalRow) -> Result<()> {
    if f.day != grid.day || f.hour != grid.hour {
        return Err(Error::Data(format!(
            "fundamentals for {} h{} paired with grid {} h{}",
            f.day, f.hour, grid.day, grid.hour
        )));
    }
    Ok(())
}

pub fn build_logit_features(grid: &PriceGrid, fundamentals: &FundamentalRow, t: usize) -> Result<Vec<f64>> {
    check_fundamentals(grid, fundamentals)?;
    let lags = Lags::at_step(grid, t)?;
    let steps = grid.steps();
    let mut row = Vec::with_capacity(30 + steps);
    row.push(1.0);
    row.extend((1..=3).map(|j| lags.dp(j)));
    row.extend((1..=6).map(|j| lags.dp(j).abs()));
    row.push(lags.abs_sum_7_12());
    row.extend(weekday_dummies(grid.day));
    row.extend((1..=steps).map(|j| (j == t) as u8 as f64));
    row.extend(fundamentals.values());
    let mut running = 0.0;
    for j in 1..=MAX_LAG {
        running += lags.alpha(j);
        row.push(running / j as f64);
    }
    Ok(row)
}

/// Linear σ regressors plus the raw spline inputs `(P_{t-1}, t)`.
pub fn build_sigma_features(
    grid: &PriceGrid,
    fundamentals: &FundamentalRow,
    t: usize,
) -> Result<(Vec<f64>, [f64; 2])> {
    check_fundamentals(grid, fundamentals)?;
    let lags = Lags::at_step(grid, t)?;
    let mut row = Vec::with_capacity(17);
    row.push(1.0);
    row.extend((1..=6).map(|j| lags.dp(j).abs()));
    row.push(lags.abs_sum_7_12());
    row.extend(weekday_dummies(grid.day));
    row.extend(fundamentals.values());
    row.push(lags.alpha(1));
    row.push(lags.alpha(2));
    Ok((row, [lags.prev_price(), t as f64]))
}

pub fn build_mu_features(grid: &PriceGrid, t: usize) -> Result<[f64; 3]> {
    let lags = Lags::at_step(grid, t)?;
    Ok([lags.dp(1), lags.dp(2), lags.dp(3)])
}

/// Origin-time regressors shared by every horizon and quantile. Lags are
/// taken as seen from step 1, so lag 1 is the origin window's own change.
pub fn build_lqr_features(grid: &PriceGrid, fundamentals: &FundamentalRow) -> Result<Vec<f64>> {
    check_fundamentals(grid, fundamentals)?;
    let lags = Lags::at_step(grid, 1)?;
    let mut row = Vec::with_capacity(21);
    row.push(1.0);
    row.extend((1..=3).map(|j| lags.dp(j)));
    row.extend((1..=6).map(|j| lags.dp(j).abs()));
    row.push(lags.abs_sum_7_12());
    row.push(grid.origin_price());
    row.extend(weekday_dummies(grid.day));
    row.push(lags.alpha(1));
    row.push(lags.alpha(2));
    row.extend(fundamentals.values());
    Ok(row)
}

/// Named regressor matrix (rows are observations).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: DMatrix<f64>,
    pub names: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl FeatureMatrix {
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Input(format!("row has {} entries, expected {p}", bad.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains non-finite entries".into()));
        }
        let data = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Ok(Self {
            data,
            names,
            standardization: None,
        })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

/// Per-column centring and scaling learned in-sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// False for the intercept and for constant columns, which pass through.
    pub scaled: Vec<bool>,
}

impl Standardization {
    pub fn fit(m: &FeatureMatrix) -> Self {
        let n = m.nrows();
        let mut means = Vec::with_capacity(m.ncols());
        let mut sds = Vec::with_capacity(m.ncols());
        let mut scaled = Vec::with_capacity(m.ncols());
        for (j, name) in m.names.iter().enumerate() {
            let col = m.data.column(j);
            let mean = col.sum() / n as f64;
            let var = if n > 1 {
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let sd = var.sqrt();
            let ok = name != INTERCEPT && sd > 1e-12 * (1.0 + mean.abs()) && sd.is_finite();
            means.push(if ok { mean } else { 0.0 });
            sds.push(if ok { sd } else { 1.0 });
            scaled.push(ok);
        }
        Self {
            names: m.names.clone(),
            means,
            sds,
            scaled,
        }
    }

    pub fn check_names(&self, names: &[String]) -> Result<()> {
        if self.names != names {
            return Err(Error::Contract("feature names differ from the fitted standardization".into()));
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.scaled[j] {
                *v = (*v - self.means[j]) / self.sds[j];
            }
        }
    }

    /// Names of columns left unscaled because they were constant.
    pub fn constant_columns(&self) -> Vec<&str> {
        self.names
            .iter()
            .zip(&self.scaled)
            .filter(|(n, s)| !**s && n.as_str() != INTERCEPT)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Standardizes columns with in-sample statistics, or with `stats` when given.
pub fn standardize(
    m: &FeatureMatrix,
    stats: Option<&Standardization>,
) -> Result<(FeatureMatrix, Standardization)> {
    let stats = match stats {
        Some(s) => {
            s.check_names(&m.names)?;
            s.clone()
        }
        None => Standardization::fit(m),
    };
    let mut data = m.data.clone();
    for j in 0..data.ncols() {
        if stats.scaled[j] {
            for i in 0..data.nrows() {
                data[(i, j)] = (data[(i, j)] - stats.means[j]) / stats.sds[j];
            }
        }
    }
    Ok((
        FeatureMatrix {
            data,
            names: m.names.clone(),
            standardization: Some(stats.clone()),
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 2020-03-04 is a Wednesday, 2020-03-07 a Saturday
    fn grid_with(day: NaiveDate, diffs: &[f64], traded: &[bool]) -> PriceGrid {
        let mut prices = Vec::new();
        let mut p = 40.0;
        for d in diffs {
            p += d;
            prices.push(p);
        }
        PriceGrid::from_prices(day, 10, 12, prices, traded.to_vec(), 40.0, 40.0).unwrap()
    }

    fn flat(day: NaiveDate) -> PriceGrid {
        grid_with(day, &[0.0; 44], &[false; 44])
    }

    fn fund(day: NaiveDate) -> FundamentalRow {
        FundamentalRow {
            day,
            hour: 10,
            da_load: 50000.0,
            da_solar: 100.0,
            da_wind_on: 2000.0,
            da_wind_off: 300.0,
        }
    }

    fn wed() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 4).unwrap()
    }

    #[test]
    fn feature_counts() {
        assert_eq!(logit_feature_names(31).len(), 61);
        assert_eq!(sigma_feature_names().len(), 17);
        assert_eq!(mu_feature_names().len(), 3);
        assert_eq!(lqr_feature_names().len(), 21);
        let g = flat(wed());
        assert_eq!(build_logit_features(&g, &fund(wed()), 1).unwrap().len(), 61);
        assert_eq!(build_sigma_features(&g, &fund(wed()), 1).unwrap().0.len(), 17);
        assert_eq!(build_lqr_features(&g, &fund(wed())).unwrap().len(), 21);
    }

    #[test]
    fn logit_row_flat_wednesday() {
        let g = flat(wed());
        let row = build_logit_features(&g, &fund(wed()), 5).unwrap();
        let names = logit_feature_names(31);
        for (n, v) in names.iter().zip(&row) {
            let expect = match n.as_str() {
                "intercept" | "ttm_5" => 1.0,
                "da_load" => 50000.0,
                "da_solar" => 100.0,
                "da_wind_on" => 2000.0,
                "da_wind_off" => 300.0,
                _ => 0.0,
            };
            assert_eq!(*v, expect, "{n}");
        }
    }

    #[test]
    fn running_alpha_means() {
        let mut traded = [false; 44];
        // step t=3 is index 15; lag 1 is index 14, lag 2 index 13
        traded[14] = true;
        let mut diffs = [0.0; 44];
        diffs[14] = 1.0;
        let g = grid_with(wed(), &diffs, &traded);
        let row = build_logit_features(&g, &fund(wed()), 3).unwrap();
        let names = logit_feature_names(31);
        let get = |n: &str| row[names.iter().position(|x| x == n).unwrap()];
        assert_eq!(get("alphabar_1"), 1.0);
        assert_eq!(get("alphabar_2"), 0.5);
        assert!((get("alphabar_3") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(get("dp_lag1"), 1.0);
        assert_eq!(get("absdp_lag1"), 1.0);
    }

    #[test]
    fn saturday_dummies() {
        let sat = NaiveDate::from_ymd_opt(2020, 3, 7).unwrap();
        assert_eq!(weekday_dummies(sat), [0.0, 1.0, 0.0]);
        let row = build_logit_features(&flat(sat), &fund(sat), 1).unwrap();
        assert_eq!(&row[11..14], &[0.0, 1.0, 0.0]);
        let mon = NaiveDate::from_ymd_opt(2020, 3, 2).unwrap();
        assert_eq!(weekday_dummies(mon), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn sigma_row_pass_through() {
        let mut diffs = [0.0; 44];
        let mut traded = [false; 44];
        // step t=1 is index 13; |dP| lags 1 and 2 are indices 12 and 11
        diffs[12] = -1.0;
        diffs[11] = 2.0;
        traded[12] = true;
        traded[11] = true;
        let g = grid_with(wed(), &diffs, &traded);
        let (row, spline) = build_sigma_features(&g, &fund(wed()), 1).unwrap();
        assert_eq!(&row[..8], &[1.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&row[15..], &[1.0, 1.0]);
        assert_eq!(spline, [g.prices[12], 1.0]);
        let quiet = flat(wed());
        let (row, _) = build_sigma_features(&quiet, &fund(wed()), 4).unwrap();
        assert_eq!(&row[15..], &[0.0, 0.0]);
    }

    #[test]
    fn mu_row_ordering() {
        let mut diffs = [0.0; 44];
        // step t=4 reads indices 15, 14, 13
        diffs[13] = 1.0;
        diffs[14] = -2.0;
        diffs[15] = 3.0;
        let mut traded = [false; 44];
        traded[13] = true;
        traded[14] = true;
        traded[15] = true;
        let g = grid_with(wed(), &diffs, &traded);
        assert_eq!(build_mu_features(&g, 4).unwrap(), [3.0, -2.0, 1.0]);
        assert_eq!(build_mu_features(&flat(wed()), 4).unwrap(), [0.0; 3]);
        for t in 1..=31 {
            let row = build_mu_features(&g, t).unwrap();
            for j in 0..3 {
                assert_eq!(row[j], g.prices[12 + t - j - 1] - g.prices[12 + t - j - 2]);
            }
        }
    }

    #[test]
    fn lqr_row_hand_assembled() {
        let mut diffs = [0.0; 44];
        let mut traded = [false; 44];
        diffs[12] = 0.5;
        diffs[11] = -1.5;
        diffs[5] = 2.0;
        traded[12] = true;
        traded[11] = true;
        traded[5] = true;
        let g = grid_with(wed(), &diffs, &traded);
        let row = build_lqr_features(&g, &fund(wed())).unwrap();
        let expect = [
            1.0, 0.5, -1.5, 0.0, 0.5, 1.5, 0.0, 0.0, 0.0, 0.0, 2.0, 41.0, 0.0, 0.0, 0.0, 1.0, 1.0, 50000.0, 100.0,
            2000.0, 300.0,
        ];
        assert_eq!(row, expect);
        let sun = NaiveDate::from_ymd_opt(2020, 3, 8).unwrap();
        let row = build_lqr_features(&flat(sun), &fund(sun)).unwrap();
        assert_eq!(&row[12..15], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_steps() {
        let g = flat(wed());
        assert!(matches!(build_mu_features(&g, 0), Err(Error::Precondition(_))));
        assert!(matches!(build_mu_features(&g, 32), Err(Error::Precondition(_))));
        let short = PriceGrid::from_prices(wed(), 10, 3, vec![40.0; 10], vec![false; 10], 40.0, 40.0).unwrap();
        assert!(matches!(build_mu_features(&short, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn standardize_examples() {
        let m = FeatureMatrix::from_rows(
            vec!["intercept".into(), "x".into(), "c".into()],
            &[vec![1.0, 1.0, 5.0], vec![1.0, 2.0, 5.0], vec![1.0, 3.0, 5.0]],
        )
        .unwrap();
        let (s, stats) = standardize(&m, None).unwrap();
        assert_eq!(s.data.column(1).as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(s.data.column(0).as_slice(), &[1.0; 3]);
        assert_eq!(s.data.column(2).as_slice(), &[5.0; 3]);
        assert_eq!(stats.constant_columns(), vec!["c"]);
        let (again, _) = standardize(&m, Some(&stats)).unwrap();
        assert_eq!(again.data, s.data);
        let other = FeatureMatrix::from_rows(vec!["y".into()], &[vec![1.0]]).unwrap();
        assert!(matches!(standardize(&other, Some(&stats)), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn ttm_one_hot_and_alpha_bounds(seed in 0u64..500, t in 1usize..=31) {
            use rand::Rng;
            let mut rng = crate::statcore::rng_from_seed(seed);
            let traded: Vec<bool> = (0..44).map(|_| rng.random_bool(0.5)).collect();
            let diffs: Vec<f64> = traded.iter().map(|a| if *a { rng.random_range(-3.0..3.0) } else { 0.0 }).collect();
            let g = grid_with(wed(), &diffs, &traded);
            let row = build_logit_features(&g, &fund(wed()), t).unwrap();
            let ttm: f64 = row[14..45].iter().sum();
            prop_assert_eq!(ttm, 1.0);
            let ab = &row[49..61];
            prop_assert!(ab[0] == 0.0 || ab[0] == 1.0);
            for j in 1..12 {
                prop_assert!((0.0..=1.0).contains(&ab[j]));
                prop_assert!((ab[j] - ab[j - 1]).abs() <= 1.0 / (j + 1) as f64 + 1e-12);
            }
        }
    }
}
