//! Dense 5-minute VWAP grids with carry-forward and day-ahead fallback.

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One executed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub delivery_day: NaiveDate,
    pub delivery_hour: u32,
    pub exec_time: NaiveDateTime,
    pub price: f64,
    pub volume: f64,
}

impl TradeRecord {
    pub fn delivery_start(&self) -> NaiveDateTime {
        delivery_start(self.delivery_day, self.delivery_hour)
    }

    /// Minutes between execution and delivery start (positive before delivery).
    pub fn minutes_before_delivery(&self) -> f64 {
        (self.delivery_start() - self.exec_time).num_milliseconds() as f64 / 60_000.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.delivery_hour > 23 {
            return Err(Error::Input(format!("delivery hour {} out of range", self.delivery_hour)));
        }
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(Error::Input(format!("trade volume must be positive, got {}", self.volume)));
        }
        if !self.price.is_finite() {
            return Err(Error::Input("trade price must be finite".into()));
        }
        if self.exec_time >= self.delivery_start() {
            return Err(Error::Input(format!(
                "trade executed at {} is not before delivery start {}",
                self.exec_time,
                self.delivery_start()
            )));
        }
        Ok(())
    }
}

pub fn delivery_start(day: NaiveDate, hour: u32) -> NaiveDateTime {
    day.and_time(NaiveTime::MIN) + Duration::hours(hour as i64)
}

/// Day-ahead forecasts of the fundamentals for one delivery hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalRow {
    pub day: NaiveDate,
    pub hour: u32,
    pub da_load: f64,
    pub da_solar: f64,
    pub da_wind_on: f64,
    pub da_wind_off: f64,
}

impl FundamentalRow {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.da_load, self.da_solar, self.da_wind_on, self.da_wind_off];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite fundamentals for {} h{}", self.day, self.hour)));
        }
        if self.da_load <= 0.0 {
            return Err(Error::Input(format!("non-positive load forecast for {} h{}", self.day, self.hour)));
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 4] {
        [self.da_load, self.da_solar, self.da_wind_on, self.da_wind_off]
    }
}

/// Layout of the extended grid: `lags` pre-origin windows, the origin window,
/// then `steps` forecast windows, each `window_minutes` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lags: usize,
    pub steps: usize,
    pub window_minutes: i64,
    /// Minutes before delivery at which the origin window ends.
    pub origin_minutes: i64,
    /// Trading opens at this hour on the day before delivery.
    pub trading_open_hour: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lags: 12,
            steps: 31,
            window_minutes: 5,
            origin_minutes: 185,
            trading_open_hour: 15,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lags < 12 {
            return Err(Error::Config("grid needs at least 12 pre-origin windows".into()));
        }
        if self.steps == 0 || self.window_minutes <= 0 {
            return Err(Error::Config("grid needs positive steps and window width".into()));
        }
        if self.origin_minutes - self.window_minutes * self.steps as i64 <= 0 {
            return Err(Error::Config("last forecast window must end before delivery".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lags + 1 + self.steps
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn origin_index(&self) -> usize {
        self.lags
    }

    /// Minutes before delivery at which window `i` ends.
    pub fn window_end_minutes(&self, i: usize) -> i64 {
        self.origin_minutes + self.window_minutes * (self.lags as i64 - i as i64)
    }

    /// Window index containing a trade `m` minutes before delivery, if any.
    /// Window `i` covers `(end_i, end_i + width]` minutes before delivery,
    /// i.e. `[b - end_i - width, b - end_i)` in clock time.
    pub fn window_of(&self, minutes_before: f64) -> Option<usize> {
        let last_end = self.window_end_minutes(self.len() - 1) as f64;
        let first_start = (self.window_end_minutes(0) + self.window_minutes) as f64;
        if minutes_before <= last_end || minutes_before > first_start {
            return None;
        }
        let k = ((first_start - minutes_before) / self.window_minutes as f64).floor() as usize;
        Some(k.min(self.len() - 1))
    }

    pub fn trading_open(&self, day: NaiveDate) -> NaiveDateTime {
        let prev = day.pred_opt().unwrap_or(day);
        prev.and_time(NaiveTime::MIN) + Duration::hours(self.trading_open_hour as i64)
    }
}

/// Extended price grid for one product-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub day: NaiveDate,
    pub hour: u32,
    pub origin_index: usize,
    pub prices: Vec<f64>,
    pub traded: Vec<bool>,
    pub diffs: Vec<f64>,
    pub da_price: f64,
    /// Value carried into the first window: the last pre-grid VWAP, or the
    /// day-ahead price when nothing traded earlier.
    pub carry_in: f64,
}

impl PriceGrid {
    /// Assembles a grid from prices and trade flags, deriving the diffs.
    pub fn from_prices(
        day: NaiveDate,
        hour: u32,
        origin_index: usize,
        prices: Vec<f64>,
        traded: Vec<bool>,
        da_price: f64,
        carry_in: f64,
    ) -> Result<Self> {
        if prices.len() != traded.len() {
            return Err(Error::Input("prices and trade flags differ in length".into()));
        }
        if origin_index >= prices.len() {
            return Err(Error::Input("origin index outside the grid".into()));
        }
        let diffs = derive_diffs(&prices, carry_in);
        let grid = Self {
            day,
            hour,
            origin_index,
            prices,
            traded,
            diffs,
            da_price,
            carry_in,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len() - self.origin_index - 1
    }

    pub fn origin_price(&self) -> f64 {
        self.prices[self.origin_index]
    }

    /// Prices at steps 1..T.
    pub fn future_prices(&self) -> &[f64] {
        &self.prices[self.origin_index + 1..]
    }

    /// One-step differences at steps 1..T.
    pub fn future_diffs(&self) -> &[f64] {
        &self.diffs[self.origin_index + 1..]
    }

    pub fn future_traded(&self) -> &[bool] {
        &self.traded[self.origin_index + 1..]
    }

    /// Writes window `i` from a trade flag and a price change, keeping the
    /// carry-forward and diff invariants.
    pub fn set_window(&mut self, i: usize, traded: bool, diff: f64) {
        let prev = if i == 0 { self.carry_in } else { self.prices[i - 1] };
        let p = if traded { prev + diff } else { prev };
        self.prices[i] = p;
        self.traded[i] = traded;
        self.diffs[i] = p - prev;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.traded.len() != n || self.diffs.len() != n {
            return Err(Error::Data("grid arrays differ in length".into()));
        }
        if self.prices.iter().any(|p| !p.is_finite()) || !self.carry_in.is_finite() {
            return Err(Error::Data(format!("non-finite price in grid {} h{}", self.day, self.hour)));
        }
        for i in 0..n {
            let prev = if i == 0 { self.carry_in } else { self.prices[i - 1] };
            if self.diffs[i] != self.prices[i] - prev {
                return Err(Error::Data(format!("diff mismatch at index {i}")));
            }
            if !self.traded[i] && self.prices[i] != prev {
                return Err(Error::Data(format!("untraded window {i} does not carry the previous price")));
            }
        }
        Ok(())
    }
}

pub fn derive_diffs(prices: &[f64], carry_in: f64) -> Vec<f64> {
    let mut prev = carry_in;
    prices
        .iter()
        .map(|p| {
            let d = p - prev;
            prev = *p;
            d
        })
        .collect()
}

/// Volume-weighted average price; `None` for an empty window.
pub fn aggregate_vwap(trades: &[(f64, f64)]) -> Result<Option<f64>> {
    if trades.is_empty() {
        return Ok(None);
    }
    let mut pv = 0.0;
    let mut v = 0.0;
    for &(price, volume) in trades {
        if !(volume > 0.0) {
            return Err(Error::Input(format!("non-positive volume {volume}")));
        }
        pv += price * volume;
        v += volume;
    }
    let vwap = pv / v;
    // keep the rounding error inside the trade price range
    let lo = trades.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let hi = trades.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(Some(vwap.clamp(lo, hi)))
}

/// Builds the grid of one product-day from its trades. Trades outside the
/// trading session or after the last window are ignored.
pub fn build_price_grid(
    day: NaiveDate,
    hour: u32,
    trades: &[TradeRecord],
    da_price: Option<f64>,
    spec: &GridSpec,
) -> Result<PriceGrid> {
    spec.validate()?;
    let open = spec.trading_open(day);
    let first_start = (spec.window_end_minutes(0) + spec.window_minutes) as f64;
    let n = spec.len();
    let mut windows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    // pre-grid trades bucketed on the same 5-minute alignment, keyed by how
    // many windows before the grid they fall
    let mut pre: Vec<(i64, f64, f64)> = Vec::new();
    for tr in trades {
        if tr.delivery_day != day || tr.delivery_hour != hour {
            return Err(Error::Input("trade belongs to a different product".into()));
        }
        tr.validate()?;
        if tr.exec_time < open {
            continue;
        }
        let m = tr.minutes_before_delivery();
        if let Some(i) = spec.window_of(m) {
            windows[i].push((tr.price, tr.volume));
        } else if m > first_start {
            let k = ((m - first_start) / spec.window_minutes as f64).ceil() as i64;
            pre.push((k.max(1), tr.price, tr.volume));
        }
    }
    let carry_in = if let Some(kmin) = pre.iter().map(|p| p.0).min() {
        let last: Vec<(f64, f64)> = pre.iter().filter(|p| p.0 == kmin).map(|p| (p.1, p.2)).collect();
        aggregate_vwap(&last)?.expect("non-empty bucket")
    } else {
        match (da_price, aggregate_vwap(&windows[0])?) {
            (Some(p), _) if p.is_finite() => p,
            // the fallback is never consulted when the first window traded
            (_, Some(first)) => first,
            _ => {
                return Err(Error::Data(format!(
                    "no trades before the grid and no day-ahead price for {day} h{hour}"
                )))
            }
        }
    };
    let mut prices = Vec::with_capacity(n);
    let mut traded = Vec::with_capacity(n);
    let mut prev = carry_in;
    for w in &windows {
        match aggregate_vwap(w)? {
            Some(p) => {
                prices.push(p);
                traded.push(true);
                prev = p;
            }
            None => {
                prices.push(prev);
                traded.push(false);
            }
        }
    }
    PriceGrid::from_prices(
        day,
        hour,
        spec.origin_index(),
        prices,
        traded,
        da_price.unwrap_or(f64::NAN),
        carry_in,
    )
}
