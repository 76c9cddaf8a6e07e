//! CSV input/output for trades, day-ahead prices, fundamentals and the
//! normalized grid store.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use log::warn;

use super::grid::{build_price_grid, FundamentalRow, GridSpec, PriceGrid, TradeRecord};
use super::MarketData;
use crate::error::{Error, Result};

/// Fixed float formatting for persisted artifacts: 17 significant digits,
/// enough to round-trip every f64 exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: cannot parse {what} from {s:?}")))
}

fn parse_u32(s: &str, what: &str, line: usize) -> Result<u32> {
    s.trim()
        .parse::<u32>()
        .map_err(|_| Error::Input(format!("line {line}: cannot parse {what} from {s:?}")))
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::Input(format!("line {line}: cannot parse date from {s:?}")))
}

fn parse_timestamp(s: &str, line: usize) -> Result<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| Error::Input(format!("line {line}: cannot parse timestamp from {s:?}")))
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Input(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            header,
            expected
        )));
    }
    Ok(rdr)
}

pub const TRADES_HEADER: [&str; 5] = ["delivery_day", "delivery_hour", "exec_ts", "price", "volume"];
pub const FUNDAMENTALS_HEADER: [&str; 6] = ["day", "hour", "da_load", "da_solar", "da_wind_on", "da_wind_off"];
pub const DA_HEADER: [&str; 3] = ["day", "hour", "da_price"];

pub fn read_trades(path: &Path) -> Result<Vec<TradeRecord>> {
    let mut rdr = open_csv(path, &TRADES_HEADER)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let tr = TradeRecord {
            delivery_day: parse_date(&rec[0], line)?,
            delivery_hour: parse_u32(&rec[1], "delivery_hour", line)?,
            exec_time: parse_timestamp(&rec[2], line)?,
            price: parse_f64(&rec[3], "price", line)?,
            volume: parse_f64(&rec[4], "volume", line)?,
        };
        tr.validate().map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        out.push(tr);
    }
    Ok(out)
}

pub fn write_trades(path: &Path, trades: &[TradeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRADES_HEADER)?;
    for t in trades {
        w.write_record([
            t.delivery_day.format("%Y-%m-%d").to_string(),
            t.delivery_hour.to_string(),
            t.exec_time.format("%Y-%m-%dT%H:%M:%S%.3f").to_string(),
            format_float(t.price),
            format_float(t.volume),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fundamentals(path: &Path) -> Result<BTreeMap<(NaiveDate, u32), FundamentalRow>> {
    let mut rdr = open_csv(path, &FUNDAMENTALS_HEADER)?;
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let row = FundamentalRow {
            day: parse_date(&rec[0], line)?,
            hour: parse_u32(&rec[1], "hour", line)?,
            da_load: parse_f64(&rec[2], "da_load", line)?,
            da_solar: parse_f64(&rec[3], "da_solar", line)?,
            da_wind_on: parse_f64(&rec[4], "da_wind_on", line)?,
            da_wind_off: parse_f64(&rec[5], "da_wind_off", line)?,
        };
        row.validate().map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        if out.insert((row.day, row.hour), row).is_some() {
            return Err(Error::Input(format!("line {line}: duplicate fundamentals row")));
        }
    }
    Ok(out)
}

pub fn write_fundamentals<'a>(path: &Path, rows: impl IntoIterator<Item = &'a FundamentalRow>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FUNDAMENTALS_HEADER)?;
    for r in rows {
        w.write_record([
            r.day.format("%Y-%m-%d").to_string(),
            r.hour.to_string(),
            format_float(r.da_load),
            format_float(r.da_solar),
            format_float(r.da_wind_on),
            format_float(r.da_wind_off),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_da_prices(path: &Path) -> Result<BTreeMap<(NaiveDate, u32), f64>> {
    let mut rdr = open_csv(path, &DA_HEADER)?;
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let day = parse_date(&rec[0], line)?;
        let hour = parse_u32(&rec[1], "hour", line)?;
        let p = parse_f64(&rec[2], "da_price", line)?;
        if !p.is_finite() {
            return Err(Error::Input(format!("line {line}: non-finite day-ahead price")));
        }
        if out.insert((day, hour), p).is_some() {
            return Err(Error::Input(format!("line {line}: duplicate day-ahead price")));
        }
    }
    Ok(out)
}

pub fn write_da_prices(path: &Path, prices: &BTreeMap<(NaiveDate, u32), f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DA_HEADER)?;
    for ((day, hour), p) in prices {
        w.write_record([day.format("%Y-%m-%d").to_string(), hour.to_string(), format_float(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// Days whose number of day-ahead prices differs from the usual count
/// (clock-change days). The usual count is the most frequent one, 24 for a
/// full auction; extracts holding fewer products per day keep their days.
pub fn irregular_days(da: &BTreeMap<(NaiveDate, u32), f64>) -> Vec<NaiveDate> {
    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for (day, _) in da.keys() {
        *counts.entry(*day).or_default() += 1;
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for c in counts.values() {
        *freq.entry(*c).or_default() += 1;
    }
    // ties go to the larger count
    let Some(usual) = freq.iter().max_by_key(|(c, f)| (**f, **c)).map(|(c, _)| *c) else {
        return Vec::new();
    };
    counts.into_iter().filter(|(_, c)| *c != usual).map(|(d, _)| d).collect()
}

/// Builds grids for every product-day that has a day-ahead price and
/// fundamentals. Clock-change days are dropped with a warning unless
/// `keep_irregular` is set.
pub fn ingest(
    trades: &[TradeRecord],
    da: &BTreeMap<(NaiveDate, u32), f64>,
    fundamentals: &BTreeMap<(NaiveDate, u32), FundamentalRow>,
    spec: &GridSpec,
    keep_irregular: bool,
) -> Result<MarketData> {
    spec.validate()?;
    let dropped = if keep_irregular { Vec::new() } else { irregular_days(da) };
    for d in &dropped {
        warn!("dropping {d}: day-ahead auction does not have 24 hours");
    }
    let mut by_product: BTreeMap<(NaiveDate, u32), Vec<TradeRecord>> = BTreeMap::new();
    for t in trades {
        by_product.entry((t.delivery_day, t.delivery_hour)).or_default().push(t.clone());
    }
    let mut grids = Vec::new();
    let mut funds = BTreeMap::new();
    for (&(day, hour), &price) in da {
        if dropped.contains(&day) {
            continue;
        }
        let Some(f) = fundamentals.get(&(day, hour)) else {
            warn!("skipping {day} h{hour}: no fundamentals");
            continue;
        };
        let tr = by_product.get(&(day, hour)).map(Vec::as_slice).unwrap_or(&[]);
        grids.push(build_price_grid(day, hour, tr, Some(price), spec)?);
        funds.insert((day, hour), *f);
    }
    if grids.is_empty() {
        return Err(Error::Data("no product-day has both a day-ahead price and fundamentals".into()));
    }
    MarketData::new(*spec, grids, funds)
}

const STORE_SPEC: &str = "grid_spec.json";
const STORE_GRIDS: &str = "grids.csv";
const STORE_FUNDAMENTALS: &str = "fundamentals.csv";

/// Writes the normalized grid store into `dir`.
pub fn write_grid_store(dir: &Path, data: &MarketData) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(STORE_SPEC), serde_json::to_string_pretty(&data.spec)? + "\n")?;
    let n = data.spec.len();
    let mut w = csv::Writer::from_path(dir.join(STORE_GRIDS))?;
    let mut header = vec!["day".to_string(), "hour".into(), "da_price".into(), "carry_in".into()];
    header.extend((0..n).map(|i| format!("p{i}")));
    header.extend((0..n).map(|i| format!("a{i}")));
    w.write_record(&header)?;
    for g in data.grids() {
        let mut rec = vec![
            g.day.format("%Y-%m-%d").to_string(),
            g.hour.to_string(),
            format_float(g.da_price),
            format_float(g.carry_in),
        ];
        rec.extend(g.prices.iter().map(|p| format_float(*p)));
        rec.extend(g.traded.iter().map(|a| (*a as u8).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_fundamentals(&dir.join(STORE_FUNDAMENTALS), data.fundamentals_iter())?;
    Ok(())
}

pub fn read_grid_store(dir: &Path) -> Result<MarketData> {
    let spec: GridSpec = serde_json::from_str(&fs::read_to_string(dir.join(STORE_SPEC))?)?;
    spec.validate()?;
    let n = spec.len();
    let mut rdr = csv::Reader::from_path(dir.join(STORE_GRIDS))?;
    if rdr.headers()?.len() != 4 + 2 * n {
        return Err(Error::Data("grid store width does not match its grid spec".into()));
    }
    let mut grids = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let day = parse_date(&rec[0], line)?;
        let hour = parse_u32(&rec[1], "hour", line)?;
        let da = parse_f64(&rec[2], "da_price", line)?;
        let carry_in = parse_f64(&rec[3], "carry_in", line)?;
        let prices = (0..n).map(|i| parse_f64(&rec[4 + i], "price", line)).collect::<Result<Vec<_>>>()?;
        let traded = (0..n)
            .map(|i| match rec[4 + n + i].trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                s => Err(Error::Input(format!("line {line}: bad trade flag {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        grids.push(PriceGrid::from_prices(day, hour, spec.origin_index(), prices, traded, da, carry_in)?);
    }
    let funds = read_fundamentals(&dir.join(STORE_FUNDAMENTALS))?;
    MarketData::new(spec, grids, funds)
}
