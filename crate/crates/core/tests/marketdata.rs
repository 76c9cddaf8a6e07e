use std::collections::BTreeMap;
use std::fs;

use chrono::NaiveDate;
use trajcast::marketdata::io::{
    ingest, irregular_days, read_da_prices, read_fundamentals, read_grid_store, read_trades, write_grid_store,
};
use trajcast::marketdata::synth::{render_trades, write_synthetic_market};
use trajcast::marketdata::{generate_synthetic_market, SynthConfig};

fn day(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 3, d).unwrap()
}

#[test]
fn synthetic_trades_ingest_back_to_the_same_grids() {
    let market = generate_synthetic_market(&SynthConfig::new(6, 3), 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_market(dir.path(), &market, true).unwrap();
    let trades = read_trades(&dir.path().join("trades.csv")).unwrap();
    assert_eq!(trades.len(), render_trades(&market.data).len());
    let da = read_da_prices(&dir.path().join("da_prices.csv")).unwrap();
    let funds = read_fundamentals(&dir.path().join("fundamentals.csv")).unwrap();
    let data = ingest(&trades, &da, &funds, &market.data.spec, false).unwrap();
    assert_eq!(data.grids().len(), market.data.grids().len());
    for (a, b) in data.grids().iter().zip(market.data.grids()) {
        assert_eq!(a.traded, b.traded);
        for (p, q) in a.prices.iter().zip(&b.prices) {
            assert!((p - q).abs() <= 1e-9 * (1.0 + q.abs()), "{p} vs {q}");
        }
    }
}

#[test]
fn grid_store_round_trip_is_exact() {
    let market = generate_synthetic_market(&SynthConfig::new(4, 2), 22).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_grid_store(dir.path(), &market.data).unwrap();
    let back = read_grid_store(dir.path()).unwrap();
    assert_eq!(back, market.data);
}

#[test]
fn clock_change_days_follow_the_usual_hour_count() {
    let mut da = BTreeMap::new();
    for d in 1..=4 {
        for h in 0..24 {
            if !(d == 2 && h == 2) {
                da.insert((day(d), h), 40.0);
            }
        }
    }
    assert_eq!(irregular_days(&da), vec![day(2)]);
    // an extract with two products per day keeps every day
    let mut few = BTreeMap::new();
    for d in 1..=4 {
        few.insert((day(d), 8), 40.0);
        few.insert((day(d), 20), 41.0);
    }
    assert!(irregular_days(&few).is_empty());
    assert!(irregular_days(&BTreeMap::new()).is_empty());
}

#[test]
fn ingest_without_matching_fundamentals_is_a_data_error() {
    let market = generate_synthetic_market(&SynthConfig::new(2, 1), 23).unwrap();
    let err = ingest(&[], &market.da_prices, &BTreeMap::new(), &market.data.spec, false).unwrap_err();
    assert_eq!(err.kind(), "data");
}

#[test]
fn malformed_csvs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trades.csv");
    fs::write(&path, "delivery_day,delivery_hour,exec_ts,price\n").unwrap();
    assert_eq!(read_trades(&path).unwrap_err().kind(), "input");
    fs::write(
        &path,
        "delivery_day,delivery_hour,exec_ts,price,volume\n2021-03-01,8,2021-03-01T07:00:00,abc,1\n",
    )
    .unwrap();
    assert_eq!(read_trades(&path).unwrap_err().kind(), "input");
    let da = dir.path().join("da.csv");
    fs::write(&da, "day,hour,da_price\n2021-03-01,8,40\n2021-03-01,8,41\n").unwrap();
    assert_eq!(read_da_prices(&da).unwrap_err().kind(), "input");
}
