//! Market data: trades, day-ahead prices and fundamentals, the extended VWAP
//! grid, and a synthetic market generator with known ground truth.

mod grid;
pub mod io;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

pub use grid::{
    aggregate_vwap, build_price_grid, delivery_start, derive_diffs, FundamentalRow, GridSpec, PriceGrid,
    TradeRecord,
};
pub use synth::{generate_synthetic_market, SynthConfig, SyntheticMarket, SyntheticTruth};

use crate::error::{Error, Result};

/// Grids and fundamentals for a set of product-days, sorted by (day, hour).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub spec: GridSpec,
    grids: Vec<PriceGrid>,
    index: BTreeMap<(NaiveDate, u32), usize>,
    fundamentals: BTreeMap<(NaiveDate, u32), FundamentalRow>,
}

impl MarketData {
    pub fn new(
        spec: GridSpec,
        mut grids: Vec<PriceGrid>,
        fundamentals: BTreeMap<(NaiveDate, u32), FundamentalRow>,
    ) -> Result<Self> {
        grids.sort_by_key(|g| (g.day, g.hour));
        let mut index = BTreeMap::new();
        for (i, g) in grids.iter().enumerate() {
            if g.len() != spec.len() || g.origin_index != spec.origin_index() {
                return Err(Error::Data(format!("grid {} h{} does not match the grid spec", g.day, g.hour)));
            }
            if !fundamentals.contains_key(&(g.day, g.hour)) {
                return Err(Error::Data(format!("no fundamentals for {} h{}", g.day, g.hour)));
            }
            if index.insert((g.day, g.hour), i).is_some() {
                return Err(Error::Data(format!("duplicate grid for {} h{}", g.day, g.hour)));
            }
        }
        Ok(Self {
            spec,
            grids,
            index,
            fundamentals,
        })
    }

    pub fn grids(&self) -> &[PriceGrid] {
        &self.grids
    }

    pub fn grid(&self, day: NaiveDate, hour: u32) -> Option<&PriceGrid> {
        self.index.get(&(day, hour)).map(|i| &self.grids[*i])
    }

    pub fn fundamentals(&self, day: NaiveDate, hour: u32) -> Result<&FundamentalRow> {
        self.fundamentals
            .get(&(day, hour))
            .ok_or_else(|| Error::Data(format!("no fundamentals for {day} h{hour}")))
    }

    pub fn fundamentals_iter(&self) -> impl Iterator<Item = &FundamentalRow> {
        self.fundamentals.values()
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.grids.iter().map(|g| g.day).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn hours(&self) -> Vec<u32> {
        self.grids.iter().map(|g| g.hour).collect::<BTreeSet<_>>().into_iter().collect()
    }
}
