//! Ensemble trajectory forecasting for hourly intraday electricity products.
//!
//! The crate turns trade-level (or synthetic) market data into dense 5-minute
//! VWAP grids, fits zero-inflated Student-t mixture models and a bench of
//! simpler alternatives on rolling windows, simulates price-trajectory
//! ensembles for the last trading hours of each product, and scores them with
//! multivariate proper scoring rules and Diebold-Mariano tests.

pub mod backtest;
pub mod designmatrix;
pub mod dmtest;
pub mod error;
pub mod estimators;
pub mod marketdata;
pub mod models;
pub mod scoring;
pub mod statcore;

pub use error::{Error, Result};
