//! Core engine for the sentiment/technical signal-fusion strategies.
//!
//! The crate is organised bottom-up:
//!
//! - [`market_data`]: CSV ingestion into a dense (ticker x day) [`PanelStore`].
//! - [`indicators`]: RSI, MACD, Garman-Klass, rolling statistics and the
//!   per-asset feature grid.
//! - [`signal`]: technical and sentiment signals, cross-sectional z-scores,
//!   convex combination and quintile buckets.
//! - [`backtest`]: close-to-close long-short and long-only ledgers.
//! - [`metrics`]: annualised performance statistics.
//! - [`factor`]: OLS factor decomposition with classical standard errors.
//! - [`env`]: the long-only portfolio environment used by the RL agent.
//! - [`synth`]: seeded synthetic panels so everything runs without vendor data.

pub mod backtest;
pub mod env;
pub mod error;
pub mod factor;
pub mod indicators;
pub mod market_data;
pub mod metrics;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use market_data::{Bar, FactorRow, PanelStore, SentimentLabel, SentimentRecord};
