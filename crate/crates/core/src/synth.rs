//! Seeded synthetic markets.
//!
//! Closes follow a geometric random walk; opens, highs, lows, VWAP and
//! volume are drawn around them so every bar passes validation. News is
//! sprinkled at random and nudges the next day's drift in its direction,
//! which gives the signal pipeline something to find. A single asset can
//! also carry a planted drift announced by a permanent positive headline.

use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{write_factors_csv, Bar, FactorRow, PanelStore, SentimentLabel, SentimentRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tickers: usize,
    pub n_days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    /// Daily log drift shared by every asset.
    pub drift: f64,
    /// Daily log volatility.
    pub vol: f64,
    /// Probability of a headline per ticker-day.
    pub news_density: f64,
    /// Extra next-day log drift per unit of sentiment value.
    pub news_alpha: f64,
    /// Asset given `alpha_drift` on top of `drift`, with positive news every day.
    pub alpha_asset: Option<usize>,
    pub alpha_drift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tickers: 10,
            n_days: 250,
            start: NaiveDate::from_ymd_opt(2020, 1, 2).expect("valid date"),
            seed: 7,
            drift: 0.0002,
            vol: 0.015,
            news_density: 0.2,
            news_alpha: 0.002,
            alpha_asset: None,
            alpha_drift: 0.0,
        }
    }
}

impl SynthConfig {
    /// Four low-volatility assets; the first drifts up 20 bp a day and is the
    /// only one with news.
    pub fn planted_alpha(seed: u64, n_days: usize) -> Self {
        SynthConfig {
            n_tickers: 4,
            n_days,
            seed,
            drift: 0.0,
            vol: 0.005,
            news_density: 0.0,
            news_alpha: 0.0,
            alpha_asset: Some(0),
            alpha_drift: 0.002,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tickers == 0 || self.n_days < 2 {
            return Err(Error::Validation(format!(
                "need at least one ticker and two days, got {} x {}",
                self.n_tickers, self.n_days
            )));
        }
        if !(self.vol >= 0.0 && self.vol.is_finite()) {
            return Err(Error::Validation(format!("vol {} must be finite and >= 0", self.vol)));
        }
        if !(0.0..=1.0).contains(&self.news_density) {
            return Err(Error::Validation(format!("news density {} outside [0, 1]", self.news_density)));
        }
        if let Some(a) = self.alpha_asset {
            if a >= self.n_tickers {
                return Err(Error::Validation(format!("alpha asset {a} out of {} tickers", self.n_tickers)));
            }
        }
        Ok(())
    }

    pub fn tickers(&self) -> Vec<String> {
        (0..self.n_tickers).map(|i| format!("S{i:02}")).collect()
    }
}

/// The first `n` weekdays on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

/// Prices and attached sentiment for `config`.
pub fn synthetic_panel(config: &SynthConfig) -> Result<PanelStore> {
    let (panel, records) = synthetic_parts(config)?;
    Ok(panel.with_sentiment(records)?.0)
}

/// Prices plus the raw sentiment records that were planted.
pub fn synthetic_parts(config: &SynthConfig) -> Result<(PanelStore, Vec<SentimentRecord>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tickers = config.tickers();
    let calendar = business_days(config.start, config.n_days);
    let step = normal(config.vol);
    let gap = normal(config.vol * 0.25);
    let wick = normal(config.vol * 0.5);
    let vol_noise = normal(0.3);

    let mut bars = Vec::with_capacity(tickers.len());
    let mut records = Vec::new();
    for (t, ticker) in tickers.iter().enumerate() {
        let planted = config.alpha_asset == Some(t);
        let mut close = 50.0 + 100.0 * rng.random::<f64>();
        let mut pending_news = 0.0;
        let mut row = Vec::with_capacity(calendar.len());
        for (d, date) in calendar.iter().enumerate() {
            let prev = close;
            if d > 0 {
                let mut mu = config.drift - 0.5 * config.vol * config.vol + config.news_alpha * pending_news;
                if planted {
                    mu += config.alpha_drift;
                }
                close = prev * (mu + step.sample(&mut rng)).exp();
            }
            let open = prev * gap.sample(&mut rng).exp();
            let high = open.max(close) * wick.sample(&mut rng).abs().exp();
            let low = open.min(close) * (-wick.sample(&mut rng).abs()).exp();
            let volume = (1e6 * vol_noise.sample(&mut rng).exp()).round();
            row.push(Bar {
                date: *date,
                open,
                high,
                low,
                close,
                volume,
                vwap: (high + low + close) / 3.0,
            });

            pending_news = 0.0;
            if planted {
                records.push(SentimentRecord {
                    date: *date,
                    ticker: ticker.clone(),
                    label: SentimentLabel::Positive,
                    confidence: 0.9,
                });
            } else if rng.random::<f64>() < config.news_density {
                let label = match rng.random_range(0..3) {
                    0 => SentimentLabel::Positive,
                    1 => SentimentLabel::Neutral,
                    _ => SentimentLabel::Negative,
                };
                let confidence = rng.random_range(0.5..1.0);
                pending_news = confidence * label.sign();
                records.push(SentimentRecord {
                    date: *date,
                    ticker: ticker.clone(),
                    label,
                    confidence,
                });
            }
        }
        bars.push(row);
    }
    Ok((PanelStore::new(tickers, calendar, bars)?, records))
}

/// Independent normal factor returns with a small constant risk-free rate.
pub fn synthetic_factors(dates: &[NaiveDate], seed: u64) -> Vec<FactorRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mkt = normal(0.01);
    let style = normal(0.005);
    dates
        .iter()
        .map(|d| FactorRow {
            date: *d,
            mktrf: mkt.sample(&mut rng),
            smb: style.sample(&mut rng),
            hml: style.sample(&mut rng),
            rmw: style.sample(&mut rng),
            cma: style.sample(&mut rng),
            umd: style.sample(&mut rng),
            rf: 0.0001,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub prices: PathBuf,
    pub sentiment: PathBuf,
    pub factors: PathBuf,
}

/// Writes `prices.csv`, `sentiment.csv` and `factors.csv` into `dir`.
pub fn write_fixture(config: &SynthConfig, dir: &Path) -> Result<FixturePaths> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let panel = synthetic_panel(config)?;
    let paths = FixturePaths {
        prices: dir.join("prices.csv"),
        sentiment: dir.join("sentiment.csv"),
        factors: dir.join("factors.csv"),
    };
    panel.write_prices_csv(&paths.prices)?;
    panel.write_sentiment_csv(&paths.sentiment)?;
    write_factors_csv(&synthetic_factors(panel.calendar(), config.seed.wrapping_add(1)), &paths.factors)?;
    Ok(paths)
}
