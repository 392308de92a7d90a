//! Rule-based signal pipeline.
//!
//! For each trading day `t`:
//!
//! ```text
//! technical_t = Volume_{t-1} / MA20_{t-1} + MACD_{t-1}
//! sentiment_t = confidence_t * {+1 Positive, 0 Neutral, -1 Negative}
//! combined_t  = w * z(technical_t) + (1 - w) * z(sentiment_t),  w = 1 - sentiment_weight
//! ```
//!
//! z-scores are cross-sectional (population std, zero-variance maps to 0) and
//! the combined score is bucketed into quantiles with the top bucket at
//! `quintile_count - 1`.

use std::cmp::Ordering;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{mean_std, FeaturePanel};
use crate::market_data::{write_file, PanelStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerConfig {
    /// Weight on the sentiment z-score, `1 - w` in the combination.
    pub sentiment_weight: f64,
    pub quintile_count: usize,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        CombinerConfig {
            sentiment_weight: 0.5,
            quintile_count: 5,
        }
    }
}

impl CombinerConfig {
    pub fn new(sentiment_weight: f64) -> Result<Self> {
        let c = CombinerConfig {
            sentiment_weight,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sentiment_weight) {
            return Err(Error::Validation(format!(
                "sentiment_weight {} outside [0, 1]",
                self.sentiment_weight
            )));
        }
        if self.quintile_count < 2 {
            return Err(Error::Validation(format!(
                "quintile_count must be >= 2, got {}",
                self.quintile_count
            )));
        }
        Ok(())
    }
}

/// All signal columns for one trading day, indexed like the panel's tickers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFrame {
    pub date: NaiveDate,
    /// Panel day index.
    pub day: usize,
    pub technical_raw: Vec<f64>,
    pub sentiment_raw: Vec<f64>,
    pub technical_z: Vec<f64>,
    pub sentiment_z: Vec<f64>,
    pub combined: Vec<f64>,
    pub quintile: Vec<usize>,
}

/// First panel day with a full day of prior features.
pub fn first_signal_day(features: &FeaturePanel) -> usize {
    features.first_day() + 1
}

/// Technical signal at panel day `day`, built only from day `day - 1` features.
pub fn technical_signal(features: &FeaturePanel, day: usize) -> Result<Vec<f64>> {
    let first = first_signal_day(features);
    if day < first {
        return Err(Error::InsufficientHistory {
            needed: first + 1,
            available: day + 1,
        });
    }
    (0..features.tickers().len())
        .map(|t| {
            let f = features.get(t, day - 1).ok_or_else(|| {
                Error::EpisodeBounds(format!("no features for day {} (last is {})", day - 1, features.last_day()))
            })?;
            Ok(f.volume_pressure + f.macd_line)
        })
        .collect()
}

/// Sentiment signal at panel day `day`; missing records contribute 0.
pub fn sentiment_signal(panel: &PanelStore, day: usize) -> Vec<f64> {
    (0..panel.n_tickers())
        .map(|t| panel.sentiment(t, day).value())
        .collect()
}

/// Cross-sectional z-score with the population standard deviation.
pub fn cross_sectional_zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::DegenerateCrossSection(values.len()));
    }
    let (mean, std) = mean_std(values);
    if std == 0.0 || !std.is_finite() {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Convex combination `w * technical + (1 - w) * sentiment`.
///
/// The endpoints return the corresponding input unchanged.
pub fn combine(technical_z: &[f64], sentiment_z: &[f64], config: &CombinerConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if technical_z.len() != sentiment_z.len() {
        return Err(Error::Alignment(format!(
            "{} technical values vs {} sentiment values",
            technical_z.len(),
            sentiment_z.len()
        )));
    }
    let s = config.sentiment_weight;
    if s == 0.0 {
        return Ok(technical_z.to_vec());
    }
    if s == 1.0 {
        return Ok(sentiment_z.to_vec());
    }
    let w = 1.0 - s;
    Ok(technical_z
        .iter()
        .zip(sentiment_z)
        .map(|(t, z)| w * t + s * z)
        .collect())
}

/// Ranks ascending (ties by ticker name) and assigns bucket `floor(q * rank / n)`.
pub fn assign_quintiles(scores: &[f64], tickers: &[String], buckets: usize) -> Result<Vec<usize>> {
    if scores.len() != tickers.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} tickers",
            scores.len(),
            tickers.len()
        )));
    }
    if buckets < 2 || scores.len() < buckets {
        return Err(Error::TooFewAssets {
            assets: scores.len(),
            buckets,
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!("non-finite score for {}", tickers[i])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[a].total_cmp(&scores[b]) {
        Ordering::Equal => tickers[a].cmp(&tickers[b]),
        o => o,
    });
    let n = scores.len();
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = buckets * rank / n;
    }
    Ok(out)
}

/// Builds the full signal frame for one panel day.
pub fn signal_frame(
    panel: &PanelStore,
    features: &FeaturePanel,
    day: usize,
    config: &CombinerConfig,
) -> Result<SignalFrame> {
    let technical_raw = technical_signal(features, day)?;
    let sentiment_raw = sentiment_signal(panel, day);
    let technical_z = cross_sectional_zscore(&technical_raw)?;
    let sentiment_z = cross_sectional_zscore(&sentiment_raw)?;
    let combined = combine(&technical_z, &sentiment_z, config)?;
    let quintile = assign_quintiles(&combined, panel.tickers(), config.quintile_count)?;
    Ok(SignalFrame {
        date: panel.calendar()[day],
        day,
        technical_raw,
        sentiment_raw,
        technical_z,
        sentiment_z,
        combined,
        quintile,
    })
}

/// Signal frames for every day from [`first_signal_day`] to the panel end.
pub fn build_signals(panel: &PanelStore, features: &FeaturePanel, config: &CombinerConfig) -> Result<Vec<SignalFrame>> {
    if features.tickers() != panel.tickers() {
        return Err(Error::Alignment("feature panel and price panel tickers differ".into()));
    }
    (first_signal_day(features)..panel.n_days())
        .map(|day| signal_frame(panel, features, day, config))
        .collect()
}

/// Audit dump: `date,ticker,technical_z,sentiment_z,combined,quintile`.
pub fn write_signals_csv(frames: &[SignalFrame], tickers: &[String], path: &Path) -> Result<()> {
    let mut out = String::from("date,ticker,technical_z,sentiment_z,combined,quintile\n");
    for f in frames {
        for (i, t) in tickers.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.date, t, f.technical_z[i], f.sentiment_z[i], f.combined[i], f.quintile[i]
            ));
        }
    }
    write_file(path, &out)
}
