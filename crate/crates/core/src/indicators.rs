//! Per-asset technical indicators and the aligned feature grid.
//!
//! Every indicator at day `t` depends only on bars up to and including `t`;
//! `lag_return` uses bars up to `t - 1`. Entries inside an indicator's warm-up
//! are `None` rather than imputed.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{Bar, PanelStore};

pub const RSI_PERIOD: usize = 14;
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const MACD_SIGNAL: usize = 9;
pub const VOLUME_WINDOW: usize = 20;
pub const RV_WINDOW: usize = 5;
pub const RV_MEAN_WINDOW: usize = 20;
pub const GK_WINDOW: usize = 20;

/// Days of history needed before every feature is defined (MACD 26 + 9).
pub const MIN_HISTORY: usize = MACD_SLOW + MACD_SIGNAL;
/// Leading calendar days excluded from the feature grid.
pub const WARMUP: usize = MIN_HISTORY - 1;

/// RSI value used when a window has neither gains nor losses.
pub const FLAT_RSI: f64 = 50.0;

fn require(needed: usize, available: usize) -> Result<()> {
    if available < needed {
        Err(Error::InsufficientHistory { needed, available })
    } else {
        Ok(())
    }
}

/// Wilder-smoothed RSI over `period` price changes.
pub fn rsi(closes: &[f64], period: usize) -> Result<Vec<Option<f64>>> {
    if period == 0 {
        return Err(Error::Domain("RSI period must be positive".into()));
    }
    require(period + 1, closes.len())?;
    let mut out = vec![None; closes.len()];
    let change = |k: usize| closes[k] - closes[k - 1];

    let p = period as f64;
    let (mut avg_gain, mut avg_loss) = (0.0, 0.0);
    for k in 1..=period {
        let d = change(k);
        avg_gain += d.max(0.0);
        avg_loss += (-d).max(0.0);
    }
    avg_gain /= p;
    avg_loss /= p;
    out[period] = Some(rsi_from_averages(avg_gain, avg_loss));

    for k in period + 1..closes.len() {
        let d = change(k);
        avg_gain = (avg_gain * (p - 1.0) + d.max(0.0)) / p;
        avg_loss = (avg_loss * (p - 1.0) + (-d).max(0.0)) / p;
        out[k] = Some(rsi_from_averages(avg_gain, avg_loss));
    }
    Ok(out)
}

fn rsi_from_averages(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            FLAT_RSI
        } else {
            100.0
        }
    } else {
        let rs = avg_gain / avg_loss;
        (100.0 - 100.0 / (1.0 + rs)).clamp(0.0, 100.0)
    }
}

pub fn rsi14(closes: &[f64]) -> Result<Vec<Option<f64>>> {
    rsi(closes, RSI_PERIOD)
}

/// Exponential moving average with `alpha = 2 / (span + 1)`, seeded with the
/// first input value.
pub fn ema(series: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut prev = match series.first() {
        Some(v) => *v,
        None => return out,
    };
    out.push(prev);
    for &x in &series[1..] {
        prev = alpha * x + (1.0 - alpha) * prev;
        out.push(prev);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    /// EMA12 - EMA26.
    pub line: Vec<f64>,
    /// EMA9 of the MACD line.
    pub signal: Vec<f64>,
}

/// 12-26-9 MACD. Both lines are returned for the whole series; values before
/// index [`WARMUP`] are still inside the combined EMA warm-up.
pub fn macd(closes: &[f64]) -> Result<Macd> {
    require(MIN_HISTORY, closes.len())?;
    let fast = ema(closes, MACD_FAST);
    let slow = ema(closes, MACD_SLOW);
    let line: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal = ema(&line, MACD_SIGNAL);
    Ok(Macd { line, signal })
}

/// Garman-Klass single-day variance estimate, clamped below at 0.
pub fn garman_klass(bar: &Bar) -> Result<f64> {
    if [bar.open, bar.high, bar.low, bar.close]
        .iter()
        .any(|p| !(p.is_finite() && *p > 0.0))
    {
        return Err(Error::Domain(format!(
            "Garman-Klass needs positive prices, got O={} H={} L={} C={}",
            bar.open, bar.high, bar.low, bar.close
        )));
    }
    let hl = (bar.high / bar.low).ln();
    let co = (bar.close / bar.open).ln();
    let v = 0.5 * hl * hl - (2.0 * std::f64::consts::LN_2 - 1.0) * co * co;
    Ok(v.max(0.0))
}

/// Square root of the trailing `window`-day mean Garman-Klass variance.
pub fn garman_klass_vol(bars: &[Bar], window: usize) -> Result<Vec<Option<f64>>> {
    let daily = bars.iter().map(garman_klass).collect::<Result<Vec<_>>>()?;
    let stats = rolling_stats(&daily, window)?;
    Ok(stats.mean.into_iter().map(|m| m.map(f64::sqrt)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingStats {
    pub mean: Vec<Option<f64>>,
    /// Population standard deviation.
    pub std: Vec<Option<f64>>,
}

/// Trailing-window mean and population standard deviation.
pub fn rolling_stats(series: &[f64], window: usize) -> Result<RollingStats> {
    if window < 2 {
        return Err(Error::Domain(format!("rolling window must be >= 2, got {window}")));
    }
    require(window, series.len())?;
    let mut mean = vec![None; series.len()];
    let mut std = vec![None; series.len()];
    for end in window - 1..series.len() {
        let w = &series[end + 1 - window..=end];
        let (m, s) = mean_std(w);
        mean[end] = Some(m);
        std[end] = Some(s);
    }
    Ok(RollingStats { mean, std })
}

/// Mean and population standard deviation of a non-empty slice.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn rolling_mean_opt(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; series.len()];
    for end in window.saturating_sub(1)..series.len() {
        let w = &series[end + 1 - window..=end];
        if let Some(vals) = w.iter().copied().collect::<Option<Vec<f64>>>() {
            out[end] = Some(vals.iter().sum::<f64>() / window as f64);
        }
    }
    out
}

/// Close-to-close log returns; entry `t` is `ln(C_t / C_{t-1})`, `None` at 0.
pub fn log_returns(closes: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    for t in 1..closes.len() {
        out[t] = Some((closes[t] / closes[t - 1]).ln());
    }
    out
}

/// Trailing population std of the last `window` log returns.
pub fn realized_vol(closes: &[f64], window: usize) -> Vec<Option<f64>> {
    let rets = log_returns(closes);
    let mut out = vec![None; closes.len()];
    for end in window..closes.len() {
        let w: Vec<f64> = rets[end + 1 - window..=end].iter().map(|r| r.unwrap()).collect();
        out[end] = Some(mean_std(&w).1);
    }
    out
}

/// Ratio with a neutral value of 1 when the denominator is zero.
fn neutral_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Per-asset characteristics for one trading day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// `ln(C_{t-1} / C_{t-2})`.
    pub lag_return: f64,
    pub rsi14: f64,
    pub macd_line: f64,
    pub macd_signal: f64,
    /// `VWAP_t / Close_t - 1`.
    pub vwap_gap: f64,
    /// `Volume_t / mean(Volume, 20)`.
    pub volume_pressure: f64,
    /// `RV5_t / mean(RV5, 20)`.
    pub rv_ratio: f64,
    pub gk_vol: f64,
}

impl FeatureVector {
    pub fn is_finite(&self) -> bool {
        [
            self.lag_return,
            self.rsi14,
            self.macd_line,
            self.macd_signal,
            self.vwap_gap,
            self.volume_pressure,
            self.rv_ratio,
            self.gk_vol,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Dense (ticker x day) feature grid starting at panel day [`WARMUP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    first_day: usize,
    rows: Vec<Vec<FeatureVector>>,
}

impl FeaturePanel {
    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// Calendar dates covered by the grid.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Panel day index of the first grid row.
    pub fn first_day(&self) -> usize {
        self.first_day
    }

    /// Panel day index of the last grid row.
    pub fn last_day(&self) -> usize {
        self.first_day + self.dates.len() - 1
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Features at a panel day index, `None` inside the warm-up or past the end.
    pub fn get(&self, ticker: usize, day: usize) -> Option<&FeatureVector> {
        day.checked_sub(self.first_day)
            .and_then(|k| self.rows.get(ticker)?.get(k))
    }

    pub fn row(&self, ticker: usize) -> &[FeatureVector] {
        &self.rows[ticker]
    }
}

/// Computes the feature grid for every ticker of a panel.
pub fn build_features(panel: &PanelStore) -> Result<FeaturePanel> {
    require(MIN_HISTORY, panel.n_days())?;
    let n = panel.n_days();
    let mut rows = Vec::with_capacity(panel.n_tickers());
    for t in 0..panel.n_tickers() {
        let bars = panel.bars(t);
        let closes = panel.closes(t);
        let volumes = panel.volumes(t);

        let rsi = rsi14(&closes)?;
        let macd = macd(&closes)?;
        let vol_mean = rolling_stats(&volumes, VOLUME_WINDOW)?.mean;
        let rv = realized_vol(&closes, RV_WINDOW);
        let rv_mean = rolling_mean_opt(&rv, RV_MEAN_WINDOW);
        let gk = garman_klass_vol(bars, GK_WINDOW)?;
        let rets = log_returns(&closes);

        let mut row = Vec::with_capacity(n - WARMUP);
        for d in WARMUP..n {
            let missing = || Error::InsufficientHistory {
                needed: MIN_HISTORY,
                available: d + 1,
            };
            let fv = FeatureVector {
                lag_return: rets[d - 1].ok_or_else(missing)?,
                rsi14: rsi[d].ok_or_else(missing)?,
                macd_line: macd.line[d],
                macd_signal: macd.signal[d],
                vwap_gap: bars[d].vwap / bars[d].close - 1.0,
                volume_pressure: neutral_ratio(volumes[d], vol_mean[d].ok_or_else(missing)?),
                rv_ratio: neutral_ratio(rv[d].ok_or_else(missing)?, rv_mean[d].ok_or_else(missing)?),
                gk_vol: gk[d].ok_or_else(missing)?,
            };
            row.push(fv);
        }
        rows.push(row);
    }
    Ok(FeaturePanel {
        tickers: panel.tickers().to_vec(),
        dates: panel.calendar()[WARMUP..].to_vec(),
        first_day: WARMUP,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bar(o: f64, h: f64, l: f64, c: f64) -> Bar {
        Bar {
            date: NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
            open: o,
            high: h,
            low: l,
            close: c,
            volume: 1.0,
            vwap: c,
        }
    }

    #[test]
    fn rsi_monotone_series() {
        let up: Vec<f64> = (0..30).map(|i| 100.0 + i as f64).collect();
        let down: Vec<f64> = (0..30).map(|i| 100.0 - i as f64).collect();
        let r_up = rsi14(&up).unwrap();
        let r_down = rsi14(&down).unwrap();
        assert!(r_up[..14].iter().all(Option::is_none));
        assert!(r_up[14..].iter().all(|v| *v == Some(100.0)));
        assert!(r_down[14..].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn rsi_flat_is_fifty_and_short_is_error() {
        let flat = vec![10.0; 20];
        assert!(rsi14(&flat).unwrap()[14..].iter().all(|v| *v == Some(FLAT_RSI)));
        assert!(matches!(
            rsi14(&[1.0; 14]),
            Err(Error::InsufficientHistory { needed: 15, available: 14 })
        ));
    }

    #[test]
    fn macd_constant_and_homogeneous() {
        let flat = vec![42.0; 40];
        let m = macd(&flat).unwrap();
        assert!(m.line.iter().chain(&m.signal).all(|v| *v == 0.0));

        let series: Vec<f64> = (0..40).map(|i| 50.0 + (i as f64 * 0.7).sin() * 3.0).collect();
        let doubled: Vec<f64> = series.iter().map(|x| 2.0 * x).collect();
        let a = macd(&series).unwrap();
        let b = macd(&doubled).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(b.line[i], 2.0 * a.line[i], epsilon = 1e-12);
            assert_abs_diff_eq!(b.signal[i], 2.0 * a.signal[i], epsilon = 1e-12);
        }
        assert!(macd(&series[..34]).is_err());
    }

    #[test]
    fn garman_klass_cases() {
        assert_eq!(garman_klass(&bar(5.0, 5.0, 5.0, 5.0)).unwrap(), 0.0);
        // 0.5 ln(102/99)^2 - (2 ln 2 - 1) ln(101/100)^2, evaluated by hand.
        let expected = 0.000_407_353_053_525_459_94;
        assert_abs_diff_eq!(garman_klass(&bar(100.0, 102.0, 99.0, 101.0)).unwrap(), expected, epsilon = 1e-12);
        assert!(matches!(garman_klass(&bar(0.0, 1.0, 0.0, 1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn rolling_stats_cases() {
        let s = rolling_stats(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(s.mean, vec![None, None, Some(2.0)]);
        assert_abs_diff_eq!(s.std[2].unwrap(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);

        let c = rolling_stats(&[7.0; 6], 4).unwrap();
        assert!(c.mean[3..].iter().all(|m| *m == Some(7.0)));
        assert!(c.std[3..].iter().all(|m| *m == Some(0.0)));

        assert!(matches!(rolling_stats(&[1.0, 2.0], 1), Err(Error::Domain(_))));
        assert!(matches!(rolling_stats(&[1.0, 2.0], 3), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn rolling_stats_shift_equivariant() {
        let xs: Vec<f64> = (0..30).map(|i| ((i * 7919) % 13) as f64).collect();
        let a = rolling_stats(&xs, 5).unwrap();
        let b = rolling_stats(&xs[1..], 5).unwrap();
        for i in 4..b.mean.len() {
            assert_eq!(b.mean[i], a.mean[i + 1]);
            assert_eq!(b.std[i], a.std[i + 1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn garman_klass_nonnegative_and_scale_invariant(
            open in 1.0f64..500.0,
            close_frac in -0.1f64..0.1,
            up in 0.0f64..0.05,
            down in 0.0f64..0.05,
            k in 0.01f64..100.0,
        ) {
            let close = open * (1.0 + close_frac);
            let high = open.max(close) * (1.0 + up);
            let low = open.min(close) * (1.0 - down);
            let b = bar(open, high, low, close);
            let v = garman_klass(&b).unwrap();
            prop_assert!(v >= 0.0);
            let scaled = garman_klass(&bar(open * k, high * k, low * k, close * k)).unwrap();
            prop_assert!((scaled - v).abs() <= 1e-12 + 1e-9 * v.abs());
        }
    }

    proptest! {
        #[test]
        fn rsi_bounded(steps in proptest::collection::vec(-5.0f64..5.0, 15..80)) {
            let mut p = 100.0;
            let closes: Vec<f64> = steps.iter().map(|s| { p = (p + s).max(1.0); p }).collect();
            for v in rsi14(&closes).unwrap().into_iter().flatten() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }
    }
}
