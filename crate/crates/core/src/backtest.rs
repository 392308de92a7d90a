//! Daily close-to-close backtests of the quintile strategies.
//!
//! Timing: the signal for day `t` is known by the close of `t`, the book is
//! rebalanced at that close and earns the `t -> t+1` close-to-close return.
//! For a rebalance at day `t`:
//!
//! ```text
//! turnover_t = sum_i |w_t,i - drift(w_{t-1})_i|
//! cost_t     = tcost * turnover_t + borrow * sum_i max(-w_t,i, 0)
//! nav_{t+1}  = nav_t * (1 + sum_i w_t,i r_i,t+1 - cost_t)
//! ```
//!
//! Long-short books hold `+1/k` on each of the `k` top-bucket names and
//! `-1/m` on each of the `m` bottom-bucket names, so the reported return is
//! on one unit of gross capital per leg. Long-only books carry an explicit
//! cash column that is part of the turnover sum.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{write_file, PanelStore};
use crate::signal::SignalFrame;

pub const BPS: f64 = 1e-4;
pub const CASH: &str = "cash";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostModel {
    /// Proportional cost per unit of traded notional, in basis points.
    pub tcost_bps: f64,
    /// Daily cost on gross short notional, in basis points.
    pub borrow_bps: f64,
}

impl CostModel {
    pub fn new(tcost_bps: f64, borrow_bps: f64) -> Result<Self> {
        let c = CostModel { tcost_bps, borrow_bps };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tcost_bps >= 0.0 && self.borrow_bps >= 0.0) || !self.tcost_bps.is_finite() || !self.borrow_bps.is_finite() {
            return Err(Error::Validation(format!(
                "costs must be finite and >= 0, got tcost={} borrow={}",
                self.tcost_bps, self.borrow_bps
            )));
        }
        Ok(())
    }

    pub fn tcost(&self) -> f64 {
        self.tcost_bps * BPS
    }

    pub fn borrow(&self) -> f64 {
        self.borrow_bps * BPS
    }

    /// Fraction of NAV paid for a rebalance.
    pub fn charge(&self, turnover: f64, short_exposure: f64) -> f64 {
        self.tcost() * turnover + self.borrow() * short_exposure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Book {
    LongShort,
    LongOnly,
}

/// Ledgers for one strategy run.
///
/// `nav` and `dates` have one entry per day. `weights`, `turnover` and
/// `costs_paid` have one entry per rebalance, on `dates[..n-1]`.
/// `daily_return[k]` is the net return earned from `dates[k]` to `dates[k+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub columns: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub nav: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub daily_return: Vec<f64>,
    pub turnover: Vec<f64>,
    /// Costs in NAV units.
    pub costs_paid: Vec<f64>,
}

impl BacktestReport {
    /// Dates on which each `daily_return` is realised.
    pub fn return_dates(&self) -> &[NaiveDate] {
        &self.dates[1..]
    }

    /// Writes `nav.csv`, `weights.csv` and `costs.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        let mut nav = String::from("date,nav,daily_return\n");
        for (k, (d, v)) in self.dates.iter().zip(&self.nav).enumerate() {
            match k.checked_sub(1).map(|j| self.daily_return[j]) {
                Some(r) => nav.push_str(&format!("{d},{v},{r}\n")),
                None => nav.push_str(&format!("{d},{v},\n")),
            }
        }
        write_file(&dir.join("nav.csv"), &nav)?;

        let mut weights = format!("date,{}\n", self.columns.join(","));
        for (d, w) in self.dates.iter().zip(&self.weights) {
            let row: Vec<String> = w.iter().map(|x| x.to_string()).collect();
            weights.push_str(&format!("{d},{}\n", row.join(",")));
        }
        write_file(&dir.join("weights.csv"), &weights)?;

        let mut costs = String::from("date,turnover,cost\n");
        for ((d, t), c) in self.dates.iter().zip(&self.turnover).zip(&self.costs_paid) {
            costs.push_str(&format!("{d},{t},{c}\n"));
        }
        write_file(&dir.join("costs.csv"), &costs)
    }
}

/// Reads `(date, daily_return)` pairs back from a `nav.csv`.
pub fn read_returns_csv(path: &Path) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "date,nav,daily_return")) => {}
        _ => return Err(parse_err(1, "expected header `date,nav,daily_return`".into())),
    }
    let (mut dates, mut rets) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        if fields[2].is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|e| parse_err(i + 1, e.to_string()))?;
        let r: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad return `{}`", fields[2])))?;
        dates.push(date);
        rets.push(r);
    }
    Ok((dates, rets))
}

/// Weights after one period of returns: `w_i (1 + r_i) / (1 + sum_j w_j r_j)`.
pub fn drift(weights: &[f64], returns: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != returns.len() {
        return Err(Error::Shape(format!("{} weights vs {} returns", weights.len(), returns.len())));
    }
    let growth = 1.0 + weights.iter().zip(returns).map(|(w, r)| w * r).sum::<f64>();
    if growth <= 0.0 || !growth.is_finite() {
        return Err(Error::PortfolioConstruction(format!("portfolio value factor {growth} is not positive")));
    }
    Ok(weights.iter().zip(returns).map(|(w, r)| w * (1.0 + r) / growth).collect())
}

/// One-sided turnover `sum |new - drifted|` of a rebalance.
pub fn turnover_against(drifted: &[f64], new_weights: &[f64]) -> f64 {
    drifted.iter().zip(new_weights).map(|(a, b)| (b - a).abs()).sum()
}

/// Turnover of moving from `prev_weights` (held over a period with
/// `realized_returns`) to `new_weights`.
pub fn turnover(prev_weights: &[f64], new_weights: &[f64], realized_returns: &[f64]) -> Result<f64> {
    if prev_weights.len() != new_weights.len() {
        return Err(Error::Shape(format!(
            "{} previous weights vs {} new weights",
            prev_weights.len(),
            new_weights.len()
        )));
    }
    Ok(turnover_against(&drift(prev_weights, realized_returns)?, new_weights))
}

pub fn short_exposure(weights: &[f64]) -> f64 {
    weights.iter().map(|w| (-w).max(0.0)).sum()
}

/// Target weights for one frame. Long-only books get a trailing cash slot.
pub fn target_weights(frame: &SignalFrame, buckets: usize, book: Book) -> Result<Vec<f64>> {
    let top = buckets - 1;
    let n_top = frame.quintile.iter().filter(|&&q| q == top).count();
    let n_bottom = frame.quintile.iter().filter(|&&q| q == 0).count();
    if n_top == 0 || (book == Book::LongShort && n_bottom == 0) {
        return Err(Error::PortfolioConstruction(format!(
            "empty bucket on {}: {n_top} long, {n_bottom} short",
            frame.date
        )));
    }
    let mut w: Vec<f64> = frame
        .quintile
        .iter()
        .map(|&q| {
            if q == top {
                1.0 / n_top as f64
            } else if q == 0 && book == Book::LongShort {
                -1.0 / n_bottom as f64
            } else {
                0.0
            }
        })
        .collect();
    if book == Book::LongOnly {
        w.push(0.0);
    }
    Ok(w)
}

fn with_cash(mut returns: Vec<f64>, book: Book) -> Vec<f64> {
    if book == Book::LongOnly {
        returns.push(0.0);
    }
    returns
}

/// Runs a quintile book over consecutive signal frames.
pub fn run_quintile_book(
    panel: &PanelStore,
    signals: &[SignalFrame],
    buckets: usize,
    cost: &CostModel,
    book: Book,
    initial_value: f64,
) -> Result<BacktestReport> {
    cost.validate()?;
    if signals.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            available: signals.len(),
        });
    }
    if !(initial_value > 0.0 && initial_value.is_finite()) {
        return Err(Error::Validation(format!("initial value {initial_value} must be positive")));
    }
    if let Some(w) = signals.windows(2).find(|w| w[1].day != w[0].day + 1) {
        return Err(Error::Alignment(format!(
            "signal frames not consecutive: {} then {}",
            w[0].date, w[1].date
        )));
    }
    if signals.last().map(|f| f.day) >= Some(panel.n_days()) {
        return Err(Error::Alignment("signals extend past the panel".into()));
    }

    let mut columns = panel.tickers().to_vec();
    if book == Book::LongOnly {
        columns.push(CASH.to_string());
    }
    let width = columns.len();
    let mut report = BacktestReport {
        strategy: match book {
            Book::LongShort => "long_short".into(),
            Book::LongOnly => "long_only".into(),
        },
        columns,
        dates: signals.iter().map(|f| f.date).collect(),
        nav: vec![initial_value],
        weights: Vec::new(),
        daily_return: Vec::new(),
        turnover: Vec::new(),
        costs_paid: Vec::new(),
    };

    let mut held = vec![0.0; width];
    if book == Book::LongOnly {
        held[width - 1] = 1.0;
    }
    for frame in &signals[..signals.len() - 1] {
        let w = target_weights(frame, buckets, book)?;
        let tau = turnover_against(&held, &w);
        let cost_frac = cost.charge(tau, short_exposure(&w));
        let r = with_cash(panel.forward_returns(frame.day)?, book);
        let gross: f64 = w.iter().zip(&r).map(|(a, b)| a * b).sum();
        let net = gross - cost_frac;
        let nav = *report.nav.last().unwrap();
        report.nav.push(nav * (1.0 + net));
        report.costs_paid.push(nav * cost_frac);
        report.turnover.push(tau);
        report.daily_return.push(net);
        held = drift(&w, &r)?;
        report.weights.push(w);
    }
    Ok(report)
}

/// Long top bucket, short bottom bucket, on unit gross capital per leg.
pub fn run_long_short(panel: &PanelStore, signals: &[SignalFrame], buckets: usize, cost: &CostModel) -> Result<BacktestReport> {
    run_quintile_book(panel, signals, buckets, cost, Book::LongShort, 1.0)
}

/// Equal weight in the top bucket only, starting from `initial_capital` in cash.
pub fn run_long_only(
    panel: &PanelStore,
    signals: &[SignalFrame],
    buckets: usize,
    cost: &CostModel,
    initial_capital: f64,
) -> Result<BacktestReport> {
    run_quintile_book(panel, signals, buckets, cost, Book::LongOnly, initial_capital)
}

/// Equal-weight portfolio formed once at `start_day` and never rebalanced.
///
/// Formation is not counted as trading, so turnover and costs are zero.
pub fn buy_and_hold(panel: &PanelStore, start_day: usize, end_day: usize, initial_value: f64) -> Result<BacktestReport> {
    if end_day <= start_day || end_day >= panel.n_days() {
        return Err(Error::EpisodeBounds(format!(
            "buy-and-hold window {start_day}..={end_day} invalid for {} days",
            panel.n_days()
        )));
    }
    let n = panel.n_tickers();
    let mut columns = panel.tickers().to_vec();
    columns.push(CASH.to_string());
    let mut w = vec![1.0 / n as f64; n];
    w.push(0.0);
    let mut report = BacktestReport {
        strategy: "buy_and_hold".into(),
        columns,
        dates: panel.calendar()[start_day..=end_day].to_vec(),
        nav: vec![initial_value],
        weights: Vec::new(),
        daily_return: Vec::new(),
        turnover: Vec::new(),
        costs_paid: Vec::new(),
    };
    for day in start_day..end_day {
        let r = with_cash(panel.forward_returns(day)?, Book::LongOnly);
        let gross: f64 = w.iter().zip(&r).map(|(a, b)| a * b).sum();
        let nav = *report.nav.last().unwrap();
        report.nav.push(nav * (1.0 + gross));
        report.daily_return.push(gross);
        report.turnover.push(0.0);
        report.costs_paid.push(0.0);
        report.weights.push(w.clone());
        w = drift(&w, &r)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::Bar;
    use approx::assert_abs_diff_eq;

    fn day(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    fn panel_from_closes(closes: &[Vec<f64>]) -> PanelStore {
        let n_days = closes[0].len();
        let tickers: Vec<String> = (0..closes.len()).map(|i| format!("S{i}")).collect();
        let bars = closes
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(d, &c)| Bar {
                        date: day(d),
                        open: c,
                        high: c,
                        low: c,
                        close: c,
                        volume: 100.0,
                        vwap: c,
                    })
                    .collect()
            })
            .collect();
        PanelStore::new(tickers, (0..n_days).map(day).collect(), bars).unwrap()
    }

    fn frame(d: usize, quintile: Vec<usize>) -> SignalFrame {
        let n = quintile.len();
        SignalFrame {
            date: day(d),
            day: d,
            technical_raw: vec![0.0; n],
            sentiment_raw: vec![0.0; n],
            technical_z: vec![0.0; n],
            sentiment_z: vec![0.0; n],
            combined: vec![0.0; n],
            quintile,
        }
    }

    #[test]
    fn two_asset_long_short_hand_accounting() {
        // Asset 0 is top (+1%), asset 1 bottom (-1%): 1% - (-1%) = 2%.
        let panel = panel_from_closes(&[vec![100.0, 101.0], vec![100.0, 99.0]]);
        let frames = vec![frame(0, vec![1, 0]), frame(1, vec![1, 0])];
        let r = run_long_short(&panel, &frames, 2, &CostModel::default()).unwrap();
        assert_abs_diff_eq!(r.daily_return[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nav[1], 1.02, epsilon = 1e-15);
        assert_eq!(r.turnover, vec![2.0]);
        assert_eq!(r.weights[0], vec![1.0, -1.0]);
    }

    #[test]
    fn flat_prices_constant_signal_no_trade() {
        let panel = panel_from_closes(&vec![vec![10.0; 6]; 5]);
        let frames: Vec<_> = (0..6).map(|d| frame(d, vec![0, 1, 2, 3, 4])).collect();
        let r = run_long_short(&panel, &frames, 5, &CostModel::default()).unwrap();
        assert!(r.nav.iter().all(|&v| v == 1.0));
        assert_eq!(r.turnover[0], 2.0);
        assert!(r.turnover[1..].iter().all(|&t| t == 0.0));
    }

    #[test]
    fn cost_is_monotone() {
        let panel = panel_from_closes(&[
            vec![100.0, 101.0, 99.0, 102.0, 103.0],
            vec![50.0, 49.0, 51.0, 50.5, 50.0],
            vec![20.0, 20.5, 20.2, 20.1, 21.0],
        ]);
        let q = [vec![2, 1, 0], vec![0, 2, 1], vec![1, 0, 2], vec![2, 0, 1], vec![0, 1, 2]];
        let frames: Vec<_> = q.iter().enumerate().map(|(d, q)| frame(d, q.clone())).collect();
        let free = run_long_short(&panel, &frames, 3, &CostModel::default()).unwrap();
        let paid = run_long_short(&panel, &frames, 3, &CostModel::new(5.0, 0.0).unwrap()).unwrap();
        let borrow = run_long_short(&panel, &frames, 3, &CostModel::new(5.0, 2.0).unwrap()).unwrap();
        for k in 1..free.nav.len() {
            assert!(paid.nav[k] < free.nav[k]);
            assert!(borrow.nav[k] < paid.nav[k]);
        }
        assert_eq!(free.turnover, paid.turnover);
    }

    #[test]
    fn long_only_single_rebalance_ledger() {
        // Two names, top one gets 100% from cash; 5 bps on turnover 2.
        let panel = panel_from_closes(&[vec![100.0, 104.0, 104.0], vec![100.0, 90.0, 90.0]]);
        let frames = vec![frame(0, vec![1, 0]), frame(1, vec![1, 0]), frame(2, vec![1, 0])];
        let r = run_long_only(&panel, &frames, 2, &CostModel::new(5.0, 0.0).unwrap(), 1_000_000.0).unwrap();
        // day 0: turnover |1-0| + |0-1| = 2, cost 0.001, gross +4%.
        assert_abs_diff_eq!(r.costs_paid[0], 1_000.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.nav[1], 1_000_000.0 * (1.0 + 0.04 - 0.001), epsilon = 1e-6);
        assert_eq!(r.turnover, vec![2.0, 0.0]);
        assert_abs_diff_eq!(r.nav[2], r.nav[1], epsilon = 1e-10);
        assert_eq!(r.columns.last().unwrap(), CASH);
        for w in &r.weights {
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn long_only_flat_and_rising() {
        let flat = panel_from_closes(&vec![vec![10.0; 5]; 5]);
        let frames: Vec<_> = (0..5).map(|d| frame(d, vec![0, 1, 2, 3, 4])).collect();
        let r = run_long_only(&flat, &frames, 5, &CostModel::default(), 100.0).unwrap();
        assert!(r.nav.iter().all(|&v| v == 100.0));

        let rising: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|d| 10.0 * (1.01 + 0.001 * i as f64).powi(d)).collect()).collect();
        let up = panel_from_closes(&rising);
        let r = run_long_only(&up, &frames, 5, &CostModel::default(), 100.0).unwrap();
        assert!(r.nav.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn turnover_cases() {
        assert_eq!(turnover(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(turnover(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
        // Drift: 50/50 with +10% / -10% -> 0.55/0.45 over growth 1.0 -> back to 50/50 trades 0.1.
        let t = turnover(&[0.5, 0.5], &[0.5, 0.5], &[0.10, -0.10]).unwrap();
        assert_abs_diff_eq!(t, 0.1, epsilon = 1e-15);
        // With a positive total: 0.6*1.2=0.72, 0.4*1.0=0.4, growth 1.12.
        let d = drift(&[0.6, 0.4], &[0.2, 0.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.72 / 1.12, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.4 / 1.12, epsilon = 1e-15);
    }

    #[test]
    fn empty_bucket_errors() {
        let panel = panel_from_closes(&vec![vec![10.0; 3]; 3]);
        let frames = vec![frame(0, vec![1, 1, 1]), frame(1, vec![1, 1, 1])];
        assert!(matches!(
            run_long_short(&panel, &frames, 3, &CostModel::default()),
            Err(Error::PortfolioConstruction(_))
        ));
    }

    #[test]
    fn buy_and_hold_has_no_turnover() {
        let panel = panel_from_closes(&[vec![100.0, 110.0, 121.0], vec![100.0, 100.0, 100.0]]);
        let r = buy_and_hold(&panel, 0, 2, 1.0).unwrap();
        assert!(r.turnover.iter().all(|&t| t == 0.0));
        assert_abs_diff_eq!(r.nav[2], 0.5 * 1.21 + 0.5, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip_of_returns() {
        let panel = panel_from_closes(&[vec![100.0, 101.0, 103.0], vec![100.0, 99.0, 98.0]]);
        let frames: Vec<_> = (0..3).map(|d| frame(d, vec![1, 0])).collect();
        let r = run_long_short(&panel, &frames, 2, &CostModel::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_csvs(dir.path()).unwrap();
        let (dates, rets) = read_returns_csv(&dir.path().join("nav.csv")).unwrap();
        assert_eq!(dates, r.return_dates());
        assert_eq!(rets, r.daily_return);
    }
}
