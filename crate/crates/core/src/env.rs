//! Long-only portfolio environment for the RL allocator.
//!
//! Observation at day `t`: the z-normalised per-asset features flattened in
//! ticker-major order, followed by the current (return-drifted) portfolio
//! weights including a trailing cash slot. Actions are `n + 1` raw logits
//! mapped onto the simplex with a softmax, so the book is always long-only.
//!
//! One step rebalances at the close of `t` and earns `t -> t+1`:
//!
//! ```text
//! gross_t  = sum_i w_i r_i          (cash earns 0)
//! reward_t = gross_t - turnover_t * c_tcost - short_exposure_t * c_borrow
//! V_{t+1}  = V_t * (1 + reward_t)
//! ```
//!
//! `gross_value_after = V_t * (1 + gross_t)` is reported alongside so the
//! reward identity `reward = gross_value_after / V_t - 1 - costs` can be
//! checked from the step info alone.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{drift, short_exposure, turnover_against, BacktestReport, CostModel, CASH};
use crate::error::{Error, Result};
use crate::indicators::FeaturePanel;
use crate::market_data::{write_file, PanelStore};

/// Per-asset observation width.
pub const ASSET_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; ASSET_FEATURES] = [
    "lag_return",
    "rsi14",
    "macd_signal",
    "vwap_gap",
    "volume_pressure",
    "rv_ratio",
    "gk_vol",
    "sentiment",
];

/// Transaction cost of the RL book, in basis points.
pub const DEFAULT_TCOST_BPS: f64 = 10.0;

pub fn state_dim(n_stocks: usize) -> usize {
    n_stocks * ASSET_FEATURES + n_stocks + 1
}

pub fn action_dim(n_stocks: usize) -> usize {
    n_stocks + 1
}

/// Unnormalised features of one asset-day in [`FEATURE_NAMES`] order.
pub fn raw_asset_features(panel: &PanelStore, features: &FeaturePanel, ticker: usize, day: usize) -> Option<[f64; ASSET_FEATURES]> {
    let f = features.get(ticker, day)?;
    Some([
        f.lag_return,
        f.rsi14,
        f.macd_signal,
        f.vwap_gap,
        f.volume_pressure,
        f.rv_ratio,
        f.gk_vol,
        panel.sentiment(ticker, day).value(),
    ])
}

/// Per-feature z-normalisation frozen from a fitting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; ASSET_FEATURES],
    pub std: [f64; ASSET_FEATURES],
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler {
            mean: [0.0; ASSET_FEATURES],
            std: [1.0; ASSET_FEATURES],
        }
    }

    /// Pools every ticker over panel days `first..=last`. Features with zero
    /// dispersion keep a unit scale.
    pub fn fit(panel: &PanelStore, features: &FeaturePanel, first: usize, last: usize) -> Result<Self> {
        if first > last || first < features.first_day() || last > features.last_day() {
            return Err(Error::EpisodeBounds(format!(
                "scaler window {first}..={last} outside feature days {}..={}",
                features.first_day(),
                features.last_day()
            )));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); ASSET_FEATURES];
        for day in first..=last {
            for t in 0..panel.n_tickers() {
                let raw = raw_asset_features(panel, features, t, day).expect("window checked");
                for (c, v) in cols.iter_mut().zip(raw) {
                    c.push(v);
                }
            }
        }
        let mut mean = [0.0; ASSET_FEATURES];
        let mut std = [1.0; ASSET_FEATURES];
        for (j, c) in cols.iter().enumerate() {
            let (m, s) = crate::indicators::mean_std(c);
            mean[j] = m;
            if s > 0.0 && s.is_finite() {
                std[j] = s;
            }
        }
        Ok(FeatureScaler { mean, std })
    }

    pub fn apply(&self, raw: &[f64; ASSET_FEATURES]) -> [f64; ASSET_FEATURES] {
        let mut out = [0.0; ASSET_FEATURES];
        for j in 0..ASSET_FEATURES {
            out[j] = (raw[j] - self.mean[j]) / self.std[j];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub date: NaiveDate,
    /// `n_stocks * ASSET_FEATURES` normalised features, ticker-major.
    pub features: Vec<f64>,
    /// `n_stocks + 1` weights, cash last.
    pub weights: Vec<f64>,
}

impl EnvState {
    /// The flat observation vector fed to the networks.
    pub fn observation(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.features.len() + self.weights.len());
        v.extend_from_slice(&self.features);
        v.extend_from_slice(&self.weights);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Rebalance date.
    pub date: NaiveDate,
    pub target_weights: Vec<f64>,
    pub gross_return: f64,
    pub turnover: f64,
    pub short_exposure: f64,
    /// Cost in currency units.
    pub cost: f64,
    pub value_before: f64,
    pub gross_value_after: f64,
    pub value_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Softmax with max subtraction.
pub fn project_action(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Action("empty logit vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Action(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub struct PortfolioEnv<'a> {
    panel: &'a PanelStore,
    features: &'a FeaturePanel,
    scaler: FeatureScaler,
    cost: CostModel,
    end_day: usize,
    cursor: usize,
    weights: Vec<f64>,
    value: f64,
    active: bool,
}

impl<'a> PortfolioEnv<'a> {
    pub fn new(panel: &'a PanelStore, features: &'a FeaturePanel, scaler: FeatureScaler, cost: CostModel) -> Result<Self> {
        cost.validate()?;
        if features.tickers() != panel.tickers() {
            return Err(Error::Alignment("feature panel and price panel tickers differ".into()));
        }
        Ok(PortfolioEnv {
            panel,
            features,
            scaler,
            cost,
            end_day: 0,
            cursor: 0,
            weights: Vec::new(),
            value: 0.0,
            active: false,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.panel.n_tickers()
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.n_stocks())
    }

    pub fn action_dim(&self) -> usize {
        action_dim(self.n_stocks())
    }

    pub fn panel(&self) -> &PanelStore {
        self.panel
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    /// Current panel day.
    pub fn day(&self) -> usize {
        self.cursor
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Starts an all-cash episode that rebalances on days `start..end` and
    /// finishes on `end`.
    pub fn reset(&mut self, start_day: usize, end_day: usize, initial_value: f64) -> Result<EnvState> {
        if start_day < self.features.first_day() {
            return Err(Error::InsufficientHistory {
                needed: self.features.first_day() + 1,
                available: start_day + 1,
            });
        }
        if end_day <= start_day || end_day > self.features.last_day() {
            return Err(Error::EpisodeBounds(format!(
                "episode {start_day}..={end_day} outside feature days {}..={}",
                self.features.first_day(),
                self.features.last_day()
            )));
        }
        if !(initial_value > 0.0 && initial_value.is_finite()) {
            return Err(Error::Validation(format!("initial value {initial_value} must be positive")));
        }
        let n = self.n_stocks();
        self.weights = vec![0.0; n + 1];
        self.weights[n] = 1.0;
        self.value = initial_value;
        self.cursor = start_day;
        self.end_day = end_day;
        self.active = true;
        self.state_at(start_day, self.weights.clone())
    }

    /// Observation for `day` with the given holdings.
    pub fn state_at(&self, day: usize, weights: Vec<f64>) -> Result<EnvState> {
        let mut feats = Vec::with_capacity(self.n_stocks() * ASSET_FEATURES);
        for t in 0..self.n_stocks() {
            let raw = raw_asset_features(self.panel, self.features, t, day)
                .ok_or_else(|| Error::EpisodeBounds(format!("no features on day {day}")))?;
            feats.extend_from_slice(&self.scaler.apply(&raw));
        }
        Ok(EnvState {
            date: self.panel.calendar()[day],
            features: feats,
            weights,
        })
    }

    pub fn step(&mut self, logits: &[f64]) -> Result<StepResult> {
        if !self.active || self.cursor >= self.end_day {
            return Err(Error::EpisodeBounds(format!(
                "step on day {} past episode end {}",
                self.cursor, self.end_day
            )));
        }
        if logits.len() != self.action_dim() {
            return Err(Error::Shape(format!("{} logits for {} slots", logits.len(), self.action_dim())));
        }
        let day = self.cursor;
        let target = project_action(logits)?;
        let tau = turnover_against(&self.weights, &target);
        let short = short_exposure(&target);
        debug_assert!(short == 0.0, "softmax weights cannot be short");

        let mut r = self.panel.forward_returns(day)?;
        r.push(0.0);
        let gross: f64 = target.iter().zip(&r).map(|(w, x)| w * x).sum();
        let cost_frac = self.cost.charge(tau, short);
        let reward = gross - cost_frac;

        let value_before = self.value;
        let value_after = value_before * (1.0 + reward);
        if !(value_after > 0.0 && value_after.is_finite()) {
            return Err(Error::PortfolioConstruction(format!("portfolio value {value_after} on {}", self.panel.calendar()[day])));
        }
        self.weights = drift(&target, &r)?;
        self.value = value_after;
        self.cursor += 1;
        let done = self.cursor == self.end_day;
        if done {
            self.active = false;
        }

        Ok(StepResult {
            next_state: self.state_at(self.cursor, self.weights.clone())?,
            reward,
            done,
            info: StepInfo {
                date: self.panel.calendar()[day],
                target_weights: target,
                gross_return: gross,
                turnover: tau,
                short_exposure: short,
                cost: value_before * cost_frac,
                value_before,
                gross_value_after: value_before * (1.0 + gross),
                value_after,
            },
        })
    }
}

/// Assembles an episode's step infos into the shared report layout.
pub fn episode_report(strategy: &str, tickers: &[String], end_date: NaiveDate, steps: &[StepInfo]) -> Result<BacktestReport> {
    let first = steps
        .first()
        .ok_or(Error::InsufficientHistory { needed: 1, available: 0 })?;
    let mut columns = tickers.to_vec();
    columns.push(CASH.to_string());
    let mut dates: Vec<NaiveDate> = steps.iter().map(|s| s.date).collect();
    dates.push(end_date);
    let mut nav = vec![first.value_before];
    nav.extend(steps.iter().map(|s| s.value_after));
    Ok(BacktestReport {
        strategy: strategy.to_string(),
        columns,
        dates,
        nav,
        weights: steps.iter().map(|s| s.target_weights.clone()).collect(),
        daily_return: steps.iter().map(|s| s.value_after / s.value_before - 1.0).collect(),
        turnover: steps.iter().map(|s| s.turnover).collect(),
        costs_paid: steps.iter().map(|s| s.cost).collect(),
    })
}

/// `date,V,reward,turnover,cost,weight_<ticker>...,weight_cash`.
pub fn write_trajectory_csv(steps: &[StepInfo], tickers: &[String], path: &Path) -> Result<()> {
    let mut out = String::from("date,V,reward,turnover,cost");
    for t in tickers {
        let _ = write!(out, ",weight_{t}");
    }
    out.push_str(",weight_cash\n");
    for s in steps {
        let reward = s.value_after / s.value_before - 1.0;
        let _ = write!(out, "{},{},{},{},{}", s.date, s.value_before, reward, s.turnover, s.cost);
        for w in &s.target_weights {
            let _ = write!(out, ",{w}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::build_features;
    use crate::synth::{synthetic_panel, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn fixture() -> (PanelStore, FeaturePanel) {
        let panel = synthetic_panel(&SynthConfig {
            n_tickers: 4,
            n_days: 80,
            ..SynthConfig::default()
        })
        .unwrap();
        let features = build_features(&panel).unwrap();
        (panel, features)
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(project_action(&[0.0; 5]).unwrap(), vec![0.2; 5]);
        let w = project_action(&[2f64.ln(), 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        let a = project_action(&[0.3, -1.2, 2.0]).unwrap();
        let b = project_action(&[100.3, 98.8, 102.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert!(matches!(project_action(&[0.0, f64::NAN]), Err(Error::Action(_))));
        let big = project_action(&[1e4, -1e4, 0.0]).unwrap();
        assert_abs_diff_eq!(big.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reset_shape_and_determinism() {
        let (panel, features) = fixture();
        let mut env = PortfolioEnv::new(&panel, &features, FeatureScaler::identity(), CostModel::default()).unwrap();
        let s = env.reset(40, 60, 1e6).unwrap();
        assert_eq!(s.weights, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.observation().len(), state_dim(4));
        assert_eq!(state_dim(4), 4 * ASSET_FEATURES + 4 + 1);
        assert_eq!(s, env.reset(40, 60, 1e6).unwrap());
        assert!(matches!(env.reset(10, 60, 1e6), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn all_cash_is_neutral() {
        let (panel, features) = fixture();
        let cost = CostModel::new(DEFAULT_TCOST_BPS, 0.0).unwrap();
        let mut env = PortfolioEnv::new(&panel, &features, FeatureScaler::identity(), cost).unwrap();
        env.reset(40, 50, 1e6).unwrap();
        let cash = [-50.0, -50.0, -50.0, -50.0, 50.0];
        let first = env.step(&cash).unwrap();
        // A tiny residual allocation is bought on the first day only.
        assert_abs_diff_eq!(first.reward, -first.info.turnover * 1e-3, epsilon = 1e-15);
        let second = env.step(&cash).unwrap();
        assert!(second.reward.abs() < 1e-12);
    }

    #[test]
    fn uniform_book_on_rising_market() {
        use crate::market_data::Bar;
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let days: Vec<NaiveDate> = (0..50).map(|i| d0 + chrono::Days::new(i)).collect();
        let bars: Vec<Vec<Bar>> = (0..3)
            .map(|_| {
                days.iter()
                    .enumerate()
                    .map(|(k, d)| {
                        let c = 100.0 * 1.01f64.powi(k as i32);
                        Bar { date: *d, open: c, high: c, low: c, close: c, volume: 1e3, vwap: c }
                    })
                    .collect()
            })
            .collect();
        let panel = PanelStore::new(vec!["A".into(), "B".into(), "C".into()], days, bars).unwrap();
        let features = build_features(&panel).unwrap();
        let mut env = PortfolioEnv::new(&panel, &features, FeatureScaler::identity(), CostModel::default()).unwrap();
        env.reset(40, 45, 1.0).unwrap();
        let step = env.step(&[0.0; 4]).unwrap();
        // 3/4 invested, every stock +1%.
        assert_abs_diff_eq!(step.reward, 0.01 * (1.0 - 0.25), epsilon = 1e-12);
        let again = env.step(&[0.0; 4]).unwrap();
        // Drift moves weights off uniform, so a little trading remains.
        assert!(again.info.turnover > 0.0 && again.info.turnover < 0.01);
    }

    #[test]
    fn steps_past_end_fail() {
        let (panel, features) = fixture();
        let mut env = PortfolioEnv::new(&panel, &features, FeatureScaler::identity(), CostModel::default()).unwrap();
        env.reset(40, 42, 1.0).unwrap();
        assert!(!env.step(&[0.0; 5]).unwrap().done);
        assert!(env.step(&[0.0; 5]).unwrap().done);
        assert!(matches!(env.step(&[0.0; 5]), Err(Error::EpisodeBounds(_))));
    }

    #[test]
    fn flat_prices_second_step_has_no_turnover() {
        use crate::market_data::Bar;
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let days: Vec<NaiveDate> = (0..40).map(|i| d0 + chrono::Days::new(i)).collect();
        let bars: Vec<Vec<Bar>> = (0..2)
            .map(|_| days.iter().map(|d| Bar { date: *d, open: 5.0, high: 5.0, low: 5.0, close: 5.0, volume: 1.0, vwap: 5.0 }).collect())
            .collect();
        let panel = PanelStore::new(vec!["A".into(), "B".into()], days, bars).unwrap();
        let features = build_features(&panel).unwrap();
        let mut env = PortfolioEnv::new(&panel, &features, FeatureScaler::identity(), CostModel::new(10.0, 0.0).unwrap()).unwrap();
        env.reset(34, 39, 1.0).unwrap();
        let logits = [0.4, -0.2, 0.1];
        assert!(env.step(&logits).unwrap().info.turnover > 0.0);
        assert_eq!(env.step(&logits).unwrap().info.turnover, 0.0);
    }
}
