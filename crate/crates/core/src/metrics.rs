//! Annualised performance statistics over daily return series.
//!
//! All annualisation uses 252 trading days. Volatilities are sample
//! standard deviations; the downside deviation is the root mean square of
//! the negative excess returns.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// A ratio that may be unbounded or undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    /// No downside observations with a positive mean.
    Infinite,
    /// Zero dispersion, the ratio has no meaning.
    Undefined,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(*v),
            _ => None,
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Value(v) => s.serialize_f64(*v),
            Ratio::Infinite => s.serialize_str("+inf"),
            Ratio::Undefined => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: Ratio,
    pub sortino: Ratio,
    pub max_drawdown: f64,
    pub ann_turnover: f64,
    pub n_obs: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn is_degenerate(std: f64, mean: f64) -> bool {
    std == 0.0 || std <= 1e-12 * mean.abs()
}

/// Root mean square of the negative entries, `None` when there are none.
pub fn downside_deviation(excess: &[f64]) -> Option<f64> {
    let neg: Vec<f64> = excess.iter().copied().filter(|r| *r < 0.0).collect();
    if neg.is_empty() {
        return None;
    }
    Some((neg.iter().map(|r| r * r).sum::<f64>() / neg.len() as f64).sqrt())
}

/// Annualised Sharpe ratio of excess returns.
pub fn sharpe_ratio(excess: &[f64]) -> Result<f64> {
    let m = mean(excess);
    let s = sample_std(excess);
    if is_degenerate(s, m) {
        return Err(Error::UndefinedRatio("zero volatility".into()));
    }
    Ok(m / s * TRADING_DAYS.sqrt())
}

/// Annualised Sortino ratio of excess returns.
pub fn sortino_ratio(excess: &[f64]) -> Ratio {
    let m = mean(excess);
    match downside_deviation(excess) {
        Some(dd) if dd > 0.0 => Ratio::Value(m / dd * TRADING_DAYS.sqrt()),
        _ if m > 0.0 => Ratio::Infinite,
        _ => Ratio::Undefined,
    }
}

/// Per-day drawdown from the running peak.
pub fn drawdown_series(nav: &[f64]) -> Result<Vec<f64>> {
    let mut peak = f64::MIN;
    nav.iter()
        .map(|&v| {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("nav must be positive, got {v}")));
            }
            peak = peak.max(v);
            Ok(v / peak - 1.0)
        })
        .collect()
}

/// Most negative drawdown of a NAV path (0 for a path that never declines).
pub fn max_drawdown(nav: &[f64]) -> Result<f64> {
    Ok(drawdown_series(nav)?.into_iter().fold(0.0, f64::min))
}

/// NAV path starting at 1 and compounding `returns`.
pub fn nav_from_returns(returns: &[f64]) -> Vec<f64> {
    let mut nav = Vec::with_capacity(returns.len() + 1);
    let mut v = 1.0;
    nav.push(v);
    for r in returns {
        v *= 1.0 + r;
        nav.push(v);
    }
    nav
}

/// Full summary. `rf` is a per-day risk-free series aligned with
/// `daily_returns`, or zero when `None`.
pub fn summarize(daily_returns: &[f64], daily_turnover: &[f64], rf: Option<&[f64]>) -> Result<PerformanceSummary> {
    let n = daily_returns.len();
    if n < 2 {
        return Err(Error::InsufficientHistory { needed: 2, available: n });
    }
    if daily_returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Validation("daily returns must be finite".into()));
    }
    let excess: Vec<f64> = match rf {
        Some(rf) if rf.len() != n => {
            return Err(Error::Alignment(format!("{} returns vs {} risk-free rates", n, rf.len())))
        }
        Some(rf) => daily_returns.iter().zip(rf).map(|(r, f)| r - f).collect(),
        None => daily_returns.to_vec(),
    };

    let nav = nav_from_returns(daily_returns);
    let growth = *nav.last().unwrap();
    if growth <= 0.0 {
        return Err(Error::Domain(format!("cumulative growth {growth} is not positive")));
    }
    let ann_return = growth.powf(TRADING_DAYS / n as f64) - 1.0;
    let ann_vol = sample_std(daily_returns) * TRADING_DAYS.sqrt();
    let sharpe = match sharpe_ratio(&excess) {
        Ok(v) => Ratio::Value(v),
        Err(_) => Ratio::Undefined,
    };
    let ann_turnover = if daily_turnover.is_empty() {
        0.0
    } else {
        mean(daily_turnover) * TRADING_DAYS
    };
    Ok(PerformanceSummary {
        ann_return,
        ann_vol,
        sharpe,
        sortino: sortino_ratio(&excess),
        max_drawdown: max_drawdown(&nav)?,
        ann_turnover,
        n_obs: n,
    })
}
