//! OLS factor decomposition of strategy returns.
//!
//! Coefficients come from a Householder QR of the design matrix; standard
//! errors are the classical homoskedastic ones and p-values are two-sided
//! under a Student-t with `n - k` degrees of freedom.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::backtest::BacktestReport;
use crate::error::{Error, Result};
use crate::market_data::{write_file, FactorRow};

pub const REGRESSORS: [&str; 7] = ["const", "mktrf", "smb", "hml", "rmw", "cma", "umd"];
pub const MIN_OVERLAP: usize = 30;

/// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
}

/// Significance marker at the 0.05 / 0.01 / 0.001 levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Ordinary least squares of `y` on the columns of `x`.
///
/// `x` must already contain the intercept column if one is wanted; R² is
/// computed against the mean of `y`.
pub fn ols(y: &[f64], x: &DMatrix<f64>, names: &[&str]) -> Result<RegressionResult> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} design rows", y.len())));
    }
    if names.len() != k {
        return Err(Error::Shape(format!("{} names for {k} columns", names.len())));
    }
    if n <= k {
        return Err(Error::InsufficientHistory {
            needed: k + 1,
            available: n,
        });
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("regression inputs must be finite".into()));
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..k {
        if r[(j, j)].abs() <= RANK_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularDesign {
                column: names[j].to_string(),
            });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            column: names[k - 1].to_string(),
        })?;

    let residuals = &yv - x * &beta;
    let ssr = residuals.norm_squared();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let r_squared = if sst == 0.0 { 0.0 } else { (1.0 - ssr / sst).clamp(0.0, 1.0) };

    let df = (n - k) as f64;
    let sigma2 = ssr / df;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign {
            column: names[k - 1].to_string(),
        })?;
    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;

    let mut std_errors = Vec::with_capacity(k);
    let mut t_stats = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for j in 0..k {
        let var = sigma2 * r_inv.row(j).iter().map(|v| v * v).sum::<f64>();
        let se = var.sqrt();
        let b = beta[j];
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        };
        let p = if t.is_infinite() {
            0.0
        } else {
            (2.0 * (1.0 - t_dist.cdf(t.abs()))).clamp(0.0, 1.0)
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(p);
    }

    Ok(RegressionResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats,
        p_values,
        r_squared,
        n_obs: n,
    })
}

/// Regresses `return - rf` on the intercept, five factors and momentum over
/// the dates present in both series.
pub fn decompose_returns(dates: &[NaiveDate], returns: &[f64], factors: &[FactorRow]) -> Result<RegressionResult> {
    if dates.len() != returns.len() {
        return Err(Error::Shape(format!("{} dates for {} returns", dates.len(), returns.len())));
    }
    let by_date: BTreeMap<NaiveDate, &FactorRow> = factors.iter().map(|f| (f.date, f)).collect();
    let joined: Vec<(f64, &FactorRow)> = dates
        .iter()
        .zip(returns)
        .filter_map(|(d, r)| by_date.get(d).map(|f| (*r, *f)))
        .collect();
    if joined.len() < MIN_OVERLAP {
        let range = |ds: &mut dyn Iterator<Item = NaiveDate>| {
            let v: Vec<NaiveDate> = ds.collect();
            match (v.first(), v.last()) {
                (Some(a), Some(b)) => format!("{a}..{b}"),
                _ => "empty".to_string(),
            }
        };
        return Err(Error::Alignment(format!(
            "{} overlapping days (need {MIN_OVERLAP}); strategy has {} days over {}, factors have {} days over {}",
            joined.len(),
            dates.len(),
            range(&mut dates.iter().copied()),
            factors.len(),
            range(&mut factors.iter().map(|f| f.date)),
        )));
    }
    let n = joined.len();
    let y: Vec<f64> = joined.iter().map(|(r, f)| r - f.rf).collect();
    let x = DMatrix::from_fn(n, REGRESSORS.len(), |i, j| if j == 0 { 1.0 } else { joined[i].1.factors()[j - 1] });
    ols(&y, &x, &REGRESSORS)
}

pub fn decompose_strategy(report: &BacktestReport, factors: &[FactorRow]) -> Result<RegressionResult> {
    decompose_returns(report.return_dates(), &report.daily_return, factors)
}

/// Fixed-width text table; one column per labelled regression.
pub fn format_table(results: &[(String, RegressionResult)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "factor");
    for (label, _) in results {
        let _ = write!(out, " {label:>20}");
    }
    out.push('\n');
    if let Some((_, first)) = results.first() {
        for (j, name) in first.names.iter().enumerate() {
            let _ = write!(out, "{name:<10}");
            for (_, r) in results {
                let cell = format!("{:.4}{}", r.coefficients[j], stars(r.p_values[j]));
                let _ = write!(out, " {cell:>20}");
            }
            out.push('\n');
            let _ = write!(out, "{:<10}", "");
            for (_, r) in results {
                let cell = format!("({:.2})", r.t_stats[j]);
                let _ = write!(out, " {cell:>20}");
            }
            out.push('\n');
        }
    }
    let _ = write!(out, "{:<10}", "R-squared");
    for (_, r) in results {
        let _ = write!(out, " {:>20.3}", r.r_squared);
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "n_obs");
    for (_, r) in results {
        let _ = write!(out, " {:>20}", r.n_obs);
    }
    out.push_str("\n* p<0.05, ** p<0.01, *** p<0.001; t-statistics in parentheses\n");
    out
}

/// `regressor,coef,std_err,t_stat,p_value,stars` plus R² and n rows.
pub fn write_regression_csv(result: &RegressionResult, path: &Path) -> Result<()> {
    let mut out = String::from("regressor,coef,std_err,t_stat,p_value,stars\n");
    for j in 0..result.names.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            result.names[j],
            result.coefficients[j],
            result.std_errors[j],
            result.t_stats[j],
            result.p_values[j],
            stars(result.p_values[j])
        );
    }
    let _ = writeln!(out, "r_squared,{},,,,", result.r_squared);
    let _ = writeln!(out, "n_obs,{},,,,", result.n_obs);
    write_file(path, &out)
}
