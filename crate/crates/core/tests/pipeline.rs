//! End-to-end checks across loading, signals, backtests and the environment.

use sigfuse_core::backtest::{buy_and_hold, run_long_only, run_long_short, CostModel};
use sigfuse_core::env::{episode_report, state_dim, write_trajectory_csv, FeatureScaler, PortfolioEnv};
use sigfuse_core::indicators::build_features;
use sigfuse_core::market_data::{load_factors, load_prices, load_sentiment};
use sigfuse_core::metrics::summarize;
use sigfuse_core::signal::{build_signals, CombinerConfig};
use sigfuse_core::synth::{synthetic_parts, write_fixture, SynthConfig};
use sigfuse_core::Error;

fn config() -> SynthConfig {
    SynthConfig {
        n_tickers: 10,
        n_days: 140,
        seed: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn fixture_files_reload_to_the_same_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_fixture(&config(), dir.path()).unwrap();
    let loaded = load_prices(&paths.prices).unwrap();
    assert!(loaded.rejected.is_empty());
    let (from_disk, report) = load_sentiment(&paths.sentiment, loaded.panel).unwrap();
    assert!(report.attached > 0);
    assert_eq!(load_factors(&paths.factors).unwrap().len(), 140);

    let (panel, records) = synthetic_parts(&config()).unwrap();
    let (in_memory, _) = panel.with_sentiment(records).unwrap();

    let cost = CostModel::new(5.0, 0.0).unwrap();
    let run = |p: &sigfuse_core::PanelStore| {
        let f = build_features(p).unwrap();
        let s = build_signals(p, &f, &CombinerConfig::new(0.5).unwrap()).unwrap();
        run_long_short(p, &s, 5, &cost).unwrap()
    };
    let (a, b) = (run(&from_disk), run(&in_memory));
    for (x, y) in a.nav.iter().zip(&b.nav) {
        assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}");
    }
}

#[test]
fn long_only_book_holds_top_bucket_and_cash_column() {
    let (panel, _) = synthetic_parts(&config()).unwrap();
    let f = build_features(&panel).unwrap();
    let s = build_signals(&panel, &f, &CombinerConfig::new(0.0).unwrap()).unwrap();
    let r = run_long_only(&panel, &s, 5, &CostModel::new(5.0, 0.0).unwrap(), 1e6).unwrap();
    assert_eq!(r.columns.last().map(String::as_str), Some("cash"));
    for w in &r.weights {
        assert_eq!(w.iter().filter(|x| **x > 0.0).count(), 2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // Formation out of cash trades 2: one unit sold out of cash, one bought.
    assert!((r.turnover[0] - 2.0).abs() < 1e-12);
    let l = run_long_short(&panel, &s, 5, &CostModel::new(5.0, 0.0).unwrap()).unwrap();
    for w in &l.weights {
        assert!(w.iter().sum::<f64>().abs() < 1e-12);
        assert!((w.iter().map(|x| x.abs()).sum::<f64>() - 2.0).abs() < 1e-12);
    }
}

#[test]
fn buy_and_hold_never_trades() {
    let (panel, _) = synthetic_parts(&config()).unwrap();
    let r = buy_and_hold(&panel, 40, 139, 1.0).unwrap();
    assert!(r.turnover.iter().all(|t| *t == 0.0));
    assert!(r.costs_paid.iter().all(|c| *c == 0.0));
    // Un-rebalanced equal weight grows like the mean of the price relatives.
    let growth: f64 = (0..panel.n_tickers())
        .map(|t| panel.bar(t, 139).close / panel.bar(t, 40).close)
        .sum::<f64>()
        / panel.n_tickers() as f64;
    assert!((r.nav.last().unwrap() - growth).abs() < 1e-12);
    assert_eq!(summarize(&r.daily_return, &r.turnover, None).unwrap().ann_turnover, 0.0);
}

#[test]
fn cash_only_episode_is_flat_after_entry() {
    let (panel, _) = synthetic_parts(&config()).unwrap();
    let f = build_features(&panel).unwrap();
    let cost = CostModel::new(10.0, 0.0).unwrap();
    let mut env = PortfolioEnv::new(&panel, &f, FeatureScaler::identity(), cost).unwrap();
    assert_eq!(env.state_dim(), state_dim(10));
    let mut logits = vec![-40.0; 11];
    logits[10] = 40.0;
    env.reset(50, 70, 1e6).unwrap();
    let mut steps = Vec::new();
    loop {
        let s = env.step(&logits).unwrap();
        assert!(s.reward.abs() < 1e-12);
        steps.push(s.info);
        if s.done {
            break;
        }
    }
    assert_eq!(steps.len(), 20);
    assert!(matches!(env.step(&logits), Err(Error::EpisodeBounds(_))));

    let report = episode_report("cash", panel.tickers(), panel.calendar()[70], &steps).unwrap();
    assert_eq!(report.nav.len(), 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    write_trajectory_csv(&steps, panel.tickers(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("date,V,reward,turnover,cost,weight_S00,"));
    assert!(text.lines().next().unwrap().ends_with("weight_cash"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn scaler_is_fitted_on_training_days_only() {
    let (panel, _) = synthetic_parts(&config()).unwrap();
    let f = build_features(&panel).unwrap();
    let early = FeatureScaler::fit(&panel, &f, 40, 90).unwrap();
    // Replacing everything after the fitting window leaves the scaler unchanged.
    let cut = panel.truncated(90);
    let fc = build_features(&cut).unwrap();
    assert_eq!(FeatureScaler::fit(&cut, &fc, 40, 90).unwrap(), early);
    assert!(FeatureScaler::fit(&panel, &f, 0, 90).is_err());
}
