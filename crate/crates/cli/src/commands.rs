//! One function per subcommand. Each writes into its own directory under
//! `out_dir`, echoes the resolved config there and leaves a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use sigfuse_core::backtest::{buy_and_hold, read_returns_csv, run_long_only, run_long_short};
use sigfuse_core::env::{write_trajectory_csv, FeatureScaler, PortfolioEnv};
use sigfuse_core::factor::{decompose_returns, format_table, write_regression_csv};
use sigfuse_core::indicators::{build_features, FeaturePanel};
use sigfuse_core::market_data::{load_factors, load_prices, load_sentiment, RejectedTicker, SentimentReport};
use sigfuse_core::metrics::{summarize, PerformanceSummary, Ratio};
use sigfuse_core::signal::{build_signals, write_signals_csv, CombinerConfig};
use sigfuse_core::synth::{write_fixture, SynthConfig};
use sigfuse_core::PanelStore;
use sigfuse_rl::td3::{evaluate, format_training_log, train, Td3Checkpoint, TrainOptions, Window};

use crate::config::RunConfig;

pub struct Inputs {
    pub panel: PanelStore,
    pub rejected: Vec<RejectedTicker>,
    pub sentiment: Option<SentimentReport>,
    pub features: FeaturePanel,
}

pub fn load_inputs(cfg: &RunConfig) -> anyhow::Result<Inputs> {
    let load = load_prices(&cfg.prices)?;
    for r in &load.rejected {
        log::warn!(
            "dropped {}: {} of {} calendar days present",
            r.ticker,
            r.present_days,
            r.calendar_days
        );
    }
    let (panel, sentiment) = match &cfg.sentiment {
        Some(path) => {
            let (p, rep) = load_sentiment(path, load.panel)?;
            (p, Some(rep))
        }
        None => (load.panel, None),
    };
    let features = build_features(&panel)?;
    Ok(Inputs {
        panel,
        rejected: load.rejected,
        sentiment,
        features,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the config with `out_dir` blanked, so relocating output does not
/// change it.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    sha256_hex(c.to_toml().as_bytes())
}

pub fn panel_fingerprint(panel: &PanelStore) -> String {
    sha256_hex(&serde_json::to_vec(panel).expect("panel serialises"))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn command_dir(cfg: &RunConfig, name: &str) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir.join(name);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    Ok(dir)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, panel: &PanelStore, extra: serde_json::Value) -> anyhow::Result<()> {
    let mut m = json!({
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "panel_fingerprint": panel_fingerprint(panel),
        "tickers": panel.tickers(),
        "first_date": panel.calendar().first(),
        "last_date": panel.calendar().last(),
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (m.as_object_mut(), extra) {
        obj.extend(more);
    }
    write_json(&dir.join("manifest.json"), &m)
}

pub fn cmd_ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg)?;
    let dir = command_dir(cfg, "ingest")?;
    let factor_rows = match &cfg.factors {
        Some(path) => Some(load_factors(path)?.len()),
        None => None,
    };
    let p = &inputs.panel;
    let summary = json!({
        "tickers": p.n_tickers(),
        "days": p.n_days(),
        "rejected": inputs.rejected,
        "sentiment": inputs.sentiment,
        "factor_rows": factor_rows,
        "first_feature_date": p.calendar()[inputs.features.first_day()],
    });
    write_json(&dir.join("ingest.json"), &summary)?;
    write_manifest(&dir, "ingest", cfg, p, json!({}))?;
    println!(
        "ingested {} tickers x {} days ({} rejected), features from {}",
        p.n_tickers(),
        p.n_days(),
        inputs.rejected.len(),
        p.calendar()[inputs.features.first_day()]
    );
    Ok(())
}

#[derive(Serialize)]
struct StrategySummary<'a> {
    strategy: &'a str,
    sentiment_weight: Option<f64>,
    book: &'a str,
    tcost_bps: f64,
    start: chrono::NaiveDate,
    end: chrono::NaiveDate,
    metrics: PerformanceSummary,
}

fn weight_label(w: f64) -> String {
    format!("w_{w:.2}")
}

pub fn cmd_backtest(cfg: &RunConfig) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg)?;
    let dir = command_dir(cfg, "backtest")?;
    let cost = cfg.cost_model()?;
    let book = if cfg.long_only { "long_only" } else { "long_short" };
    let mut rows = Vec::new();
    for &w in &cfg.sentiment_weights {
        let combiner = CombinerConfig {
            sentiment_weight: w,
            quintile_count: cfg.quintiles,
        };
        let signals = build_signals(&inputs.panel, &inputs.features, &combiner)?;
        let mut report = if cfg.long_only {
            run_long_only(&inputs.panel, &signals, cfg.quintiles, &cost, cfg.initial_capital)?
        } else {
            run_long_short(&inputs.panel, &signals, cfg.quintiles, &cost)?
        };
        report.strategy = format!("combined_{}", weight_label(w));
        let sub = dir.join(weight_label(w));
        std::fs::create_dir_all(&sub)?;
        report.write_csvs(&sub)?;
        write_signals_csv(&signals, inputs.panel.tickers(), &sub.join("signals.csv"))?;
        let metrics = summarize(&report.daily_return, &report.turnover, None)?;
        write_json(
            &sub.join("summary.json"),
            &StrategySummary {
                strategy: &report.strategy,
                sentiment_weight: Some(w),
                book,
                tcost_bps: cfg.tcost_bps,
                start: report.dates[0],
                end: *report.dates.last().unwrap(),
                metrics,
            },
        )?;
        rows.push((format!("w = {w:.2}"), metrics));
    }
    let table = metrics_table(&rows);
    write(&dir.join("summary.txt"), &table)?;
    write(&dir.join("summary.csv"), &metrics_csv(&rows))?;
    write_manifest(&dir, "backtest", cfg, &inputs.panel, json!({ "book": book }))?;
    print!("{table}");
    Ok(())
}

fn day_on_or_after(panel: &PanelStore, d: chrono::NaiveDate) -> anyhow::Result<usize> {
    panel
        .calendar()
        .iter()
        .position(|c| *c >= d)
        .with_context(|| format!("{d} is after the last panel date"))
}

fn day_on_or_before(panel: &PanelStore, d: chrono::NaiveDate) -> anyhow::Result<usize> {
    panel
        .calendar()
        .iter()
        .rposition(|c| *c <= d)
        .with_context(|| format!("{d} is before the first panel date"))
}

/// Training and test windows in panel days. Missing dates split the
/// feature span 70/30.
pub fn rl_windows(cfg: &RunConfig, panel: &PanelStore, features: &FeaturePanel) -> anyhow::Result<(Window, Window)> {
    let first = features.first_day();
    let last = features.last_day();
    let split = first + (last - first) * 7 / 10;
    let pick = |d: Option<chrono::NaiveDate>, default: usize, after: bool| -> anyhow::Result<usize> {
        match d {
            Some(d) if after => day_on_or_after(panel, d),
            Some(d) => day_on_or_before(panel, d),
            None => Ok(default),
        }
    };
    let train = Window {
        start: pick(cfg.rl_train_start, first, true)?,
        end: pick(cfg.rl_train_end, split, false)?,
    };
    let test = Window {
        start: pick(cfg.rl_test_start, split, true)?,
        end: pick(cfg.rl_test_end, last, false)?,
    };
    for (name, w) in [("training", train), ("test", test)] {
        if w.start < first {
            bail!(
                "{name} window starts {} but features need history until {}",
                panel.calendar()[w.start],
                panel.calendar()[first]
            );
        }
        if w.end <= w.start {
            bail!("{name} window {}..{} has no steps", panel.calendar()[w.start], panel.calendar()[w.end]);
        }
    }
    Ok((train, test))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg)?;
    let (train_w, test_w) = rl_windows(cfg, &inputs.panel, &inputs.features)?;
    let resume = match resume {
        Some(p) => Some(Td3Checkpoint::load(p)?),
        None => None,
    };
    let dir = command_dir(cfg, "train")?;
    let scaler = FeatureScaler::fit(&inputs.panel, &inputs.features, train_w.start, train_w.end)?;
    let mut env = PortfolioEnv::new(&inputs.panel, &inputs.features, scaler.clone(), cfg.rl_cost_model()?)?;
    let options = TrainOptions {
        checkpoint_dir: Some(dir.join("checkpoints")),
        eval_window: None,
        resume,
    };
    let outcome = train(&mut env, train_w, &cfg.td3_config(), options)?;
    write(&dir.join("training_log.csv"), &format_training_log(&outcome.log))?;
    write_json(&dir.join("scaler.json"), &scaler)?;
    let checkpoints: Vec<String> = outcome
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let cal = inputs.panel.calendar();
    write_manifest(
        &dir,
        "train",
        cfg,
        &inputs.panel,
        json!({
            "epoch": outcome.log.last().map(|e| e.epoch),
            "train_start": cal[train_w.start],
            "train_end": cal[train_w.end],
            "test_start": cal[test_w.start],
            "test_end": cal[test_w.end],
            "checkpoints": checkpoints,
            "target_sanity_violations": outcome.agent.target_sanity_violations,
        }),
    )?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained through epoch {}: episode return {:.4}, eval nav {:.4}; {} checkpoints in {}",
            last.epoch,
            last.episode_return,
            last.eval_nav,
            checkpoints.len(),
            dir.join("checkpoints").display()
        );
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg)?;
    let (train_w, test_w) = rl_windows(cfg, &inputs.panel, &inputs.features)?;
    let default_ckpt = cfg.out_dir.join("train").join("checkpoints").join("final.json");
    let ckpt_path = checkpoint.unwrap_or(&default_ckpt);
    let ckpt = Td3Checkpoint::load(ckpt_path)?;
    if test_w.overlaps(&train_w) {
        log::warn!("evaluation window overlaps the training window");
    }
    let scaler = FeatureScaler::fit(&inputs.panel, &inputs.features, train_w.start, train_w.end)?;
    let mut env = PortfolioEnv::new(&inputs.panel, &inputs.features, scaler, cfg.rl_cost_model()?)?;
    ckpt.check_dims(env.state_dim(), env.action_dim())?;
    let eval = evaluate(&ckpt.agent.actor, &mut env, test_w, cfg.initial_capital)?;
    let bench = buy_and_hold(&inputs.panel, test_w.start, test_w.end, cfg.initial_capital)?;

    let dir = command_dir(cfg, "eval")?;
    let mut rows = Vec::new();
    for (name, label, report) in [("td3", "TD3 policy", &eval.report), ("buy_and_hold", "Buy & hold", &bench)] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub)?;
        report.write_csvs(&sub)?;
        let metrics = summarize(&report.daily_return, &report.turnover, None)?;
        write_json(
            &sub.join("summary.json"),
            &StrategySummary {
                strategy: &report.strategy,
                sentiment_weight: None,
                book: "long_only",
                tcost_bps: if name == "td3" { cfg.rl_tcost_bps } else { 0.0 },
                start: report.dates[0],
                end: *report.dates.last().unwrap(),
                metrics,
            },
        )?;
        rows.push((label.to_string(), metrics));
    }
    write_trajectory_csv(&eval.steps, inputs.panel.tickers(), &dir.join("td3").join("trajectory.csv"))?;
    let table = metrics_table(&rows);
    write(&dir.join("comparison.txt"), &table)?;
    write(&dir.join("comparison.csv"), &metrics_csv(&rows))?;
    write_manifest(
        &dir,
        "eval",
        cfg,
        &inputs.panel,
        json!({
            "checkpoint": ckpt_path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "checkpoint_epoch": ckpt.epoch,
        }),
    )?;
    print!("{table}");
    Ok(())
}

/// `nav.csv` files produced by earlier backtest and eval runs.
fn discover_reports(out_dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for cmd in ["backtest", "eval"] {
        let Ok(entries) = std::fs::read_dir(out_dir.join(cmd)) else {
            continue;
        };
        for e in entries.flatten() {
            let nav = e.path().join("nav.csv");
            if nav.is_file() {
                found.push(nav);
            }
        }
    }
    found.sort();
    found
}

fn report_label(out_dir: &Path, nav: &Path) -> String {
    let parent = nav.parent().unwrap_or(nav);
    parent
        .strip_prefix(out_dir)
        .unwrap_or(parent)
        .to_string_lossy()
        .replace(['/', '\\'], "_")
}

pub fn cmd_regress(cfg: &RunConfig, reports: &[PathBuf]) -> anyhow::Result<()> {
    let factors = load_factors(cfg.factors.as_deref().context("factors path is required")?)?;
    let navs = if reports.is_empty() {
        discover_reports(&cfg.out_dir)
    } else {
        reports.to_vec()
    };
    if navs.is_empty() {
        bail!("no reports found under {}; run backtest or eval first", cfg.out_dir.display());
    }
    let dir = cfg.out_dir.join("regress");
    std::fs::create_dir_all(&dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let mut results = Vec::new();
    for nav in &navs {
        let (dates, rets) = read_returns_csv(nav)?;
        let label = report_label(&cfg.out_dir, nav);
        let res = decompose_returns(&dates, &rets, &factors).with_context(|| format!("regressing {}", nav.display()))?;
        write_regression_csv(&res, &dir.join(format!("{label}.csv")))?;
        results.push((label, res));
    }
    let table = format_table(&results);
    write(&dir.join("table.txt"), &table)?;
    let hash = config_hash(cfg);
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "command": "regress",
            "config_hash": hash,
            "seed": cfg.seed,
            "reports": results.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
        }),
    )?;
    print!("{table}");
    Ok(())
}

#[derive(serde::Deserialize)]
struct SummaryFile {
    strategy: String,
    metrics: SummaryMetrics,
}

#[derive(serde::Deserialize)]
struct SummaryMetrics {
    ann_return: f64,
    ann_vol: f64,
    sharpe: serde_json::Value,
    sortino: serde_json::Value,
    max_drawdown: f64,
    ann_turnover: f64,
    n_obs: usize,
}

fn ratio_from_json(v: &serde_json::Value) -> Ratio {
    match v {
        serde_json::Value::Number(n) => Ratio::Value(n.as_f64().unwrap_or(f64::NAN)),
        serde_json::Value::String(s) if s == "+inf" => Ratio::Infinite,
        _ => Ratio::Undefined,
    }
}

/// Collects every strategy summary under `out_dir` into one table.
pub fn cmd_report(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for nav in discover_reports(&cfg.out_dir) {
        let path = nav.with_file_name("summary.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let s: SummaryFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let m = s.metrics;
        rows.push((
            format!("{} ({})", report_label(&cfg.out_dir, &nav), s.strategy),
            PerformanceSummary {
                ann_return: m.ann_return,
                ann_vol: m.ann_vol,
                sharpe: ratio_from_json(&m.sharpe),
                sortino: ratio_from_json(&m.sortino),
                max_drawdown: m.max_drawdown,
                ann_turnover: m.ann_turnover,
                n_obs: m.n_obs,
            },
        ));
    }
    if rows.is_empty() {
        bail!("no strategy summaries under {}; run backtest or eval first", cfg.out_dir.display());
    }
    let dir = cfg.out_dir.join("report");
    std::fs::create_dir_all(&dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let table = metrics_table(&rows);
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.csv"), &metrics_csv(&rows))?;
    print!("{table}");
    Ok(())
}

pub struct SynthArgs {
    pub days: usize,
    pub tickers: usize,
    pub seed: u64,
    pub planted: bool,
}

/// Writes a synthetic data set and a matching config into `dir`.
pub fn cmd_synth(dir: &Path, args: &SynthArgs) -> anyhow::Result<PathBuf> {
    let synth = if args.planted {
        SynthConfig::planted_alpha(args.seed, args.days)
    } else {
        SynthConfig {
            n_tickers: args.tickers,
            n_days: args.days,
            seed: args.seed,
            ..SynthConfig::default()
        }
    };
    write_fixture(&synth, dir)?;
    let cfg = RunConfig {
        prices: "prices.csv".into(),
        sentiment: Some("sentiment.csv".into()),
        factors: Some("factors.csv".into()),
        out_dir: "out".into(),
        seed: args.seed,
        quintiles: synth.n_tickers.clamp(2, 5),
        rl_hidden: 16,
        rl_epochs: 50,
        ..RunConfig::default()
    };
    let path = dir.join("config.toml");
    write(&path, &cfg.to_toml())?;
    println!(
        "wrote {} tickers x {} days to {}",
        synth.n_tickers,
        synth.n_days,
        dir.display()
    );
    Ok(path)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn ratio(r: Ratio) -> String {
    match r {
        Ratio::Value(v) => format!("{v:.2}"),
        Ratio::Infinite => "+inf".into(),
        Ratio::Undefined => "n/a".into(),
    }
}

const METRIC_ROWS: [&str; 6] = [
    "Annualised return",
    "Annualised volatility",
    "Sharpe ratio",
    "Sortino ratio",
    "Portfolio turnover",
    "Max drawdown",
];

fn metric_cells(m: &PerformanceSummary) -> [String; 6] {
    [
        pct(m.ann_return),
        pct(m.ann_vol),
        ratio(m.sharpe),
        ratio(m.sortino),
        pct(m.ann_turnover),
        pct(m.max_drawdown),
    ]
}

/// Metric rows, one column per strategy.
pub fn metrics_table(rows: &[(String, PerformanceSummary)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(12);
    let mut out = format!("{:<22}", "Metric");
    for (label, _) in rows {
        let _ = write!(out, " {label:>width$}");
    }
    out.push('\n');
    let cells: Vec<[String; 6]> = rows.iter().map(|(_, m)| metric_cells(m)).collect();
    for (i, name) in METRIC_ROWS.iter().enumerate() {
        let _ = write!(out, "{name:<22}");
        for c in &cells {
            let _ = write!(out, " {:>width$}", c[i]);
        }
        out.push('\n');
    }
    out
}

/// Machine-readable version of [`metrics_table`] with raw values.
pub fn metrics_csv(rows: &[(String, PerformanceSummary)]) -> String {
    let mut out = String::from("strategy,ann_return,ann_vol,sharpe,sortino,ann_turnover,max_drawdown,n_obs\n");
    let raw = |r: Ratio| match r {
        Ratio::Value(v) => v.to_string(),
        Ratio::Infinite => "+inf".into(),
        Ratio::Undefined => String::new(),
    };
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{},{}",
            m.ann_return,
            m.ann_vol,
            raw(m.sharpe),
            raw(m.sortino),
            m.ann_turnover,
            m.max_drawdown,
            m.n_obs
        );
    }
    out
}
