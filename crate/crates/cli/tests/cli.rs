//! Runs the `sigfuse` binary end to end on a synthetic fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sigfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigfuse")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic fixture with a fast training configuration.
fn fixture(dir: &Path, planted: bool) -> PathBuf {
    let fx = dir.join("fx");
    let mut args = vec!["--out", fx.to_str().unwrap(), "synth", "--days", "160", "--tickers", "10"];
    if planted {
        args.push("--planted");
    }
    let o = sigfuse(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = fx.join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let text: Vec<String> = text
        .lines()
        .map(|l| match l.split('=').next().map(str::trim) {
            Some("rl_epochs") => "rl_epochs = 4".into(),
            Some("rl_hidden") => "rl_hidden = 8".into(),
            Some("rl_checkpoint_every") => "rl_checkpoint_every = 2".into(),
            _ => l.to_string(),
        })
        .collect();
    std::fs::write(&cfg, text.join("\n")).unwrap();
    cfg
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, "prices = \"nowhere/prices.csv\"\n").unwrap();
    let o = sigfuse(&["--config", cfg.to_str().unwrap(), "backtest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/prices.csv"), "{}", stderr(&o));

    let cfg_path = fixture(dir.path(), false);
    let bad = dir.path().join("fx").join("bad.toml");
    let text = std::fs::read_to_string(&cfg_path).unwrap().replace("rl_gamma = 0.99", "rl_gamma = 1.5");
    std::fs::write(&bad, text).unwrap();
    let o = sigfuse(&["--config", bad.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));

    assert_eq!(sigfuse(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sigfuse(&["backtest"]).status.code(), Some(2));
    assert_eq!(sigfuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn backtest_writes_one_report_per_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), false);
    let o = sigfuse(&["--config", cfg.to_str().unwrap(), "backtest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("fx/out/backtest");
    for w in ["w_0.00", "w_0.50", "w_1.00"] {
        for f in ["nav.csv", "weights.csv", "costs.csv", "signals.csv", "summary.json"] {
            assert!(out.join(w).join(f).is_file(), "{w}/{f}");
        }
    }
    let table = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    for row in ["Annualised return", "Sharpe ratio", "Sortino ratio", "Portfolio turnover", "Max drawdown"] {
        assert!(table.contains(row), "{row}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn train_resume_eval_regress_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), true);
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("fx/out");

    let o = sigfuse(&["--config", cfg, "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpts = out.join("train/checkpoints");
    let n = std::fs::read_dir(&ckpts).unwrap().count();
    assert!(n >= 2, "{n} checkpoints");
    let log = std::fs::read_to_string(out.join("train/training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    // Resume from epoch 2 with a longer schedule.
    let resume_from = dir.path().join("epoch_0002.json");
    std::fs::copy(ckpts.join("epoch_0002.json"), &resume_from).unwrap();
    let longer = dir.path().join("fx/longer.toml");
    std::fs::write(&longer, std::fs::read_to_string(cfg).unwrap().replace("rl_epochs = 4", "rl_epochs = 6")).unwrap();
    let o = sigfuse(&["--config", longer.to_str().unwrap(), "train", "--resume", resume_from.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let epochs = csv_column(&out.join("train/training_log.csv"), "epoch");
    assert_eq!(epochs, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let o = sigfuse(&["--config", cfg, "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let turnover = csv_column(&out.join("eval/buy_and_hold/costs.csv"), "turnover");
    assert!(!turnover.is_empty() && turnover.iter().all(|t| *t == 0.0));
    let traj = std::fs::read_to_string(out.join("eval/td3/trajectory.csv")).unwrap();
    assert!(traj.starts_with("date,V,reward,turnover,cost,weight_S00"));
    assert!(std::fs::read_to_string(out.join("eval/comparison.txt")).unwrap().contains("Buy & hold"));

    let o = sigfuse(&["--config", cfg, "regress"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("regress/table.txt")).unwrap();
    for name in ["const", "mktrf", "smb", "hml", "rmw", "cma", "umd", "R-squared"] {
        assert!(table.contains(name), "{name}");
    }

    let o = sigfuse(&["--config", cfg, "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report/report.txt")).unwrap();
    assert!(report.contains("td3") && report.contains("buy_and_hold"));
}

#[test]
fn seed_flag_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), true);
    let cfg = cfg.to_str().unwrap();
    let log = |seed: &str| {
        let o = sigfuse(&["--config", cfg, "--seed", seed, "train"]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(dir.path().join("fx/out/train/training_log.csv")).unwrap()
    };
    let (a, b, c) = (log("1"), log("2"), log("1"));
    assert_eq!(a, c);
    assert_ne!(a, b);
}
