//! Run configuration: one flat TOML table.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every learning hyperparameter is a named `rl_*` key.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use sigfuse_core::backtest::CostModel;
use sigfuse_core::signal::CombinerConfig;
use sigfuse_rl::td3::Td3Config;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {key} file not found: {path}")]
    MissingFile { key: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prices: PathBuf,
    pub sentiment: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub sentiment_weights: Vec<f64>,
    pub quintiles: usize,
    pub tcost_bps: f64,
    pub borrow_bps: f64,
    pub long_only: bool,
    pub initial_capital: f64,

    pub rl_train_start: Option<NaiveDate>,
    pub rl_train_end: Option<NaiveDate>,
    pub rl_test_start: Option<NaiveDate>,
    pub rl_test_end: Option<NaiveDate>,
    pub rl_tcost_bps: f64,
    pub rl_borrow_bps: f64,
    pub rl_lr: f64,
    pub rl_gamma: f64,
    pub rl_policy_noise: f64,
    pub rl_noise_clip: f64,
    pub rl_policy_delay: usize,
    /// 0 means one full training episode (T - 1).
    pub rl_batch_size: usize,
    pub rl_epochs: usize,
    pub rl_explore_noise: f64,
    pub rl_tau: f64,
    pub rl_hidden: usize,
    pub rl_buffer_episodes: usize,
    pub rl_checkpoint_every: usize,
    pub rl_reward_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let td3 = Td3Config::default();
        RunConfig {
            prices: PathBuf::from("prices.csv"),
            sentiment: None,
            factors: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            sentiment_weights: vec![0.0, 0.5, 1.0],
            quintiles: 5,
            tcost_bps: 5.0,
            borrow_bps: 0.0,
            long_only: false,
            initial_capital: 1e6,
            rl_train_start: None,
            rl_train_end: None,
            rl_test_start: None,
            rl_test_end: None,
            rl_tcost_bps: sigfuse_core::env::DEFAULT_TCOST_BPS,
            rl_borrow_bps: 0.0,
            rl_lr: td3.lr,
            rl_gamma: td3.gamma,
            rl_policy_noise: td3.policy_noise,
            rl_noise_clip: td3.noise_clip,
            rl_policy_delay: td3.policy_delay,
            rl_batch_size: 0,
            rl_epochs: td3.epochs,
            rl_explore_noise: td3.explore_noise,
            rl_tau: td3.tau,
            rl_hidden: td3.hidden,
            rl_buffer_episodes: td3.buffer_episodes,
            rl_checkpoint_every: td3.checkpoint_every,
            rl_reward_scale: td3.reward_scale,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads the file and resolves its paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.prices = resolve(base, &cfg.prices);
        cfg.sentiment = cfg.sentiment.as_deref().map(|p| resolve(base, p));
        cfg.factors = cfg.factors.as_deref().map(|p| resolve(base, p));
        cfg.out_dir = resolve(base, &cfg.out_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.sentiment_weights.is_empty() {
            return invalid("sentiment_weights must not be empty".into());
        }
        for w in &self.sentiment_weights {
            CombinerConfig::new(*w).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.quintiles < 2 {
            return invalid(format!("quintiles must be >= 2, got {}", self.quintiles));
        }
        self.cost_model().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        CostModel::new(self.rl_tcost_bps, self.rl_borrow_bps).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.initial_capital > 0.0 && self.initial_capital.is_finite()) {
            return invalid(format!("initial_capital {} must be positive", self.initial_capital));
        }
        for (a, b, name) in [
            (self.rl_train_start, self.rl_train_end, "rl_train"),
            (self.rl_test_start, self.rl_test_end, "rl_test"),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                if a >= b {
                    return invalid(format!("{name}_start {a} must precede {name}_end {b}"));
                }
            }
        }
        if let (Some(train_end), Some(test_start)) = (self.rl_train_end, self.rl_test_start) {
            if test_start < train_end {
                return invalid(format!("rl_test_start {test_start} precedes rl_train_end {train_end}"));
            }
        }
        self.td3_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Inputs must exist before any work starts.
    pub fn check_inputs(&self, need_factors: bool) -> Result<(), ConfigError> {
        if !self.prices.is_file() {
            return Err(ConfigError::MissingFile {
                key: "prices",
                path: self.prices.clone(),
            });
        }
        if let Some(s) = &self.sentiment {
            if !s.is_file() {
                return Err(ConfigError::MissingFile {
                    key: "sentiment",
                    path: s.clone(),
                });
            }
        }
        if need_factors {
            match &self.factors {
                Some(f) if f.is_file() => {}
                Some(f) => {
                    return Err(ConfigError::MissingFile {
                        key: "factors",
                        path: f.clone(),
                    })
                }
                None => return Err(ConfigError::Invalid("factors path is required for this command".into())),
            }
        }
        Ok(())
    }

    pub fn cost_model(&self) -> sigfuse_core::Result<CostModel> {
        CostModel::new(self.tcost_bps, self.borrow_bps)
    }

    pub fn rl_cost_model(&self) -> sigfuse_core::Result<CostModel> {
        CostModel::new(self.rl_tcost_bps, self.rl_borrow_bps)
    }

    pub fn td3_config(&self) -> Td3Config {
        Td3Config {
            lr: self.rl_lr,
            gamma: self.rl_gamma,
            policy_noise: self.rl_policy_noise,
            noise_clip: self.rl_noise_clip,
            policy_delay: self.rl_policy_delay,
            batch_size: (self.rl_batch_size > 0).then_some(self.rl_batch_size),
            epochs: self.rl_epochs,
            explore_noise: self.rl_explore_noise,
            tau: self.rl_tau,
            hidden: self.rl_hidden,
            buffer_episodes: self.rl_buffer_episodes,
            checkpoint_every: self.rl_checkpoint_every,
            initial_value: self.initial_capital,
            reward_scale: self.rl_reward_scale,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.rl_lr, 1e-4);
        assert_eq!(c.rl_gamma, 0.99);
        assert_eq!(c.rl_policy_noise, 0.2);
        assert_eq!(c.rl_noise_clip, 0.5);
        assert_eq!(c.rl_policy_delay, 2);
        assert_eq!(c.rl_epochs, 512);
        assert_eq!(c.rl_tcost_bps, 10.0);
        assert_eq!(c.sentiment_weights, vec![0.0, 0.5, 1.0]);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            rl_train_start: NaiveDate::from_ymd_opt(2020, 3, 2),
            sentiment: Some("s.csv".into()),
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn bad_gamma_and_unknown_key() {
        let c = RunConfig::parse("rl_gamma = 1.5\n", Path::new("x.toml")).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(m)) if m.contains("gamma")));
        assert!(matches!(
            RunConfig::parse("gama = 0.9\n", Path::new("x.toml")),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn inverted_dates_rejected() {
        let c = RunConfig::parse("rl_train_start = \"2021-01-01\"\nrl_train_end = \"2020-01-01\"\n", Path::new("x.toml")).unwrap();
        assert!(c.validate().is_err());
    }
}
