//! Training-loop behaviour on small synthetic markets.

use sigfuse_core::backtest::{buy_and_hold, CostModel};
use sigfuse_core::env::{FeatureScaler, PortfolioEnv};
use sigfuse_core::indicators::build_features;
use sigfuse_core::synth::{synthetic_panel, SynthConfig};
use sigfuse_core::PanelStore;
use sigfuse_rl::replay::ReplayBuffer;
use sigfuse_rl::td3::{evaluate, rollout, train, Td3Agent, Td3Checkpoint, Td3Config, TrainOptions, Window};
use sigfuse_rl::Error;

fn small_config(epochs: usize) -> Td3Config {
    Td3Config {
        hidden: 8,
        epochs,
        checkpoint_every: 2,
        seed: 5,
        ..Td3Config::default()
    }
}

fn panel() -> PanelStore {
    synthetic_panel(&SynthConfig::planted_alpha(9, 120)).unwrap()
}

#[test]
fn identical_seeds_train_identical_agents() {
    let p = panel();
    let f = build_features(&p).unwrap();
    let w = Window { start: 40, end: 80 };
    let run = || {
        let mut env = PortfolioEnv::new(&p, &f, FeatureScaler::identity(), CostModel::new(10.0, 0.0).unwrap()).unwrap();
        train(&mut env, w, &small_config(3), TrainOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.agent, b.agent);
    assert_eq!(a.log, b.log);
    assert_eq!(a.agent.critic_steps, 3 * 40);
    assert_eq!(a.agent.actor_updates, 3 * 20);
    assert_eq!(a.agent.target_sanity_violations, 0);
}

#[test]
fn checkpoints_round_trip_and_resume_continues_numbering() {
    let p = panel();
    let f = build_features(&p).unwrap();
    let w = Window { start: 40, end: 70 };
    let dir = tempfile::tempdir().unwrap();
    let mut env = PortfolioEnv::new(&p, &f, FeatureScaler::identity(), CostModel::new(10.0, 0.0).unwrap()).unwrap();
    let first = train(
        &mut env,
        w,
        &small_config(2),
        TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let names: Vec<String> = first
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"epoch_0002.json".to_string()));
    assert!(names.contains(&"final.json".to_string()));

    let ckpt = Td3Checkpoint::load(&dir.path().join("final.json")).unwrap();
    assert_eq!(ckpt.epoch, 2);
    assert_eq!(ckpt.agent, first.agent);

    let resumed = train(
        &mut env,
        w,
        &small_config(4),
        TrainOptions {
            resume: Some(ckpt),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let epochs: Vec<usize> = resumed.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert_eq!(resumed.agent.critic_steps, 4 * 30);
}

#[test]
fn checkpoint_for_another_universe_is_rejected() {
    let agent = Td3Agent::new(9 * 4 + 1, 5, small_config(1)).unwrap();
    let ckpt = Td3Checkpoint {
        format: sigfuse_rl::td3::CHECKPOINT_FORMAT,
        epoch: 1,
        best_return: 0.0,
        agent,
        log: Vec::new(),
    };
    assert!(ckpt.check_dims(9 * 4 + 1, 5).is_ok());
    assert!(matches!(ckpt.check_dims(9 * 5 + 1, 6), Err(Error::Incompatible(_))));

    let other = synthetic_panel(&SynthConfig {
        n_tickers: 3,
        n_days: 120,
        ..SynthConfig::default()
    })
    .unwrap();
    let fo = build_features(&other).unwrap();
    let mut env = PortfolioEnv::new(&other, &fo, FeatureScaler::identity(), CostModel::default()).unwrap();
    let w = Window { start: 40, end: 60 };
    assert!(matches!(evaluate(&ckpt.agent.actor, &mut env, w, 1.0), Err(Error::Incompatible(_))));
}

#[test]
fn exploration_rollout_stores_scaled_rewards() {
    let p = panel();
    let f = build_features(&p).unwrap();
    let mut env = PortfolioEnv::new(&p, &f, FeatureScaler::identity(), CostModel::new(10.0, 0.0).unwrap()).unwrap();
    let mut agent = Td3Agent::new(env.state_dim(), env.action_dim(), small_config(1)).unwrap();
    let mut buffer = ReplayBuffer::new(100, 1).unwrap();
    let w = Window { start: 40, end: 60 };
    let steps = rollout(&mut env, &mut agent, w, 1.0, Some(&mut buffer)).unwrap();
    assert_eq!(steps.len(), 20);
    assert_eq!(buffer.len(), 20);
    let batch = buffer.sample(20).unwrap();
    let scaled: Vec<f64> = steps.iter().map(|s| (s.value_after / s.value_before - 1.0) * 100.0).collect();
    for r in &batch.rewards {
        assert!(scaled.iter().any(|x| (x - r).abs() < 1e-9), "reward {r} not in the episode");
    }
    for (r, d) in batch.rewards.iter().zip(&batch.dones) {
        assert_eq!(*d == 1.0, (r - scaled[19]).abs() < 1e-12);
    }
}

/// Two assets, one drifting upward with a sentiment tell; a short training
/// run already tilts toward it and beats the equal-weight benchmark.
#[test]
fn two_asset_planted_drift_is_found() {
    let p = synthetic_panel(&SynthConfig {
        n_tickers: 2,
        ..SynthConfig::planted_alpha(3, 260)
    })
    .unwrap();
    let f = build_features(&p).unwrap();
    let (train_w, test_w) = (Window { start: 40, end: 180 }, Window { start: 180, end: 259 });
    let scaler = FeatureScaler::fit(&p, &f, train_w.start, train_w.end).unwrap();
    let mut env = PortfolioEnv::new(&p, &f, scaler, CostModel::new(10.0, 0.0).unwrap()).unwrap();
    let config = Td3Config {
        hidden: 16,
        epochs: 60,
        seed: 1,
        ..Td3Config::default()
    };
    let out = train(&mut env, train_w, &config, TrainOptions::default()).unwrap();
    let eval = evaluate(&out.agent.actor, &mut env, test_w, 1.0).unwrap();
    let w0 = eval.steps.iter().map(|s| s.target_weights[0]).sum::<f64>() / eval.steps.len() as f64;
    let bench = buy_and_hold(&p, test_w.start, test_w.end, 1.0).unwrap();
    assert!(w0 > 0.5, "average weight on the drifting asset {w0}");
    assert!(eval.report.nav.last().unwrap() > bench.nav.last().unwrap());
}
