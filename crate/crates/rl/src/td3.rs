//! TD3: twin critics, clipped target-policy smoothing and delayed actor
//! updates, trained on full-window episodes of the portfolio environment.
//!
//! The actor maps an observation to `n + 1` raw logits; the environment
//! projects them onto the simplex. Critics take `[state, softmax(logits)]`,
//! so the actor gradient flows through the same projection the environment
//! applies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use sigfuse_core::backtest::BacktestReport;
use sigfuse_core::env::{episode_report, PortfolioEnv, StepInfo};

use crate::error::{Error, Result};
use crate::neural::{polyak_update, AdamState, DenseNet, Head};
use crate::replay::{Batch, ReplayBuffer, Transition};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    pub lr: f64,
    pub gamma: f64,
    /// Target-policy smoothing noise.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    /// `None` means one full episode, `T - 1`.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    /// Gaussian noise on behaviour logits during training roll-outs.
    pub explore_noise: f64,
    pub tau: f64,
    pub hidden: usize,
    /// Replay capacity in episodes, i.e. `buffer_episodes * (T - 1)`.
    pub buffer_episodes: usize,
    pub checkpoint_every: usize,
    pub initial_value: f64,
    /// Multiplier on rewards before they enter the critic targets; 100
    /// means the critics learn returns in percent.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            lr: 1e-4,
            gamma: 0.99,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            batch_size: None,
            epochs: 512,
            explore_noise: 0.1,
            tau: 0.005,
            hidden: 256,
            buffer_episodes: 25,
            checkpoint_every: 32,
            initial_value: 1e6,
            reward_scale: 100.0,
            seed: 0,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        for (name, v) in [
            ("policy_noise", self.policy_noise),
            ("noise_clip", self.noise_clip),
            ("explore_noise", self.explore_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1".into());
        }
        if self.batch_size == Some(0) || self.hidden == 0 || self.buffer_episodes == 0 || self.checkpoint_every == 0 {
            return bad("batch_size, hidden, buffer_episodes and checkpoint_every must be positive".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward_scale {} must be positive", self.reward_scale));
        }
        if !(self.initial_value > 0.0 && self.initial_value.is_finite()) {
            return bad(format!("initial_value {} must be positive", self.initial_value));
        }
        Ok(())
    }
}

/// Bootstrapped targets plus the two target-critic estimates behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub y: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

fn column(m: &Array2<f64>) -> Vec<f64> {
    m.column(0).to_vec()
}

/// Row-wise softmax of a logit batch, the weights the environment would hold.
pub fn project_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Critics see the state and the projected portfolio, not the raw logits.
fn critic_input(states: &Array2<f64>, logits: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), *states, project_rows(logits)]
}

/// Pulls a gradient on projected weights back to the logits:
/// `dL/da_j = w_j (g_j - sum_k w_k g_k)`.
fn softmax_backward(weights: &Array2<f64>, grad_w: &Array2<f64>) -> Array2<f64> {
    let dot = (weights * grad_w).sum_axis(Axis(1)).insert_axis(Axis(1));
    weights * &(grad_w - &dot)
}

/// Clipped Gaussian noise, one draw per entry.
pub fn smoothing_noise(rows: usize, cols: usize, sigma: f64, clip: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if sigma == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng).clamp(-clip, clip))
}

/// `y = r + gamma (1 - done) min(Q1', Q2')` at the smoothed target action.
#[allow(clippy::too_many_arguments)]
pub fn compute_target(
    batch: &Batch,
    actor_target: &DenseNet,
    critic1_target: &DenseNet,
    critic2_target: &DenseNet,
    gamma: f64,
    policy_noise: f64,
    noise_clip: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TargetEstimate> {
    let next_actions = actor_target.forward(&batch.next_states)?;
    let noise = smoothing_noise(next_actions.nrows(), next_actions.ncols(), policy_noise, noise_clip, rng);
    let input = critic_input(&batch.next_states, &(next_actions + noise));
    let q1 = column(&critic1_target.forward(&input)?);
    let q2 = column(&critic2_target.forward(&input)?);
    let y = (0..batch.len())
        .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * q1[i].min(q2[i]))
        .collect();
    Ok(TargetEstimate { y, q1, q2 })
}

/// Critic MSE loss against `y` and its gradient in the critic's parameters.
pub fn critic_loss_gradient(critic: &DenseNet, states: &Array2<f64>, actions: &Array2<f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() != states.nrows() {
        return Err(Error::Shape(format!("{} targets for {} states", y.len(), states.nrows())));
    }
    let tape = critic.forward_recorded(&critic_input(states, actions))?;
    let q = tape.output();
    let n = y.len() as f64;
    let resid = Array2::from_shape_fn((y.len(), 1), |(i, _)| q[[i, 0]] - y[i]);
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("critic loss {loss}")));
    }
    let grads = critic.backward(&tape, &resid.mapv(|r| 2.0 * r / n))?;
    Ok((loss, grads.params))
}

/// One MSE regression step of `critic` onto `y`; returns the pre-step loss.
pub fn critic_step(critic: &mut DenseNet, opt: &mut AdamState, batch: &Batch, y: &[f64]) -> Result<f64> {
    let (loss, grads) = critic_loss_gradient(critic, &batch.states, &batch.actions, y)?;
    opt.step_net(critic, &grads)?;
    Ok(loss)
}

/// Regresses both critics onto the same targets.
pub fn critic_update(
    batch: &Batch,
    critics: [&mut DenseNet; 2],
    opts: [&mut AdamState; 2],
    target: &TargetEstimate,
) -> Result<(f64, f64)> {
    if target.y.len() != batch.len() {
        return Err(Error::Shape(format!("{} targets for a batch of {}", target.y.len(), batch.len())));
    }
    let [c1, c2] = critics;
    let [o1, o2] = opts;
    let y = target.y.as_slice();
    let l1 = critic_step(c1, o1, batch, y)?;
    let l2 = critic_step(c2, o2, batch, y)?;
    Ok((l1, l2))
}

/// Gradient ascent on `mean Q1(s, actor(s))`; only legal on steps that are
/// a multiple of `delay`. Returns the actor loss `-mean Q1`.
pub fn actor_update(
    batch: &Batch,
    actor: &mut DenseNet,
    critic1: &DenseNet,
    opt: &mut AdamState,
    critic_steps: u64,
    delay: usize,
) -> Result<f64> {
    if delay == 0 || critic_steps == 0 || !critic_steps.is_multiple_of(delay as u64) {
        return Err(Error::Schedule(format!(
            "actor update at critic step {critic_steps} with delay {delay}"
        )));
    }
    let (loss, grads) = actor_loss_gradient(actor, critic1, &batch.states)?;
    opt.step_net(actor, &grads)?;
    Ok(loss)
}

/// Actor loss `-mean Q1(s, softmax(actor(s)))` and its gradient in the
/// actor's parameters, taken through the critic and the softmax.
pub fn actor_loss_gradient(actor: &DenseNet, critic1: &DenseNet, states: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    let sd = states.ncols();
    let actor_tape = actor.forward_recorded(states)?;
    let critic_tape = critic1.forward_recorded(&critic_input(states, actor_tape.output()))?;
    let n = states.nrows() as f64;
    let loss = -critic_tape.output().sum() / n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("actor loss {loss}")));
    }
    let upstream = Array2::from_elem((states.nrows(), 1), -1.0 / n);
    let dq = critic1.backward(&critic_tape, &upstream)?;
    let dw = dq.input.slice(s![.., sd..]).to_owned();
    let da = softmax_backward(&project_rows(actor_tape.output()), &dw);
    let grads = actor.backward(&actor_tape, &da)?;
    Ok((loss, grads.params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
    pub critic1_target: DenseNet,
    pub critic2_target: DenseNet,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub rng: ChaCha8Rng,
    pub critic_steps: u64,
    pub actor_updates: u64,
    /// Batches where the twin minimum exceeded either critic's mean.
    pub target_sanity_violations: u64,
}

impl Td3Agent {
    pub fn new(state_dim: usize, action_dim: usize, config: Td3Config) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let actor = DenseNet::new(&[state_dim, h, h, action_dim], Head::Identity, &mut rng)?;
        let critic1 = DenseNet::new(&[state_dim + action_dim, h, h, 1], Head::Identity, &mut rng)?;
        let critic2 = DenseNet::new(&[state_dim + action_dim, h, h, 1], Head::Identity, &mut rng)?;
        Ok(Td3Agent {
            state_dim,
            action_dim,
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor_opt: AdamState::new(actor.n_params(), config.lr),
            critic1_opt: AdamState::new(critic1.n_params(), config.lr),
            critic2_opt: AdamState::new(critic2.n_params(), config.lr),
            actor,
            critic1,
            critic2,
            rng,
            critic_steps: 0,
            actor_updates: 0,
            target_sanity_violations: 0,
            config,
        })
    }

    /// Greedy logits.
    pub fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_row(observation)
    }

    /// Greedy logits plus exploration noise.
    pub fn explore(&mut self, observation: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.act(observation)?;
        if self.config.explore_noise > 0.0 {
            let normal = Normal::new(0.0, self.config.explore_noise).expect("validated");
            for v in &mut a {
                *v += normal.sample(&mut self.rng);
            }
        }
        Ok(a)
    }

    /// One critic update, plus the actor and target updates when due.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let c = &self.config;
        let target = compute_target(
            batch,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
            c.gamma,
            c.policy_noise,
            c.noise_clip,
            &mut self.rng,
        )?;
        let n = batch.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let min_mean = mean(&target.q1.iter().zip(&target.q2).map(|(a, b)| a.min(*b)).collect::<Vec<_>>());
        if min_mean > mean(&target.q1) || min_mean > mean(&target.q2) {
            self.target_sanity_violations += 1;
        }

        let (critic1_loss, critic2_loss) = critic_update(
            batch,
            [&mut self.critic1, &mut self.critic2],
            [&mut self.critic1_opt, &mut self.critic2_opt],
            &target,
        )?;
        self.critic_steps += 1;

        let mut actor_loss = None;
        if self.critic_steps.is_multiple_of(self.config.policy_delay as u64) {
            actor_loss = Some(actor_update(
                batch,
                &mut self.actor,
                &self.critic1,
                &mut self.actor_opt,
                self.critic_steps,
                self.config.policy_delay,
            )?);
            self.actor_updates += 1;
            let tau = self.config.tau;
            polyak_update(&mut self.actor_target, &self.actor, tau)?;
            polyak_update(&mut self.critic1_target, &self.critic1, tau)?;
            polyak_update(&mut self.critic2_target, &self.critic2, tau)?;
        }
        Ok(UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub episode_return: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub eval_nav: f64,
}

pub fn format_training_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,episode_return,critic1_loss,critic2_loss,eval_nav\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch, e.episode_return, e.critic1_loss, e.critic2_loss, e.eval_nav
        );
    }
    out
}

/// Everything needed to resume training or evaluate; the replay buffer is
/// not included and is refilled by a fresh warm-up episode on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Checkpoint {
    pub format: u32,
    pub epoch: usize,
    pub best_return: f64,
    pub agent: Td3Agent,
    pub log: Vec<EpochLog>,
}

impl Td3Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Td3Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Incompatible(format!(
                "{}: format {} (expected {CHECKPOINT_FORMAT})",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Fails unless the networks fit an environment of these dimensions.
    pub fn check_dims(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        let a = &self.agent;
        let ok = a.state_dim == state_dim
            && a.action_dim == action_dim
            && a.actor.input_dim() == state_dim
            && a.actor.output_dim() == action_dim
            && a.critic1.input_dim() == state_dim + action_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "checkpoint expects state {} / action {}, environment has {state_dim} / {action_dim}",
                a.state_dim, a.action_dim
            )))
        }
    }
}

/// Panel-day window of an episode: rebalances on `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    /// True when the two windows share a trading step; sharing only a
    /// boundary day does not count.
    pub fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Greedy evaluation window for `eval_nav`; the training window if unset.
    pub eval_window: Option<Window>,
    pub resume: Option<Td3Checkpoint>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: Td3Agent,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Plays one episode. With `buffer` set, logits carry exploration noise and
/// every transition is stored.
pub fn rollout(
    env: &mut PortfolioEnv<'_>,
    agent: &mut Td3Agent,
    window: Window,
    initial_value: f64,
    mut buffer: Option<&mut ReplayBuffer>,
) -> Result<Vec<StepInfo>> {
    let mut state = env.reset(window.start, window.end, initial_value)?;
    let mut steps = Vec::with_capacity(window.steps());
    loop {
        let obs = state.observation();
        let action = if buffer.is_some() {
            agent.explore(&obs)?
        } else {
            agent.act(&obs)?
        };
        let step = env.step(&action)?;
        if let Some(buf) = buffer.as_deref_mut() {
            buf.push(Transition {
                state: obs,
                action,
                reward: step.reward * agent.config.reward_scale,
                next_state: step.next_state.observation(),
                done: step.done,
            })?;
        }
        steps.push(step.info);
        state = step.next_state;
        if step.done {
            return Ok(steps);
        }
    }
}

fn final_growth(steps: &[StepInfo]) -> f64 {
    match (steps.first(), steps.last()) {
        (Some(a), Some(b)) => b.value_after / a.value_before,
        _ => 1.0,
    }
}

/// Trains on `window` for `config.epochs` epochs (or resumes a checkpoint).
pub fn train(env: &mut PortfolioEnv<'_>, window: Window, config: &Td3Config, options: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if window.steps() == 0 {
        return Err(Error::Config("training window must span at least one step".into()));
    }
    let (state_dim, action_dim) = (env.state_dim(), env.action_dim());
    let (mut agent, first_epoch, mut best, mut log) = match options.resume {
        Some(ckpt) => {
            ckpt.check_dims(state_dim, action_dim)?;
            let mut agent = ckpt.agent;
            agent.config.epochs = config.epochs;
            (agent, ckpt.epoch + 1, ckpt.best_return, ckpt.log)
        }
        None => (Td3Agent::new(state_dim, action_dim, config.clone())?, 1, f64::NEG_INFINITY, Vec::new()),
    };
    let episode_len = window.steps();
    let batch_size = config.batch_size.unwrap_or(episode_len);
    let mut buffer = ReplayBuffer::new(config.buffer_episodes * episode_len, config.seed ^ 0x5eed_b0ff)?;
    let eval_window = options.eval_window.unwrap_or(window);
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut checkpoints = Vec::new();
    let save = |agent: &Td3Agent, epoch: usize, best: f64, log: &[EpochLog], name: &str| -> Result<Option<PathBuf>> {
        let Some(dir) = &options.checkpoint_dir else {
            return Ok(None);
        };
        let path = dir.join(name);
        Td3Checkpoint {
            format: CHECKPOINT_FORMAT,
            epoch,
            best_return: best,
            agent: agent.clone(),
            log: log.to_vec(),
        }
        .save(&path)?;
        Ok(Some(path))
    };

    // Warm-up: fill the buffer before the first update.
    rollout(env, &mut agent, window, config.initial_value, Some(&mut buffer))?;
    while buffer.len() < batch_size {
        rollout(env, &mut agent, window, config.initial_value, Some(&mut buffer))?;
    }

    for epoch in first_epoch..=config.epochs {
        let steps = rollout(env, &mut agent, window, config.initial_value, Some(&mut buffer))?;
        let episode_return = final_growth(&steps) - 1.0;
        let (mut l1, mut l2) = (0.0, 0.0);
        for _ in 0..episode_len {
            let batch = buffer.sample(batch_size)?;
            let stats = agent.update(&batch)?;
            l1 += stats.critic1_loss;
            l2 += stats.critic2_loss;
        }
        let eval = rollout(env, &mut agent, eval_window, config.initial_value, None)?;
        log.push(EpochLog {
            epoch,
            episode_return,
            critic1_loss: l1 / episode_len as f64,
            critic2_loss: l2 / episode_len as f64,
            eval_nav: final_growth(&eval),
        });
        log::debug!("epoch {epoch}: return {episode_return:.5}, eval nav {:.5}", final_growth(&eval));

        if episode_return > best {
            best = episode_return;
            checkpoints.extend(save(&agent, epoch, best, &log, "best.json")?);
        }
        if epoch % config.checkpoint_every == 0 {
            checkpoints.extend(save(&agent, epoch, best, &log, &format!("epoch_{epoch:04}.json"))?);
        }
    }
    let last = log.last().map_or(first_epoch.saturating_sub(1), |e| e.epoch);
    checkpoints.extend(save(&agent, last, best, &log, "final.json")?);
    checkpoints.sort();
    checkpoints.dedup();
    Ok(TrainOutcome { agent, log, checkpoints })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: BacktestReport,
    pub steps: Vec<StepInfo>,
}

/// Greedy, noise-free roll-out of a frozen actor.
pub fn evaluate(actor: &DenseNet, env: &mut PortfolioEnv<'_>, window: Window, initial_value: f64) -> Result<Evaluation> {
    if actor.input_dim() != env.state_dim() || actor.output_dim() != env.action_dim() {
        return Err(Error::Incompatible(format!(
            "actor {:?} does not fit state {} / action {}",
            actor.widths(),
            env.state_dim(),
            env.action_dim()
        )));
    }
    let mut state = env.reset(window.start, window.end, initial_value)?;
    let mut steps = Vec::with_capacity(window.steps());
    loop {
        let step = env.step(&actor.forward_row(&state.observation())?)?;
        steps.push(step.info);
        state = step.next_state;
        if step.done {
            break;
        }
    }
    let end_date = env.panel().calendar()[window.end];
    let report = episode_report("td3", env.panel().tickers(), end_date, &steps)?;
    Ok(Evaluation { report, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn batch(states: Array2<f64>, actions: Array2<f64>, rewards: Vec<f64>, dones: Vec<f64>) -> Batch {
        Batch {
            next_states: states.clone(),
            states,
            actions,
            rewards,
            dones,
        }
    }

    /// A critic `[s, a] -> c` with all-zero weights and bias `c`.
    fn constant_critic(dim: usize, c: f64) -> DenseNet {
        let mut net = DenseNet::zeros(&[dim, 1], Head::Identity).unwrap();
        let mut p = vec![0.0; dim + 1];
        p[dim] = c;
        net.set_params(&p).unwrap();
        net
    }

    #[test]
    fn target_hand_values() {
        let actor = DenseNet::zeros(&[2, 1], Head::Identity).unwrap();
        let b = batch(array![[0.1, 0.2]], array![[0.0]], vec![0.0], vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = compute_target(&b, &actor, &constant_critic(3, 1.0), &constant_critic(3, 0.8), 0.99, 0.0, 0.5, &mut rng).unwrap();
        assert!((t.y[0] - 0.792).abs() < 1e-15);

        let done = batch(array![[0.1, 0.2]], array![[0.0]], vec![0.3], vec![1.0]);
        let t = compute_target(&done, &actor, &constant_critic(3, 5.0), &constant_critic(3, 7.0), 0.99, 0.2, 0.5, &mut rng).unwrap();
        assert_eq!(t.y, vec![0.3]);

        let same = compute_target(&b, &actor, &constant_critic(3, 2.0), &constant_critic(3, 2.0), 0.9, 0.0, 0.5, &mut rng).unwrap();
        assert!((same.y[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = smoothing_noise(200, 5, 0.2, 0.5, &mut rng);
        assert!(n.iter().all(|v| v.abs() <= 0.5));
        assert!(n.iter().any(|v| v.abs() == 0.5));
    }

    #[test]
    fn perfect_critic_has_zero_loss_and_no_change() {
        let mut critic = constant_critic(3, 0.25);
        let before = critic.clone();
        let mut opt = AdamState::new(critic.n_params(), 1e-3);
        let b = batch(array![[0.1, 0.2], [0.3, -0.1]], array![[1.0], [2.0]], vec![0.0, 0.0], vec![0.0, 0.0]);
        let loss = critic_step(&mut critic, &mut opt, &b, &[0.25, 0.25]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(critic.params(), before.params());
    }

    #[test]
    fn linear_critic_single_sample_step() {
        // Q = w . [s, a] + b; one Adam step from zero moments moves every
        // parameter by -lr * sign(grad).
        let mut critic = DenseNet::zeros(&[2, 1], Head::Identity).unwrap();
        critic.set_params(&[0.5, -0.5, 0.1]).unwrap();
        let mut opt = AdamState::new(3, 0.01);
        let b = batch(array![[2.0]], array![[1.0]], vec![0.0], vec![0.0]);
        // Q = 0.5*2 - 0.5*1 + 0.1 = 0.6, y = 1.0, dL/dQ = 2 * (0.6 - 1.0) = -0.8.
        let loss = critic_step(&mut critic, &mut opt, &b, &[1.0]).unwrap();
        assert!((loss - 0.16).abs() < 1e-15);
        let grads: [f64; 3] = [-0.8 * 2.0, -0.8 * 1.0, -0.8];
        let start = [0.5, -0.5, 0.1];
        for j in 0..3 {
            let step = 0.01 * grads[j] / (grads[j].abs() + 1e-8);
            assert!((critic.params()[j] - (start[j] - step)).abs() < 1e-15);
        }
    }

    #[test]
    fn actor_shifts_weight_toward_preferred_asset_and_critic_is_frozen() {
        // Q = w_0: the critic only values the first portfolio weight.
        let (sd, ad) = (2, 2);
        let mut critic = DenseNet::zeros(&[sd + ad, 1], Head::Identity).unwrap();
        let mut p = vec![0.0; critic.n_params()];
        p[sd] = 1.0;
        critic.set_params(&p).unwrap();
        let frozen = critic.clone();

        let mut actor = DenseNet::zeros(&[sd, ad], Head::Identity).unwrap();
        actor.set_params(&[0.0, 0.0, 0.0, 0.0, -0.8, 0.6]).unwrap();
        let mut opt = AdamState::new(actor.n_params(), 0.01);
        let b = batch(array![[0.0, 0.0], [0.0, 0.0]], array![[0.0, 0.0], [0.0, 0.0]], vec![0.0; 2], vec![0.0; 2]);
        let weight0 = |a: &DenseNet| sigfuse_core::env::project_action(&a.forward_row(&[0.0, 0.0]).unwrap()).unwrap()[0];
        let before = actor.forward_row(&[0.0, 0.0]).unwrap();
        let w_before = weight0(&actor);
        actor_update(&b, &mut actor, &critic, &mut opt, 2, 2).unwrap();
        let after = actor.forward_row(&[0.0, 0.0]).unwrap();
        // Adam moves each logit by lr against the sign of its gradient.
        assert!((after[0] - (before[0] + 0.01)).abs() < 1e-9);
        assert!((after[1] - (before[1] - 0.01)).abs() < 1e-9);
        assert!(weight0(&actor) > w_before);
        assert_eq!(critic, frozen);
        assert!(matches!(
            actor_update(&b, &mut actor, &critic, &mut opt, 3, 2),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn delay_two_gives_half_as_many_actor_updates() {
        let cfg = Td3Config {
            hidden: 4,
            ..Td3Config::default()
        };
        let mut agent = Td3Agent::new(3, 2, cfg).unwrap();
        let b = batch(
            array![[0.1, 0.2, 0.3], [0.0, -0.1, 0.5]],
            array![[0.5, -0.5], [0.1, 0.2]],
            vec![0.01, -0.02],
            vec![0.0, 1.0],
        );
        let mut actor_steps = 0;
        for _ in 0..10 {
            if agent.update(&b).unwrap().actor_loss.is_some() {
                actor_steps += 1;
            }
        }
        assert_eq!(actor_steps, 5);
        assert_eq!(agent.actor_updates, 5);
        assert_eq!(agent.target_sanity_violations, 0);
    }

    #[test]
    fn invalid_gamma_rejected() {
        let cfg = Td3Config {
            gamma: 1.5,
            ..Td3Config::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
