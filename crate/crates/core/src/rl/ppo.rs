//! Episode collection and PPO updates.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{evaluate_policy, Checkpoint};
use super::env::{Env, EnvConfig};
use super::net::{Adam, Mlp};
use super::policy::{critic_loss_and_grad, policy_forward, sample_action, surrogate_and_grad, ActorBatch};
use crate::error::{ArzError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Episodes collected per update.
    pub batch_episodes: usize,
    pub actor_epochs: usize,
    pub critic_epochs: usize,
    pub clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    /// Initial σ of the policy (log σ output bias).
    pub initial_sigma: f64,
    /// Decay both learning rates linearly to zero over the run.
    pub anneal_lr: bool,
    /// Episodes in the moving average that selects the best checkpoint.
    pub average_window: usize,
    pub seed: u64,
    /// Threads used for episode collection; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            batch_episodes: 8,
            actor_epochs: 10,
            critic_epochs: 10,
            clip: 0.2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            initial_sigma: 0.1,
            anneal_lr: true,
            average_window: 40,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ArzError::Config(m.to_string()));
        if self.batch_episodes == 0 || self.average_window == 0 {
            return bad("batch_episodes and average_window must be positive");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.initial_sigma > 0.0) {
            return bad("initial_sigma must be positive");
        }
        Ok(())
    }
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub drawn: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeBuffer {
    pub steps: Vec<Transition>,
    /// Index one past the last step of every episode.
    pub episode_ends: Vec<usize>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl EpisodeBuffer {
    pub fn push_episode(&mut self, steps: Vec<Transition>) {
        self.steps.extend(steps);
        self.episode_ends.push(self.steps.len());
    }

    /// Per-episode discounted returns followed by normalized R − V.
    pub fn finish(&mut self, gamma: f64) {
        let mut start = 0;
        self.returns.clear();
        for &end in &self.episode_ends {
            let rewards: Vec<f64> = self.steps[start..end].iter().map(|t| t.reward).collect();
            self.returns.extend(discounted_returns(&rewards, gamma));
            start = end;
        }
        let values: Vec<f64> = self.steps.iter().map(|t| t.value).collect();
        self.advantages = advantages(&self.returns, &values);
    }

    fn obs_matrix(&self) -> Array2<f64> {
        let d = self.steps.first().map(|t| t.obs.len()).unwrap_or(0);
        Array2::from_shape_fn((self.steps.len(), d), |(i, j)| self.steps[i].obs[j])
    }

    pub fn actor_batch(&self) -> ActorBatch {
        let a = self.steps.first().map(|t| t.drawn.len()).unwrap_or(0);
        ActorBatch {
            obs: self.obs_matrix(),
            drawn: Array2::from_shape_fn((self.steps.len(), a), |(i, j)| self.steps[i].drawn[j]),
            old_log_prob: self.steps.iter().map(|t| t.log_prob).collect(),
            advantages: Array1::from(self.advantages.clone()),
        }
    }
}

/// Running moments of the return targets. The critic regresses standardized returns;
/// [`ReturnScale::fold`] maps it back to raw value units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct ReturnScale {
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnScale {
    pub(crate) fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.count = total;
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    pub(crate) fn std(&self) -> f64 {
        if self.count == 0.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-8)
        }
    }

    pub(crate) fn standardize(&self, xs: &[f64]) -> Array1<f64> {
        let (m, s) = (self.mean(), self.std());
        xs.iter().map(|x| (x - m) / s).collect()
    }

    /// Copy of `critic` whose output is mean + std·output.
    pub(crate) fn fold(&self, critic: &Mlp) -> Mlp {
        let mut out = critic.clone();
        let last = out.layers.len() - 1;
        let s = self.std();
        out.layers[last].w.mapv_inplace(|w| w * s);
        out.layers[last].b.mapv_inplace(|b| b * s + self.mean);
        out
    }
}

/// R_t = r_t + γ R_{t+1}, by backward recursion.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Â = R − V, shifted to zero mean and scaled to unit variance (ε = 1e−8).
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    normalize(&raw)
}

pub fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var + 1e-8).sqrt();
    x.iter().map(|v| (v - mean) * scale).collect()
}

/// Full-batch descent on the squared-error value loss; returns the loss before each
/// epoch.
pub fn critic_update(
    critic: &mut Mlp,
    opt: &mut Adam,
    obs: &Array2<f64>,
    returns: &Array1<f64>,
    epochs: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = critic_loss_and_grad(critic, obs, returns)?;
        losses.push(loss);
        opt.step(critic, &grad);
    }
    Ok(losses)
}

/// Full-batch ascent on the clipped surrogate against the stored behaviour
/// log-probabilities; returns the surrogate before each epoch.
pub fn actor_update(
    actor: &mut Mlp,
    opt: &mut Adam,
    batch: &ActorBatch,
    clip: f64,
    epochs: usize,
) -> Result<Vec<f64>> {
    let mut objectives = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (stats, mut grad) = surrogate_and_grad(actor, batch, clip)?;
        if epoch == 0 && stats.max_ratio_deviation > 1e-12 {
            return Err(ArzError::Training(format!(
                "probability ratio deviates from 1 by {} before the first epoch",
                stats.max_ratio_deviation
            )));
        }
        objectives.push(stats.objective);
        for g in grad.params_mut() {
            *g = -*g;
        }
        opt.step(actor, &grad);
    }
    Ok(objectives)
}

/// Rolls out one stochastic episode.
pub fn collect_episode(
    env: &mut Env,
    actor: &Mlp,
    critic: &Mlp,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Transition>, f64)> {
    let first = env.reset(rng)?;
    let mut obs = env.policy_input(&first);
    let mut steps = Vec::with_capacity(env.steps_per_episode());
    let mut total = 0.0;
    while !env.is_done() {
        let (mu, sigma) = policy_forward(actor, &obs)?;
        let value = critic.forward(&obs)?[0];
        let sample = sample_action(&mu, &sigma, rng);
        let out = env.step(&sample.action)?;
        total += out.reward;
        steps.push(Transition {
            obs: std::mem::replace(&mut obs, env.policy_input(&out.observation)),
            drawn: sample.drawn,
            log_prob: sample.log_prob,
            reward: out.reward,
            value,
            done: out.done,
        });
    }
    Ok((steps, total))
}

/// One point of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub seed: u64,
    pub cum_reward: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Checkpoint at the best moving average of episode rewards.
    pub best_checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    /// Deterministic evaluation of the final policy at the environment's first density.
    pub final_evaluation: Option<f64>,
    /// Set when training stopped on non-finite parameters; checkpoints hold the last
    /// finite state.
    pub diverged: Option<String>,
}

/// SHA-256 of the JSON encoding of both configurations.
pub fn config_digest(env: &EnvConfig, cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(&(env, cfg)).expect("configs serialize");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    rng
}

/// PPO training loop. Every episode uses its own RNG stream derived from the seed, so
/// the learning curve is independent of `workers`.
pub fn train(env_config: &EnvConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    env_config.validate()?;
    cfg.validate()?;
    let probe = Env::new(env_config.clone())?;
    let obs_dim = probe.observation_dim();
    let a = env_config.scheme.action_dim();
    drop(probe);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dims = vec![obs_dim];
    dims.extend(&cfg.hidden);
    let mut actor_dims = dims.clone();
    actor_dims.push(2 * a);
    let mut critic_dims = dims;
    critic_dims.push(1);
    let mut actor = Mlp::new(&actor_dims, 0.01, &mut init_rng);
    let last = actor.layers.len() - 1;
    for j in 0..a {
        actor.layers[last].b[a + j] = cfg.initial_sigma.ln();
    }
    let mut critic = Mlp::new(&critic_dims, 1.0, &mut init_rng);
    let mut actor_opt = Adam::new(&actor, cfg.actor_lr);
    let mut critic_opt = Adam::new(&critic, cfg.critic_lr);

    let digest = config_digest(env_config, cfg);
    let snapshot = |actor: &Mlp, critic: &Mlp, episodes: usize| {
        Checkpoint::new(env_config, actor, critic, digest.clone(), cfg.seed, episodes)
    };
    let mut scale = ReturnScale::default();
    let mut best = snapshot(&actor, &scale.fold(&critic), 0);
    let mut best_avg = f64::NEG_INFINITY;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut diverged = None;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| ArzError::Config(format!("worker pool: {e}")))?;

    let mut episode = 0;
    while episode < cfg.episodes {
        let count = cfg.batch_episodes.min(cfg.episodes - episode);
        let ids: Vec<usize> = (episode..episode + count).collect();
        let value_net = scale.fold(&critic);
        let collect = |id: &usize| -> Result<(Vec<Transition>, f64)> {
            let mut env = Env::new(env_config.clone())?;
            let mut rng = episode_rng(cfg.seed, *id);
            collect_episode(&mut env, &actor, &value_net, &mut rng)
        };
        let results: Vec<Result<(Vec<Transition>, f64)>> = if cfg.workers > 1 {
            pool.install(|| ids.par_iter().map(collect).collect())
        } else {
            ids.iter().map(collect).collect()
        };
        let mut buffer = EpisodeBuffer::default();
        for (id, res) in ids.iter().zip(results) {
            let (steps, total) = res?;
            curve.push(CurvePoint {
                episode: id + 1,
                seed: cfg.seed,
                cum_reward: total,
            });
            buffer.push_episode(steps);
        }
        episode += count;
        buffer.finish(env_config.gamma);

        if cfg.anneal_lr {
            let frac = 1.0 - (episode - count) as f64 / cfg.episodes as f64;
            actor_opt.set_lr(cfg.actor_lr * frac);
            critic_opt.set_lr(cfg.critic_lr * frac);
        }
        let prev = (actor.clone(), critic.clone());
        let batch = buffer.actor_batch();
        let prev_scale = scale;
        scale.update(&buffer.returns);
        let returns = scale.standardize(&buffer.returns);
        let step = actor_update(&mut actor, &mut actor_opt, &batch, cfg.clip, cfg.actor_epochs)
            .and_then(|_| {
                critic_update(&mut critic, &mut critic_opt, &batch.obs, &returns, cfg.critic_epochs)
            });
        let failure = match step {
            Err(e) => Some(e.to_string()),
            Ok(_) if !actor.is_finite() || !critic.is_finite() => {
                Some(format!("non-finite parameters after episode {episode}"))
            }
            Ok(_) => None,
        };
        if let Some(msg) = failure {
            actor = prev.0;
            critic = prev.1;
            scale = prev_scale;
            diverged = Some(msg);
            break;
        }

        let window = cfg.average_window.min(curve.len());
        let avg = curve[curve.len() - window..]
            .iter()
            .map(|p| p.cum_reward)
            .sum::<f64>()
            / window as f64;
        if window == cfg.average_window.min(cfg.episodes) && avg > best_avg {
            best_avg = avg;
            best = snapshot(&actor, &scale.fold(&critic), episode);
        }
    }
    let critic = scale.fold(&critic);
    if best_avg == f64::NEG_INFINITY {
        best = snapshot(&actor, &critic, episode);
    }
    let final_checkpoint = snapshot(&actor, &critic, episode);
    let rho = match &env_config.density {
        super::env::DensitySource::Fixed { rho } => *rho,
        super::env::DensitySource::Uniform { values } => values[0],
    };
    let final_evaluation = evaluate_policy(&actor, env_config, rho)
        .ok()
        .map(|e| e.cum_reward);
    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint: best,
        curve,
        final_evaluation,
        diverged,
    })
}

/// Independent [`train`] runs, one per seed.
pub fn train_seeds(env_config: &EnvConfig, cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<TrainOutcome>> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            train(env_config, &cfg)
        })
        .collect()
}

/// Per-episode (min, mean, max) of cumulative reward across seeds.
pub fn curve_envelope(curves: &[Vec<CurvePoint>]) -> Vec<(usize, f64, f64, f64)> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let vals: Vec<f64> = curves.iter().map(|c| c[k].cum_reward).collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (curves[0][k].episode, min, mean, max)
        })
        .collect()
}
