//! Gaussian policy head, clipped PPO surrogate and critic regression loss.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::net::Mlp;
use crate::error::{ArzError, Result};

pub const SIGMA_MIN: f64 = 0.02;
pub const SIGMA_MAX: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean and standard deviation per actuated boundary. The actor emits μ in its first
/// half of outputs and log σ in the second half.
pub fn policy_forward(actor: &Mlp, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = actor.forward(obs)?;
    let a = out.len() / 2;
    let mu = out[..a].to_vec();
    let sigma = out[a..]
        .iter()
        .map(|&z| z.exp().clamp(SIGMA_MIN, SIGMA_MAX))
        .collect();
    Ok((mu, sigma))
}

/// A draw from the policy: `drawn` is the raw Gaussian sample, `action` its clip to
/// [−1, 1], `log_prob` the Gaussian log-density of `drawn`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub drawn: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample_action(mu: &[f64], sigma: &[f64], rng: &mut impl Rng) -> ActionSample {
    let drawn: Vec<f64> = mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s * z
        })
        .collect();
    let action = drawn.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let log_prob = gaussian_log_prob(&drawn, mu, sigma);
    ActionSample {
        drawn,
        action,
        log_prob,
    }
}

pub fn gaussian_log_prob(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&x, &m), &s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// Samples for one actor update.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub obs: Array2<f64>,
    pub drawn: Array2<f64>,
    pub old_log_prob: Array1<f64>,
    pub advantages: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateStats {
    pub objective: f64,
    /// Fraction of samples whose clip is active.
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
}

/// Clipped surrogate (1/N) Σ min(r Â, clip(r, 1−ε, 1+ε) Â) and its gradient with respect
/// to the actor parameters (ascent direction).
pub fn surrogate_and_grad(
    actor: &Mlp,
    batch: &ActorBatch,
    clip: f64,
) -> Result<(SurrogateStats, Mlp)> {
    let n = batch.obs.nrows();
    let a = batch.drawn.ncols();
    let cache = actor.forward_batch(&batch.obs);
    let out = &cache.output;
    let mut d_out = Array2::zeros(out.raw_dim());
    let mut objective = 0.0;
    let mut clipped = 0usize;
    let mut max_dev: f64 = 0.0;
    for i in 0..n {
        let mut logp = 0.0;
        for j in 0..a {
            let mu = out[[i, j]];
            let z = out[[i, a + j]];
            let s = z.exp().clamp(SIGMA_MIN, SIGMA_MAX);
            let e = (batch.drawn[[i, j]] - mu) / s;
            logp += -0.5 * e * e - s.ln() - HALF_LN_2PI;
        }
        let ratio = (logp - batch.old_log_prob[i]).exp();
        if !ratio.is_finite() {
            return Err(ArzError::Training(format!(
                "non-finite probability ratio at sample {i} (log π = {logp}, old = {})",
                batch.old_log_prob[i]
            )));
        }
        max_dev = max_dev.max((ratio - 1.0).abs());
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_val = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        objective += unclipped.min(clipped_val);
        let active = (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
        if active {
            clipped += 1;
            continue;
        }
        // d/dθ (r Â) = r Â d log π
        let g = ratio * adv / n as f64;
        for j in 0..a {
            let mu = out[[i, j]];
            let z = out[[i, a + j]];
            let s = z.exp().clamp(SIGMA_MIN, SIGMA_MAX);
            let e = (batch.drawn[[i, j]] - mu) / s;
            d_out[[i, j]] = g * e / s;
            let dz = g * (e * e - 1.0);
            // one-sided: a clamped log σ may still move back into range
            let free = (z.exp() > SIGMA_MIN || dz > 0.0) && (z.exp() < SIGMA_MAX || dz < 0.0);
            if free {
                d_out[[i, a + j]] = dz;
            }
        }
    }
    let grad = actor.backward(&cache, &d_out);
    Ok((
        SurrogateStats {
            objective: objective / n as f64,
            clip_fraction: clipped as f64 / n as f64,
            max_ratio_deviation: max_dev,
        },
        grad,
    ))
}

/// Mean squared error (1/N) Σ (V(s) − R)² and its gradient.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    obs: &Array2<f64>,
    returns: &Array1<f64>,
) -> Result<(f64, Mlp)> {
    let n = obs.nrows() as f64;
    let cache = critic.forward_batch(obs);
    let mut d_out = Array2::zeros(cache.output.raw_dim());
    let mut loss = 0.0;
    for (i, r) in returns.iter().enumerate() {
        let diff = cache.output[[i, 0]] - r;
        loss += diff * diff;
        d_out[[i, 0]] = 2.0 * diff / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(ArzError::Training(format!("non-finite critic loss {loss}")));
    }
    Ok((loss, critic.backward(&cache, &d_out)))
}
