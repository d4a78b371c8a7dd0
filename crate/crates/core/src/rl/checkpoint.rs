//! Policy checkpoints and their use as boundary controllers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::{
    map_action, observe, policy_input, Env, EnvConfig, GridSpec, Scheme, INPUT_DEVIATION_SCALE,
};
use super::net::{Mlp, SerialMlp};
use super::policy::policy_forward;
use crate::control::{Controller, ControllerKind};
use crate::error::{ArzError, Result};
use crate::io::write_string_atomic;
use crate::model::{make_steady_state, ModelParams, SteadyState};
use crate::solver::{BoundaryCommand, TrafficState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 2;

/// Observation scaling ρ/ρ_m and v/v_m, then the network input scale of
/// [`policy_input`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rho_m: f64,
    pub v_m: f64,
    pub deviation_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub scheme: Scheme,
    pub grid: GridSpec,
    pub params: ModelParams,
    pub normalization: Normalization,
    pub assumed_rho: f64,
    pub actor: SerialMlp,
    pub critic: SerialMlp,
    pub config_digest: String,
    pub seed: u64,
    /// Episodes of training behind these weights.
    pub episodes: usize,
}

impl Checkpoint {
    pub fn new(
        env: &EnvConfig,
        actor: &Mlp,
        critic: &Mlp,
        config_digest: String,
        seed: u64,
        episodes: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            scheme: env.scheme,
            grid: env.grid,
            params: env.params,
            normalization: Normalization {
                rho_m: env.params.rho_m,
                v_m: env.params.v_m,
                deviation_scale: INPUT_DEVIATION_SCALE,
            },
            assumed_rho: env.assumed_rho,
            actor: actor.to_serial(),
            critic: critic.to_serial(),
            config_digest,
            seed,
            episodes,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| ArzError::Config(format!("checkpoint encoding: {e}")))?;
        write_string_atomic(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ArzError::Config(format!("checkpoint {}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ArzError::Config(format!(
                "checkpoint format {} is not supported (expected {})",
                ck.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ck)
    }

    pub fn actor(&self) -> Result<Mlp> {
        Mlp::from_serial(&self.actor)
    }

    pub fn critic(&self) -> Result<Mlp> {
        Mlp::from_serial(&self.critic)
    }
}

/// Deterministic (mean-action) policy behind the [`Controller`] interface.
#[derive(Debug, Clone)]
pub struct RlController {
    pub scheme: Scheme,
    pub actor: Mlp,
    pub assumed: SteadyState,
    pub params: ModelParams,
    pub input_scale: f64,
}

impl RlController {
    /// Fails when the checkpoint was trained for another scheme.
    pub fn from_checkpoint(ck: &Checkpoint, scheme: Scheme) -> Result<Self> {
        if ck.scheme != scheme {
            return Err(ArzError::Config(format!(
                "checkpoint is for the {} scheme, {} requested",
                ck.scheme.name(),
                scheme.name()
            )));
        }
        Ok(Self {
            scheme,
            actor: ck.actor()?,
            assumed: make_steady_state(ck.assumed_rho, &ck.params)?,
            params: ck.params,
            input_scale: ck.normalization.deviation_scale,
        })
    }
}

/// Mean action of the policy, clipped to [−1, 1], mapped to boundary flows.
pub fn rl_command(
    actor: &Mlp,
    scheme: Scheme,
    assumed: &SteadyState,
    params: &ModelParams,
    input_scale: f64,
    observed: &TrafficState,
) -> Result<BoundaryCommand> {
    let input = policy_input(&observe(observed, params), assumed, params, input_scale);
    let (mu, _) = policy_forward(actor, &input)?;
    let action: Vec<f64> = mu.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
    map_action(scheme, &action, assumed, params)
}

impl Controller for RlController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::RlPolicy
    }

    fn command(&mut self, observed: &TrafficState) -> Result<BoundaryCommand> {
        rl_command(
            &self.actor,
            self.scheme,
            &self.assumed,
            &self.params,
            self.input_scale,
            observed,
        )
    }
}

/// Deterministic evaluation rollout.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cum_reward: f64,
    pub rewards: Vec<f64>,
    pub states: Vec<TrafficState>,
    pub commands: Vec<BoundaryCommand>,
    pub blow_up: Option<String>,
}

/// Runs the mean-action policy from amplitude 0.1 around steady density `rho_true`.
pub fn evaluate_policy(actor: &Mlp, env_config: &EnvConfig, rho_true: f64) -> Result<Evaluation> {
    let mut env = Env::new(env_config.clone())?;
    env.reset_to(rho_true, 0.1)?;
    let mut out = Evaluation {
        cum_reward: 0.0,
        rewards: Vec::with_capacity(env.steps_per_episode()),
        states: vec![env.state.clone()],
        commands: Vec::with_capacity(env.steps_per_episode()),
        blow_up: None,
    };
    while !env.is_done() {
        let input = env.policy_input(&observe(&env.state, &env_config.params));
        let (mu, _) = policy_forward(actor, &input)?;
        let action: Vec<f64> = mu.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
        let step = env.step(&action)?;
        out.rewards.push(step.reward);
        out.cum_reward += step.reward;
        out.commands.push(step.info.command);
        if let Some((msg, _)) = step.info.blow_up {
            out.blow_up = Some(msg);
        } else {
            out.states.push(env.state.clone());
        }
    }
    Ok(out)
}
