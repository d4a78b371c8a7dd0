//! Episodic MDP around the nonlinear solver.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ArzError, Result};
use crate::model::{make_steady_state, ModelParams, SteadyState};
use crate::solver::{lax_wendroff_step, make_grid, BoundaryCommand, Grid, TrafficState};

/// Which boundaries the agent actuates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Outlet,
    Inlet,
    Both,
}

impl Scheme {
    pub fn action_dim(&self) -> usize {
        match self {
            Scheme::Both => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Outlet => "outlet",
            Scheme::Inlet => "inlet",
            Scheme::Both => "both",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = ArzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outlet" => Ok(Scheme::Outlet),
            "inlet" => Ok(Scheme::Inlet),
            "both" => Ok(Scheme::Both),
            other => Err(ArzError::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Spacing and CFL data from which a [`Grid`] is built for a given horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub dx: f64,
    pub cfl_factor: f64,
    /// Wave-speed bound; `None` uses v_m.
    pub c_max: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dx: 10.0,
            cfl_factor: 0.8,
            c_max: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self, params: &ModelParams, horizon: f64) -> Result<Grid> {
        make_grid(
            params.length,
            horizon,
            self.dx,
            self.cfl_factor,
            self.c_max.unwrap_or(params.v_m),
        )
    }
}

/// Where the true steady density of an episode comes from (veh/m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensitySource {
    Fixed { rho: f64 },
    Uniform { values: Vec<f64> },
}

impl DensitySource {
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            DensitySource::Fixed { rho } => *rho,
            DensitySource::Uniform { values } => values[rng.random_range(0..values.len())],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            DensitySource::Fixed { rho } => vec![*rho],
            DensitySource::Uniform { values } => values.clone(),
        }
    }
}

/// How node deviations enter the reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardForm {
    /// Sum of squared relative deviations per node.
    #[default]
    PerCell,
    /// Square of the summed relative deviation; blind to deviations that cancel.
    SummedDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub scheme: Scheme,
    pub horizon: f64,
    pub grid: GridSpec,
    pub params: ModelParams,
    pub density: DensitySource,
    /// Nominal steady density used for action scaling and the unactuated boundary.
    pub assumed_rho: f64,
    pub gamma: f64,
    /// Randomize the initial amplitude in [0.05, 0.15] and its sign.
    pub randomize_initial: bool,
    #[serde(default)]
    pub reward_form: RewardForm,
}

impl EnvConfig {
    /// Full-knowledge setup around 120 veh/km on the default grid.
    pub fn reference(scheme: Scheme) -> Self {
        Self {
            scheme,
            horizon: 240.0,
            grid: GridSpec::default(),
            params: ModelParams::reference(),
            density: DensitySource::Fixed { rho: 0.12 },
            assumed_rho: 0.12,
            gamma: 0.99,
            randomize_initial: true,
            reward_form: RewardForm::PerCell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ArzError::Config(format!("γ = {} outside [0, 1]", self.gamma)));
        }
        let values = self.density.values();
        if values.is_empty() {
            return Err(ArzError::Config("empty steady-density set".into()));
        }
        for rho in values.into_iter().chain([self.assumed_rho]) {
            make_steady_state(rho, &self.params)?;
        }
        self.grid.build(&self.params, self.horizon)?;
        Ok(())
    }
}

/// ρ/ρ_m for every node, then v/v_m for every node.
pub fn observe(s: &TrafficState, params: &ModelParams) -> Vec<f64> {
    s.rho
        .iter()
        .map(|r| r / params.rho_m)
        .chain(s.v.iter().map(|v| v / params.v_m))
        .collect()
}

/// Relative deviation that maps to a unit network input, see [`policy_input`].
pub const INPUT_DEVIATION_SCALE: f64 = 0.1;

/// Network input for an [`observe`] vector: each entry's relative deviation from the
/// assumed steady state, divided by `scale`.
pub fn policy_input(obs: &[f64], assumed: &SteadyState, params: &ModelParams, scale: f64) -> Vec<f64> {
    let m = obs.len() / 2;
    let rho_c = assumed.rho_star / params.rho_m;
    let v_c = assumed.v_star / params.v_m;
    obs.iter()
        .enumerate()
        .map(|(i, o)| {
            let c = if i < m { rho_c } else { v_c };
            (o / c - 1.0) / scale
        })
        .collect()
}

/// −Σ((ρ_i − ρ*)/ρ*)² − Σ((v_i − v*)/v*)².
pub fn reward(s: &TrafficState, ss: &SteadyState) -> f64 {
    let dr: f64 = s
        .rho
        .iter()
        .map(|r| ((r - ss.rho_star) / ss.rho_star).powi(2))
        .sum();
    let dv: f64 = s
        .v
        .iter()
        .map(|v| ((v - ss.v_star) / ss.v_star).powi(2))
        .sum();
    -dr - dv
}

pub fn reward_with(form: RewardForm, s: &TrafficState, ss: &SteadyState) -> f64 {
    match form {
        RewardForm::PerCell => reward(s, ss),
        RewardForm::SummedDeviation => {
            let dr: f64 = s.rho.iter().map(|r| (r - ss.rho_star) / ss.rho_star).sum();
            let dv: f64 = s.v.iter().map(|v| (v - ss.v_star) / ss.v_star).sum();
            -dr * dr - dv * dv
        }
    }
}

/// q = q*_assumed (1 + 0.5 u), clamped to [0, q_cap]; unactuated boundaries stay at
/// q*_assumed.
pub fn map_action(
    scheme: Scheme,
    action: &[f64],
    assumed: &SteadyState,
    params: &ModelParams,
) -> Result<BoundaryCommand> {
    if action.len() != scheme.action_dim() {
        return Err(ArzError::Config(format!(
            "{} scheme takes {} action(s), got {}",
            scheme.name(),
            scheme.action_dim(),
            action.len()
        )));
    }
    let q = |u: f64| (assumed.q_star * (1.0 + 0.5 * u)).clamp(0.0, params.capacity());
    let (inlet, outlet) = match scheme {
        Scheme::Outlet => (assumed.q_star, q(action[0])),
        Scheme::Inlet => (q(action[0]), assumed.q_star),
        Scheme::Both => (q(action[0]), q(action[1])),
    };
    Ok(BoundaryCommand::flows(inlet, outlet))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub t: f64,
    pub command: BoundaryCommand,
    /// Solver failure that ended the episode, with the penalty it incurred.
    pub blow_up: Option<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Env {
    pub config: EnvConfig,
    pub grid: Grid,
    pub assumed: SteadyState,
    pub truth: SteadyState,
    pub state: TrafficState,
    step_index: usize,
    done: bool,
    worst_reward: f64,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid.build(&config.params, config.horizon)?;
        let assumed = make_steady_state(config.assumed_rho, &config.params)?;
        let truth = make_steady_state(config.density.values()[0], &config.params)?;
        let state = TrafficState::steady(&truth, &grid);
        Ok(Self {
            config,
            grid,
            assumed,
            truth,
            state,
            step_index: 0,
            done: true,
            worst_reward: 0.0,
        })
    }

    /// [`policy_input`] around this environment's assumed steady state.
    pub fn policy_input(&self, obs: &[f64]) -> Vec<f64> {
        policy_input(obs, &self.assumed, &self.config.params, INPUT_DEVIATION_SCALE)
    }

    pub fn observation_dim(&self) -> usize {
        2 * self.grid.m
    }

    pub fn steps_per_episode(&self) -> usize {
        self.grid.steps()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Draws the true steady state and the initial amplitude, then returns the first
    /// observation.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let rho = self.config.density.draw(rng);
        let amplitude = if self.config.randomize_initial {
            let a = rng.random_range(0.05..=0.15);
            if rng.random_bool(0.5) {
                -a
            } else {
                a
            }
        } else {
            0.1
        };
        self.reset_to(rho, amplitude)
    }

    /// Deterministic reset around steady density `rho` with a signed amplitude.
    pub fn reset_to(&mut self, rho: f64, amplitude: f64) -> Result<Vec<f64>> {
        self.truth = make_steady_state(rho, &self.config.params)?;
        self.state = TrafficState::sinusoidal(&self.truth, &self.grid, amplitude);
        self.state.check(&self.config.params)?;
        self.step_index = 0;
        self.done = false;
        self.worst_reward = reward_with(self.config.reward_form, &self.state, &self.truth);
        Ok(observe(&self.state, &self.config.params))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(ArzError::Usage("step called on a finished episode".into()));
        }
        let params = self.config.params;
        let command = map_action(self.config.scheme, action, &self.assumed, &params)?;
        let total = self.grid.steps();
        match lax_wendroff_step(&self.state, &command, &self.grid, &params) {
            Ok(next) => {
                self.state = next;
                self.step_index += 1;
                let r = reward_with(self.config.reward_form, &self.state, &self.truth);
                self.worst_reward = self.worst_reward.min(r);
                self.done = self.step_index >= total;
                Ok(StepOutcome {
                    observation: observe(&self.state, &params),
                    reward: r,
                    done: self.done,
                    info: StepInfo {
                        t: self.state.t,
                        command,
                        blow_up: None,
                    },
                })
            }
            Err(e) if e.is_numerical_failure() => {
                let remaining = (total - self.step_index) as f64;
                let penalty = self.worst_reward * remaining;
                self.done = true;
                Ok(StepOutcome {
                    observation: observe(&self.state, &params),
                    reward: penalty,
                    done: true,
                    info: StepInfo {
                        t: self.state.t + self.grid.dt,
                        command,
                        blow_up: Some((e.to_string(), penalty)),
                    },
                })
            }
            Err(e) => Err(e),
        }
    }
}
