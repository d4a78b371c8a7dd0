//! Lyapunov-based boundary controllers behind one interface.

mod kernel;
mod pi;
mod stability;

pub use kernel::{backstepping_gains, GainTable, KERNEL_MAX_ITER, KERNEL_TOL};
pub use pi::{pi_command, tune_pi_gains, PiController, PiGains, PiIntegrators};
pub use stability::{check_stabilizing, linear_grid, StabilityReport, L2_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{equilibrium_velocity_slope, greenshields, linearize, ModelParams, SteadyState};
use crate::solver::{BoundaryCommand, Grid, TrafficState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Setpoint,
    Backstepping,
    P,
    Pi,
    RlPolicy,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Setpoint => "setpoint",
            ControllerKind::Backstepping => "backstepping",
            ControllerKind::P => "p",
            ControllerKind::Pi => "pi",
            ControllerKind::RlPolicy => "rl-policy",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = crate::error::ArzError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "setpoint" => ControllerKind::Setpoint,
            "backstepping" => ControllerKind::Backstepping,
            "p" => ControllerKind::P,
            "pi" => ControllerKind::Pi,
            "rl-policy" | "rl" => ControllerKind::RlPolicy,
            other => {
                return Err(crate::error::ArzError::Config(format!(
                    "unknown controller kind `{other}`"
                )))
            }
        })
    }
}

/// A boundary feedback law queried once per solver step with the full current state.
pub trait Controller: Send {
    fn kind(&self) -> ControllerKind;

    fn command(&mut self, observed: &TrafficState) -> Result<BoundaryCommand>;

    /// Clear internal memory (integrators) before a new rollout.
    fn reset(&mut self) {}
}

pub(crate) fn clamp_flow(q: f64, params: &ModelParams) -> f64 {
    q.clamp(0.0, params.capacity())
}

/// Constant inflow and outflow at q*.
pub fn setpoint_command(ss: &SteadyState) -> BoundaryCommand {
    BoundaryCommand::flows(ss.q_star, ss.q_star)
}

/// Collocated inlet law q* + g_P (v(0) − v*), g_P = ρ* + v*/V'(ρ*).
pub fn p_command(observed: &TrafficState, ss: &SteadyState, params: &ModelParams) -> BoundaryCommand {
    let inlet = ss.q_star + p_gain(ss, params) * (observed.v[0] - ss.v_star);
    BoundaryCommand::flows(clamp_flow(inlet, params), ss.q_star)
}

pub fn p_gain(ss: &SteadyState, params: &ModelParams) -> f64 {
    ss.rho_star + ss.v_star / equilibrium_velocity_slope(ss.rho_star, params)
}

/// Full-state outlet law
/// q* + ρ*∫c_v (v − v*) dξ + ∫c_q (q − q*) dξ + k_L·(v(L) − V(ρ(L))).
pub fn backstepping_command(
    observed: &TrafficState,
    table: &GainTable,
    ss: &SteadyState,
    grid: &Grid,
    params: &ModelParams,
) -> BoundaryCommand {
    let m = grid.m;
    let trap = |f: &dyn Fn(usize) -> f64| {
        let inner: f64 = (1..m - 1).map(f).sum();
        grid.dx * (inner + 0.5 * (f(0) + f(m - 1)))
    };
    let iv = trap(&|i| table.c_v[i] * (observed.v[i] - ss.v_star));
    let iq = trap(&|i| table.c_q[i] * (observed.rho[i] * observed.v[i] - ss.q_star));
    let w_out = observed.v[m - 1] - greenshields(observed.rho[m - 1], params);
    let outlet = ss.q_star + ss.rho_star * iv + iq + table.boundary_gain * w_out;
    BoundaryCommand::flows(ss.q_star, clamp_flow(outlet, params))
}

#[derive(Debug, Clone)]
pub struct SetpointController {
    pub ss: SteadyState,
}

impl Controller for SetpointController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Setpoint
    }

    fn command(&mut self, _observed: &TrafficState) -> Result<BoundaryCommand> {
        Ok(setpoint_command(&self.ss))
    }
}

#[derive(Debug, Clone)]
pub struct PController {
    pub ss: SteadyState,
    pub params: ModelParams,
}

impl Controller for PController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::P
    }

    fn command(&mut self, observed: &TrafficState) -> Result<BoundaryCommand> {
        Ok(p_command(observed, &self.ss, &self.params))
    }
}

#[derive(Debug, Clone)]
pub struct BacksteppingController {
    pub ss: SteadyState,
    pub params: ModelParams,
    pub grid: Grid,
    pub table: GainTable,
}

impl BacksteppingController {
    /// Builds the gain table for the assumed steady state on `grid`.
    pub fn new(ss: SteadyState, params: ModelParams, grid: Grid) -> Result<Self> {
        Self::with_point_feedback(ss, params, grid, true)
    }

    /// With `point_feedback = false` the outlet law keeps only the two integral terms.
    pub fn with_point_feedback(
        ss: SteadyState,
        params: ModelParams,
        grid: Grid,
        point_feedback: bool,
    ) -> Result<Self> {
        let mut table = backstepping_gains(&ss, &params, &grid)?;
        if !point_feedback {
            table.boundary_gain = 0.0;
        }
        Ok(Self {
            ss,
            params,
            grid,
            table,
        })
    }
}

impl Controller for BacksteppingController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Backstepping
    }

    fn command(&mut self, observed: &TrafficState) -> Result<BoundaryCommand> {
        if observed.len() != self.grid.m {
            return Err(crate::error::ArzError::Config(format!(
                "backstepping table has {} nodes, state has {}",
                self.grid.m,
                observed.len()
            )));
        }
        Ok(backstepping_command(
            observed,
            &self.table,
            &self.ss,
            &self.grid,
            &self.params,
        ))
    }
}

/// Per-kind settings for [`build_controller`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerOptions {
    /// Explicit PI gains; `None` runs [`tune_pi_gains`] on the linearized system.
    pub pi_gains: Option<PiGains>,
    /// Include the outlet term k_L·(v(L) − V(ρ(L))) in the backstepping law.
    pub outlet_point_feedback: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            pi_gains: None,
            outlet_point_feedback: true,
        }
    }
}

/// Builds a Lyapunov controller of the given kind for an assumed steady state.
pub fn build_controller(
    kind: ControllerKind,
    ss: SteadyState,
    params: ModelParams,
    grid: Grid,
    options: &ControllerOptions,
) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Setpoint => Box::new(SetpointController { ss }),
        ControllerKind::P => Box::new(PController { ss, params }),
        ControllerKind::Backstepping => Box::new(BacksteppingController::with_point_feedback(
            ss,
            params,
            grid,
            options.outlet_point_feedback,
        )?),
        ControllerKind::Pi => {
            let gains = match options.pi_gains {
                Some(g) => g,
                None => {
                    let lin = linearize(&ss, &params)?;
                    let lg = linear_grid(&lin, grid.dx, grid.horizon)?;
                    tune_pi_gains(&ss, &params, &lin, &lg)?.0
                }
            };
            Box::new(PiController::new(gains, ss, params, grid.dt))
        }
        ControllerKind::RlPolicy => {
            return Err(crate::error::ArzError::Config(
                "rl-policy controllers are built from a checkpoint".into(),
            ))
        }
    })
}
