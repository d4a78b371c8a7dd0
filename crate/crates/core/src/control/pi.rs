//! Anti-collocated PI boundary feedback: inflow from the outlet density, exit speed from
//! the inlet speed.

use serde::{Deserialize, Serialize};

use super::{check_stabilizing, clamp_flow, Controller, ControllerKind};
use crate::error::Result;
use crate::model::{LinearCoeffs, ModelParams, SteadyState};
use crate::solver::{BoundaryCommand, Grid, Outlet, TrafficState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    /// Inlet proportional gain on ρ(L) − ρ* (veh/s per veh/m).
    pub kp_r: f64,
    /// Inlet integral gain (1/s scaling of `kp_r`).
    pub ki_r: f64,
    /// Outlet proportional gain on v(0) − v*.
    pub kp_v: f64,
    pub ki_v: f64,
    /// |I_r| limit (veh·s/m).
    pub windup_r: f64,
    /// |I_v| limit (m).
    pub windup_v: f64,
}

impl PiGains {
    /// Starting point of the tuning grid; integrators saturate at half the reference
    /// flow (inlet) and half the reference speed (outlet).
    pub fn defaults(ss: &SteadyState) -> Self {
        Self::with_windup(-0.5 * ss.v_star, -0.05 * ss.v_star, 0.5, 0.05, ss)
    }

    pub fn with_windup(kp_r: f64, ki_r: f64, kp_v: f64, ki_v: f64, ss: &SteadyState) -> Self {
        let lim = |k: f64, out: f64| if k == 0.0 { f64::INFINITY } else { out / k.abs() };
        Self {
            kp_r,
            ki_r,
            kp_v,
            ki_v,
            windup_r: lim(ki_r, 0.5 * ss.q_star),
            windup_v: lim(ki_v, 0.5 * ss.v_star),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PiIntegrators {
    pub rho: f64,
    pub v: f64,
}

/// One PI evaluation; returns the command and the advanced integrators.
pub fn pi_command(
    observed: &TrafficState,
    gains: &PiGains,
    ss: &SteadyState,
    params: &ModelParams,
    dt: f64,
    integ: PiIntegrators,
) -> (BoundaryCommand, PiIntegrators) {
    let m = observed.len();
    let e_r = observed.rho[m - 1] - ss.rho_star;
    let e_v = observed.v[0] - ss.v_star;
    let inlet = ss.q_star + gains.kp_r * e_r + gains.ki_r * integ.rho;
    let exit_speed = ss.v_star + gains.kp_v * e_v + gains.ki_v * integ.v;
    let next = PiIntegrators {
        rho: (integ.rho + dt * e_r).clamp(-gains.windup_r, gains.windup_r),
        v: (integ.v + dt * e_v).clamp(-gains.windup_v, gains.windup_v),
    };
    let cmd = BoundaryCommand {
        inlet: clamp_flow(inlet, params),
        outlet: Outlet::Velocity(exit_speed.clamp(0.0, params.v_m)),
    };
    (cmd, next)
}

#[derive(Debug, Clone)]
pub struct PiController {
    pub gains: PiGains,
    pub ss: SteadyState,
    pub params: ModelParams,
    pub dt: f64,
    pub integrators: PiIntegrators,
}

impl PiController {
    pub fn new(gains: PiGains, ss: SteadyState, params: ModelParams, dt: f64) -> Self {
        Self {
            gains,
            ss,
            params,
            dt,
            integrators: PiIntegrators::default(),
        }
    }
}

impl Controller for PiController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Pi
    }

    fn command(&mut self, observed: &TrafficState) -> Result<BoundaryCommand> {
        let (cmd, next) = pi_command(
            observed,
            &self.gains,
            &self.ss,
            &self.params,
            self.dt,
            self.integrators,
        );
        self.integrators = next;
        Ok(cmd)
    }

    fn reset(&mut self) {
        self.integrators = PiIntegrators::default();
    }
}

/// Multiplicative factors applied to each default gain on the tuning grid.
pub const PI_TUNING_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Grid search over the 5×5×5×5 log grid around [`PiGains::defaults`], ranking by
/// time-to-threshold, then by terminal L2 ratio, on the linearized system.
pub fn tune_pi_gains(
    ss: &SteadyState,
    params: &ModelParams,
    lin: &LinearCoeffs,
    grid: &Grid,
) -> Result<(PiGains, super::StabilityReport)> {
    let base = PiGains::defaults(ss);
    let mut best: Option<(PiGains, super::StabilityReport)> = None;
    for &fa in &PI_TUNING_FACTORS {
        for &fb in &PI_TUNING_FACTORS {
            for &fc in &PI_TUNING_FACTORS {
                for &fd in &PI_TUNING_FACTORS {
                    let gains = PiGains::with_windup(
                        base.kp_r * fa,
                        base.ki_r * fb,
                        base.kp_v * fc,
                        base.ki_v * fd,
                        ss,
                    );
                    let mut ctrl = PiController::new(gains, *ss, *params, grid.dt);
                    let report = check_stabilizing(&mut ctrl, lin, grid)?;
                    let better = match &best {
                        None => true,
                        Some((_, b)) => report.ranks_before(b),
                    };
                    if better {
                        best = Some((gains, report));
                    }
                }
            }
        }
    }
    Ok(best.expect("tuning grid is nonempty"))
}
