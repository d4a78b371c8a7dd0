//! Nonlinear ARZ solver: Richtmyer two-step Lax-Wendroff in conserved variables with a
//! split relaxation source and characteristic boundary closures.

mod boundary;
mod export;
mod linear;

pub use boundary::{apply_boundary, BOUNDARY_EPS};
pub use export::{format_sig, write_commands_csv, write_trajectory_csv};
pub use linear::{simulate_linear, DeviationTrajectory, SMALL_SIGNAL_SCALE};

use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::error::{ArzError, Result};
use crate::model::{greenshields, ModelParams, SteadyState};

/// Uniform space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dx: f64,
    pub dt: f64,
    /// Spatial nodes, both boundary nodes included.
    pub m: usize,
    /// Temporal nodes.
    pub n: usize,
    pub length: f64,
    pub horizon: f64,
    /// Wave-speed bound used to pick `dt`.
    pub c_max: f64,
}

impl Grid {
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.x(i)).collect()
    }

    pub fn steps(&self) -> usize {
        self.n - 1
    }

    /// Same spacing, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Grid> {
        let steps = (horizon / self.dt).round();
        if steps < 1.0 || ((steps * self.dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(ArzError::Config(format!(
                "horizon {horizon} s is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(Grid {
            n: steps as usize + 1,
            horizon,
            ..*self
        })
    }
}

/// Pick the largest `dt ≤ cfl_factor·dx/c_max` dividing `horizon` exactly.
pub fn make_grid(length: f64, horizon: f64, dx: f64, cfl_factor: f64, c_max: f64) -> Result<Grid> {
    if !(cfl_factor > 0.0 && cfl_factor <= 1.0) {
        return Err(ArzError::Config(format!(
            "cfl_factor {cfl_factor} outside (0, 1]"
        )));
    }
    if !(c_max > 0.0 && c_max.is_finite()) {
        return Err(ArzError::Config(format!("c_max {c_max} must be positive")));
    }
    if !(dx > 0.0 && length > 0.0 && horizon > 0.0) {
        return Err(ArzError::Config("dx, length and horizon must be positive".into()));
    }
    let cells = length / dx;
    let cells_rounded = cells.round();
    if cells_rounded < 2.0 || (cells - cells_rounded).abs() > 1e-9 * cells {
        return Err(ArzError::Config(format!(
            "dx = {dx} does not divide L = {length} into an integer number of cells"
        )));
    }
    let dt_max = cfl_factor * dx / c_max;
    let steps = (horizon / dt_max * (1.0 - 1e-12)).ceil().max(1.0);
    Ok(Grid {
        dx: length / cells_rounded,
        dt: horizon / steps,
        m: cells_rounded as usize + 1,
        n: steps as usize + 1,
        length,
        horizon,
        c_max,
    })
}

/// Density and speed on the grid nodes at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl TrafficState {
    pub fn uniform(m: usize, rho: f64, v: f64) -> Self {
        Self {
            rho: vec![rho; m],
            v: vec![v; m],
            t: 0.0,
        }
    }

    pub fn steady(ss: &SteadyState, grid: &Grid) -> Self {
        Self::uniform(grid.m, ss.rho_star, ss.v_star)
    }

    /// ρ = ρ*(1 + a·sin(3πx/L)), v = v*(1 − a·sin(3πx/L)).
    pub fn sinusoidal(ss: &SteadyState, grid: &Grid, amplitude: f64) -> Self {
        let k = 3.0 * std::f64::consts::PI / grid.length;
        let (rho, v) = grid
            .xs()
            .into_iter()
            .map(|x| {
                let s = (k * x).sin();
                (
                    amplitude * s * ss.rho_star + ss.rho_star,
                    -amplitude * s * ss.v_star + ss.v_star,
                )
            })
            .unzip();
        Self { rho, v, t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn flow(&self, i: usize) -> f64 {
        self.rho[i] * self.v[i]
    }

    /// First violated physical bound, if any.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        for i in 0..self.len() {
            let (r, v) = (self.rho[i], self.v[i]);
            let reason = if !r.is_finite() || !v.is_finite() {
                Some(format!("non-finite state (rho = {r}, v = {v})"))
            } else if r <= 0.0 {
                Some(format!("nonpositive density {r}"))
            } else if r > params.rho_m {
                Some(format!("density {r} above jam density {}", params.rho_m))
            } else if v < 0.0 {
                Some(format!("negative speed {v}"))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(ArzError::BlowUp {
                    node: i,
                    t: self.t,
                    reason,
                });
            }
        }
        Ok(())
    }
}

/// u1 = ρ, u2 = ρ (v − V(ρ)).
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedState {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

pub fn to_conserved(s: &TrafficState, params: &ModelParams) -> Result<ConservedState> {
    if let Some(i) = s.rho.iter().position(|&r| !(r > 0.0)) {
        return Err(ArzError::State(format!(
            "nonpositive density {} at node {i}",
            s.rho[i]
        )));
    }
    let u2 = s
        .rho
        .iter()
        .zip(&s.v)
        .map(|(&r, &v)| r * (v - greenshields(r, params)))
        .collect();
    Ok(ConservedState {
        u1: s.rho.clone(),
        u2,
    })
}

pub fn from_conserved(c: &ConservedState, t: f64, params: &ModelParams) -> Result<TrafficState> {
    if let Some(i) = c.u1.iter().position(|&r| !(r > 0.0)) {
        return Err(ArzError::State(format!(
            "nonpositive density {} at node {i}",
            c.u1[i]
        )));
    }
    let v = c
        .u1
        .iter()
        .zip(&c.u2)
        .map(|(&u1, &u2)| u2 / u1 + greenshields(u1, params))
        .collect();
    Ok(TrafficState {
        rho: c.u1.clone(),
        v,
        t,
    })
}

#[inline]
fn flux_point(u1: f64, u2: f64, params: &ModelParams) -> (f64, f64) {
    let v = u2 / u1 + greenshields(u1, params);
    (u1 * v, u2 * v)
}

/// F1 = ρ v, F2 = ρ (v − V(ρ)) v per node.
pub fn flux(c: &ConservedState, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    c.u1.iter()
        .zip(&c.u2)
        .map(|(&u1, &u2)| flux_point(u1, u2, params))
        .unzip()
}

/// S1 ≡ 0, S2 = −u2/τ.
pub fn source(c: &ConservedState, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let s2 = if params.tau.is_infinite() {
        vec![0.0; c.u2.len()]
    } else {
        c.u2.iter().map(|&u2| -u2 / params.tau).collect()
    };
    (vec![0.0; c.u1.len()], s2)
}

/// Outlet actuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Outlet {
    /// Outflow ρ(L)v(L) in veh/s.
    Flow(f64),
    /// Exit speed v(L) in m/s.
    Velocity(f64),
}

impl Outlet {
    pub fn value(&self) -> f64 {
        match *self {
            Outlet::Flow(q) | Outlet::Velocity(q) => q,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Outlet::Flow(_) => "flow",
            Outlet::Velocity(_) => "velocity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCommand {
    /// Inflow ρ(0)v(0) in veh/s.
    pub inlet: f64,
    pub outlet: Outlet,
}

impl BoundaryCommand {
    pub fn flows(inlet: f64, outlet: f64) -> Self {
        Self {
            inlet,
            outlet: Outlet::Flow(outlet),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.inlet) || !ok(self.outlet.value()) {
            return Err(ArzError::Usage(format!("invalid boundary command {self:?}")));
        }
        Ok(())
    }
}

/// Conserved-variable update of the interior nodes.
#[derive(Debug, Clone)]
pub struct InteriorUpdate {
    pub conserved: ConservedState,
    /// Numerical F1 through the first interior interface (x = Δx/2).
    pub inlet_flux: f64,
    /// Numerical F1 through the last interior interface (x = L − Δx/2).
    pub outlet_flux: f64,
}

/// Richtmyer predictor/corrector on nodes 1..M−2, no source. Boundary nodes are copied
/// unchanged.
pub fn hyperbolic_update(
    c: &ConservedState,
    dt: f64,
    dx: f64,
    t: f64,
    params: &ModelParams,
) -> Result<InteriorUpdate> {
    let m = c.u1.len();
    let (f1, f2) = flux(c, params);
    let half = 0.5 * dt / dx;
    let mut g1 = Vec::with_capacity(m - 1);
    let mut g2 = Vec::with_capacity(m - 1);
    for i in 0..m - 1 {
        let h1 = 0.5 * (c.u1[i] + c.u1[i + 1]) - half * (f1[i + 1] - f1[i]);
        let h2 = 0.5 * (c.u2[i] + c.u2[i + 1]) - half * (f2[i + 1] - f2[i]);
        if !(h1 > 0.0) || !h2.is_finite() {
            return Err(ArzError::BlowUp {
                node: i,
                t,
                reason: format!("half-step density {h1} at interface {i}+1/2"),
            });
        }
        let (a, b) = flux_point(h1, h2, params);
        g1.push(a);
        g2.push(b);
    }
    let r = dt / dx;
    let mut u1 = c.u1.clone();
    let mut u2 = c.u2.clone();
    for i in 1..m - 1 {
        u1[i] = c.u1[i] - r * (g1[i] - g1[i - 1]);
        u2[i] = c.u2[i] - r * (g2[i] - g2[i - 1]);
    }
    Ok(InteriorUpdate {
        conserved: ConservedState { u1, u2 },
        inlet_flux: g1[0],
        outlet_flux: g1[m - 2],
    })
}

/// Advance one time step.
pub fn lax_wendroff_step(
    s: &TrafficState,
    cmd: &BoundaryCommand,
    grid: &Grid,
    params: &ModelParams,
) -> Result<TrafficState> {
    cmd.validate()?;
    let t_new = s.t + grid.dt;
    let c = to_conserved(s, params)?;
    let mut upd = hyperbolic_update(&c, grid.dt, grid.dx, s.t, params)?.conserved;
    if params.tau.is_finite() {
        let decay = 1.0 - grid.dt / params.tau;
        for u2 in upd.u2.iter_mut() {
            *u2 *= decay;
        }
    }
    let m = grid.m;
    let mut next = TrafficState {
        rho: upd.u1,
        v: vec![0.0; m],
        t: t_new,
    };
    for i in 1..m - 1 {
        let r = next.rho[i];
        if !(r > 0.0) {
            return Err(ArzError::BlowUp {
                node: i,
                t: t_new,
                reason: format!("nonpositive density {r}"),
            });
        }
        next.v[i] = upd.u2[i] / r + greenshields(r, params);
    }
    let ((r0, v0), (rl, vl)) = apply_boundary(&next, cmd, params)?;
    next.rho[0] = r0;
    next.v[0] = v0;
    next.rho[m - 1] = rl;
    next.v[m - 1] = vl;
    next.check(params)?;
    Ok(next)
}

/// Closed-loop rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<TrafficState>,
    pub commands: Vec<BoundaryCommand>,
    pub grid: Grid,
    /// Largest nonlinear characteristic speed seen, max(|v|, |v + ρV'|).
    pub max_wave_speed: f64,
    /// Steps whose wave speed exceeded `grid.c_max`.
    pub cfl_exceedances: usize,
}

pub(crate) fn max_wave_speed(s: &TrafficState, params: &ModelParams) -> f64 {
    let slope = crate::model::equilibrium_velocity_slope(0.0, params);
    s.rho
        .iter()
        .zip(&s.v)
        .map(|(&r, &v)| v.abs().max((v + r * slope).abs()))
        .fold(0.0, f64::max)
}

pub fn simulate(
    init: &TrafficState,
    controller: &mut dyn Controller,
    grid: &Grid,
    params: &ModelParams,
) -> Result<Trajectory> {
    if init.len() != grid.m {
        return Err(ArzError::Config(format!(
            "initial state has {} nodes, grid has {}",
            init.len(),
            grid.m
        )));
    }
    init.check(params)?;
    let mut states = Vec::with_capacity(grid.n);
    let mut commands = Vec::with_capacity(grid.n - 1);
    let mut state = init.clone();
    let mut max_speed = max_wave_speed(&state, params);
    let mut exceed = 0;
    for step in 0..grid.n - 1 {
        let cmd = controller
            .command(&state)
            .map_err(|e| wrap_step(step, e))?;
        let next = lax_wendroff_step(&state, &cmd, grid, params).map_err(|e| wrap_step(step, e))?;
        let speed = max_wave_speed(&next, params);
        if speed > grid.c_max {
            exceed += 1;
        }
        max_speed = max_speed.max(speed);
        states.push(std::mem::replace(&mut state, next));
        commands.push(cmd);
    }
    states.push(state);
    Ok(Trajectory {
        states,
        commands,
        grid: *grid,
        max_wave_speed: max_speed,
        cfl_exceedances: exceed,
    })
}

fn wrap_step(step: usize, e: ArzError) -> ArzError {
    ArzError::AtStep {
        step,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests;
