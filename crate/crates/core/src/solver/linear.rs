//! First-order upwind simulation of the linearized system in Riemann coordinates.
//!
//! Each characteristic family is advanced on its own refinement of the output grid,
//! chosen so its Courant number is as close to one as the grid allows; on the default
//! setup (|λ2| = 2 λ1) both families then move exactly one fine cell per step and the
//! transport is free of numerical diffusion. The coupling source is integrated with the
//! trapezoid rule along the characteristic.
//!
//! Controllers are evaluated in small-signal form: the deviation fields are scaled by
//! [`SMALL_SIGNAL_SCALE`] around the steady state, handed to the controller as an
//! ordinary [`TrafficState`], and the command deviation is rescaled back. The command
//! applied at `t + dt` is computed from the state at `t + dt` after interior transport,
//! with the two incoming boundary values still at their previous values.

use super::{BoundaryCommand, Grid, Outlet, TrafficState};
use crate::control::Controller;
use crate::error::{ArzError, Result};
use crate::model::LinearCoeffs;

/// Amplitude used to present linear deviations to controllers.
pub const SMALL_SIGNAL_SCALE: f64 = 1e-5;

/// Deviation fields ρ̃, ṽ at every time node plus the commands applied.
#[derive(Debug, Clone)]
pub struct DeviationTrajectory {
    pub times: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub commands: Vec<BoundaryCommand>,
    pub grid: Grid,
    pub rho_star: f64,
    pub v_star: f64,
}

impl DeviationTrajectory {
    /// sqrt((‖ρ̃‖/ρ*)² + (‖ṽ‖/v*)²) with the discrete L2 norm (Σ f² Δx)^{1/2}.
    pub fn relative_l2(&self, k: usize) -> f64 {
        let dx = self.grid.dx;
        let sr: f64 = self.rho[k].iter().map(|r| r * r).sum::<f64>() * dx;
        let sv: f64 = self.v[k].iter().map(|v| v * v).sum::<f64>() * dx;
        (sr / (self.rho_star * self.rho_star) + sv / (self.v_star * self.v_star)).sqrt()
    }

    pub fn l2_series(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.relative_l2(k)).collect()
    }
}

/// One characteristic family on a refinement of the output grid.
struct Family {
    refine: usize,
    courant: f64,
    h: f64,
    values: Vec<f64>,
}

impl Family {
    fn new(speed: f64, grid: &Grid, coarse: &[f64]) -> Self {
        let base = speed.abs() * grid.dt / grid.dx;
        let refine = ((1.0 + 1e-9) / base).floor().max(1.0) as usize;
        let h = grid.dx / refine as f64;
        let values = (0..(grid.m - 1) * refine + 1)
            .map(|j| interp(coarse, grid.dx, j as f64 * h))
            .collect();
        Self {
            refine,
            courant: base * refine as f64,
            h,
            values,
        }
    }

    fn last(&self) -> usize {
        self.values.len() - 1
    }

    fn coarse(&self) -> Vec<f64> {
        self.values.iter().step_by(self.refine).copied().collect()
    }

    fn at(&self, x: f64) -> f64 {
        interp(&self.values, self.h, x)
    }
}

fn interp(values: &[f64], h: f64, x: f64) -> f64 {
    let s = (x / h).max(0.0);
    let i = (s.floor() as usize).min(values.len() - 1);
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let f = s - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

pub fn simulate_linear(
    rho_dev: &[f64],
    v_dev: &[f64],
    lin: &LinearCoeffs,
    controller: &mut dyn Controller,
    grid: &Grid,
) -> Result<DeviationTrajectory> {
    let m = grid.m;
    if rho_dev.len() != m || v_dev.len() != m {
        return Err(ArzError::Config("deviation fields do not match grid".into()));
    }
    let c1 = lin.lambda1 * grid.dt / grid.dx;
    let c2 = lin.lambda2.abs() * grid.dt / grid.dx;
    if c1 > 1.0 + 1e-12 || c2 > 1.0 + 1e-12 {
        return Err(ArzError::Config(format!(
            "CFL violated in linear simulation: Courant numbers {c1:.3}, {c2:.3}"
        )));
    }
    let (l1, l2, slope) = (lin.lambda1, lin.lambda2, lin.slope);
    let q_star = lin.rho_star * lin.v_star;
    let xs = grid.xs();
    let weight_out = lin.riemann_weight(grid.length);

    // u = exp(x/(τv*)) (ṽ − V' ρ̃)
    let u0: Vec<f64> = (0..m)
        .map(|i| lin.riemann_weight(xs[i]) * (v_dev[i] - slope * rho_dev[i]))
        .collect();
    let mut u = Family::new(l1, grid, &u0);
    let mut v = Family::new(l2, grid, v_dev);
    let v_nodes: Vec<f64> = (0..v.values.len()).map(|j| j as f64 * v.h).collect();
    let v_coupling: Vec<f64> = v_nodes.iter().map(|&x| lin.coupling(x)).collect();

    let deviations = |uc: &[f64], vc: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| (vc[i] - uc[i] / lin.riemann_weight(xs[i])) / slope)
            .collect()
    };

    let mut out = DeviationTrajectory {
        times: Vec::with_capacity(grid.n),
        rho: Vec::with_capacity(grid.n),
        v: Vec::with_capacity(grid.n),
        commands: Vec::with_capacity(grid.n - 1),
        grid: *grid,
        rho_star: lin.rho_star,
        v_star: lin.v_star,
    };
    out.times.push(0.0);
    out.rho.push(deviations(&u.coarse(), &v.coarse()));
    out.v.push(v.coarse());

    for step in 0..grid.n - 1 {
        let t_next = (step + 1) as f64 * grid.dt;
        let src_old: Vec<f64> = v_nodes
            .iter()
            .zip(&v_coupling)
            .map(|(&x, &c)| c * u.at(x))
            .collect();

        // rightward family
        let cu = u.courant;
        let mut un = u.values.clone();
        for j in 1..=u.last() {
            un[j] = u.values[j] - cu * (u.values[j] - u.values[j - 1]);
        }
        u.values = un;
        let src_new: Vec<f64> = v_nodes
            .iter()
            .zip(&v_coupling)
            .map(|(&x, &c)| c * u.at(x))
            .collect();

        // leftward family with the coupling integrated along the characteristic
        let cv = v.courant;
        let mut vn = v.values.clone();
        for j in 0..v.last() {
            let foot = (1.0 - cv) * src_old[j] + cv * src_old[j + 1];
            vn[j] = v.values[j]
                + cv * (v.values[j + 1] - v.values[j])
                + 0.5 * grid.dt * (foot + src_new[j]);
        }
        v.values = vn;

        let uc = u.coarse();
        let vc = v.coarse();
        let rho_c = deviations(&uc, &vc);
        let e = SMALL_SIGNAL_SCALE;
        let observed = TrafficState {
            rho: rho_c.iter().map(|r| lin.rho_star + e * r).collect(),
            v: vc.iter().map(|x| lin.v_star + e * x).collect(),
            t: t_next,
        };
        let cmd = controller.command(&observed).map_err(|err| ArzError::AtStep {
            step,
            source: Box::new(err),
        })?;

        // inlet: q̃ = ρ*ṽ + v*ρ̃  ⇒  w̃(0) = (λ2/λ1) ṽ(0) − (V'/λ1) q̃_in
        let inlet_dev = (cmd.inlet - q_star) / e;
        u.values[0] = (l2 / l1) * v.values[0] - (slope / l1) * inlet_dev;
        // outlet: ṽ(L) = (V'/λ2) q̃_out + (λ1/λ2) w̃(L), or the commanded exit speed
        let w_out = u.values[u.last()] / weight_out;
        let last = v.last();
        v.values[last] = match cmd.outlet {
            Outlet::Flow(q) => (slope / l2) * ((q - q_star) / e) + (l1 / l2) * w_out,
            Outlet::Velocity(speed) => (speed - lin.v_star) / e,
        };

        let uc = u.coarse();
        let vc = v.coarse();
        out.times.push(t_next);
        out.rho.push(deviations(&uc, &vc));
        out.v.push(vc);
        out.commands.push(cmd);
    }
    Ok(out)
}
