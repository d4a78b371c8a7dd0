//! Simulation-based stability check on the linearized plant.

use serde::{Deserialize, Serialize};

use super::{Controller, ControllerKind};
use crate::error::Result;
use crate::model::LinearCoeffs;
use crate::solver::{simulate_linear, Grid};

/// Relative L2 level counted as "converged".
pub const L2_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: ControllerKind,
    pub initial_l2: f64,
    pub terminal_l2: f64,
    pub terminal_ratio: f64,
    /// First time after which the L2 ratio stays at or below [`L2_THRESHOLD`].
    pub time_to_threshold: Option<f64>,
    /// Finite-time bound L/|λ1| + L/|λ2| + 2Δx/min|λ| for kinds that carry one.
    pub bound: Option<f64>,
    /// Peak L2 ratio per window of one transit time.
    pub window_peaks: Vec<f64>,
    pub monotone_envelope: bool,
    pub passed: bool,
}

impl StabilityReport {
    /// Tuning order: earlier threshold crossing first, then smaller terminal ratio.
    pub fn ranks_before(&self, other: &StabilityReport) -> bool {
        match (self.time_to_threshold, other.time_to_threshold) {
            (Some(a), Some(b)) if a != b => a < b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            _ => self.terminal_ratio < other.terminal_ratio,
        }
    }
}

/// Runs the linearized closed loop from the sinusoidal deviation profile
/// ρ̃ = 0.1 ρ* sin(3πx/L), ṽ = −0.1 v* sin(3πx/L).
pub fn check_stabilizing(
    controller: &mut dyn Controller,
    lin: &LinearCoeffs,
    grid: &Grid,
) -> Result<StabilityReport> {
    controller.reset();
    let k = 3.0 * std::f64::consts::PI / grid.length;
    let xs = grid.xs();
    let rho0: Vec<f64> = xs.iter().map(|&x| 0.1 * lin.rho_star * (k * x).sin()).collect();
    let v0: Vec<f64> = xs.iter().map(|&x| -0.1 * lin.v_star * (k * x).sin()).collect();
    let traj = simulate_linear(&rho0, &v0, lin, controller, grid)?;
    let l2 = traj.l2_series();
    let initial = l2[0];
    let ratios: Vec<f64> = l2.iter().map(|v| v / initial).collect();

    let mut time_to_threshold = None;
    for (i, r) in ratios.iter().enumerate().rev() {
        if *r > L2_THRESHOLD || !r.is_finite() {
            if i + 1 < ratios.len() {
                time_to_threshold = Some(traj.times[i + 1]);
            }
            break;
        }
        if i == 0 {
            time_to_threshold = Some(0.0);
        }
    }

    let window = lin.transit_time();
    let mut window_peaks = Vec::new();
    for (t, r) in traj.times.iter().zip(&ratios) {
        let w = (t / window).floor() as usize;
        let w = w.min(((grid.horizon / window).ceil() as usize).saturating_sub(1));
        if window_peaks.len() <= w {
            window_peaks.resize(w + 1, 0.0);
        }
        window_peaks[w] = f64::max(window_peaks[w], *r);
    }
    let monotone_envelope = window_peaks.windows(2).all(|p| p[1] < p[0]);

    let kind = controller.kind();
    let bound = match kind {
        ControllerKind::Backstepping | ControllerKind::P => Some(
            lin.transit_time() + 2.0 * grid.dx / lin.lambda1.abs().min(lin.lambda2.abs()),
        ),
        _ => None,
    };
    let terminal_ratio = *ratios.last().unwrap();
    let passed = match bound {
        Some(b) => time_to_threshold.is_some_and(|t| t <= b),
        None => monotone_envelope && terminal_ratio < 1.0,
    };
    Ok(StabilityReport {
        kind,
        initial_l2: initial,
        terminal_l2: *l2.last().unwrap(),
        terminal_ratio,
        time_to_threshold,
        bound,
        window_peaks,
        monotone_envelope,
        passed,
    })
}

/// Grid for the linear upwind scheme with Courant number one on the fastest
/// characteristic.
pub fn linear_grid(lin: &LinearCoeffs, dx: f64, horizon: f64) -> Result<Grid> {
    let c_max = lin.lambda1.abs().max(lin.lambda2.abs());
    crate::solver::make_grid(lin.length, horizon, dx, 1.0, c_max)
}
