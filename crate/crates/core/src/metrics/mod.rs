//! Stabilization rewards and traffic performance indices over trajectories.
//!
//! Units follow the solver: ρ in veh/m, v in m/s, x in m, t in s. J_TTT is in veh·s,
//! J_fuel in liters and J_comfort in veh·m/s⁴·s (an aggregate, only its ratios matter).

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ArzError, Result};
use crate::io::{write_atomic, write_string_atomic};
use crate::model::SteadyState;
use crate::solver::format_sig;
use crate::solver::{TrafficState, Trajectory};


/// Fuel-rate coefficients: b₀ in l/s, b₁ in l/m, b₃ and b₄ in the matching units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Default for FuelCoefficients {
    fn default() -> Self {
        Self {
            b0: 25e-3,
            b1: 24.5e-6,
            b3: 32.5e-9,
            b4: 125e-6,
        }
    }
}

/// Relative L2 deviation below which a trajectory counts as settled.
pub const SETTLE_THRESHOLD: f64 = 1e-3;

/// Discrete L2 norms (Σ (·)² Δx)^{1/2} of ρ − ρ* and v − v*.
pub fn l2_deviation(s: &TrafficState, ss: &SteadyState, dx: f64) -> (f64, f64) {
    let sq = |it: &mut dyn Iterator<Item = f64>| (it.map(|d| d * d).sum::<f64>() * dx).sqrt();
    (
        sq(&mut s.rho.iter().map(|r| r - ss.rho_star)),
        sq(&mut s.v.iter().map(|v| v - ss.v_star)),
    )
}

/// Relative deviation (‖ρ̃‖/ρ* , ‖ṽ‖/v*) combined in quadrature.
fn relative_deviation(s: &TrafficState, ss: &SteadyState, dx: f64) -> f64 {
    let (r, v) = l2_deviation(s, ss, dx);
    (r / ss.rho_star).hypot(v / ss.v_star)
}

/// Per-step reward for steps 1..N (the state after every solver step):
/// −Σ((ρ_i − ρ*)/ρ*)² − Σ((v_i − v*)/v*)².
pub fn reward_series(traj: &Trajectory, ss: &SteadyState) -> Vec<f64> {
    traj.states[1..]
        .iter()
        .map(|s| {
            let mut acc = 0.0;
            for i in 0..s.len() {
                let dr = s.rho[i] / ss.rho_star - 1.0;
                let dv = s.v[i] / ss.v_star - 1.0;
                acc -= dr * dr + dv * dv;
            }
            acc
        })
        .collect()
}

/// Centered difference along one axis, one-sided first order at both ends.
fn diff(values: &[f64], coords: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == n - 1 => (n - 2, n - 1),
                k => (k - 1, k + 1),
            };
            (values[b] - values[a]) / (coords[b] - coords[a])
        })
        .collect()
}

fn times(traj: &Trajectory) -> Vec<f64> {
    traj.states.iter().map(|s| s.t).collect()
}

/// a = v_t + v v_x on every (time, node) pair, shape (N, M).
pub fn acceleration_field(traj: &Trajectory) -> Result<Array2<f64>> {
    let n = traj.states.len();
    if n < 2 {
        return Err(ArzError::InsufficientData(format!(
            "acceleration needs at least 2 time steps, got {n}"
        )));
    }
    let m = traj.states[0].len();
    if m < 2 {
        return Err(ArzError::InsufficientData(format!(
            "acceleration needs at least 2 nodes, got {m}"
        )));
    }
    let t = times(traj);
    let xs = traj.grid.xs();
    let mut a = Array2::zeros((n, m));
    for i in 0..m {
        let column: Vec<f64> = traj.states.iter().map(|s| s.v[i]).collect();
        for (k, vt) in diff(&column, &t).into_iter().enumerate() {
            a[[k, i]] = vt;
        }
    }
    for (k, s) in traj.states.iter().enumerate() {
        for (i, vx) in diff(&s.v, &xs).into_iter().enumerate() {
            a[[k, i]] += s.v[i] * vx;
        }
    }
    Ok(a)
}

/// Trapezoid weights for possibly nonuniform nodes.
fn trapezoid_weights(coords: &[f64]) -> Vec<f64> {
    let n = coords.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = coords[k + 1] - coords[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

fn integrate(traj: &Trajectory, f: impl Fn(usize, usize) -> f64) -> f64 {
    let wt = trapezoid_weights(&times(traj));
    let wx = trapezoid_weights(&traj.grid.xs());
    let mut total = 0.0;
    for (k, &a) in wt.iter().enumerate() {
        let row: f64 = wx.iter().enumerate().map(|(i, &b)| b * f(k, i)).sum();
        total += a * row;
    }
    total
}

/// Percent reduction of each index relative to a baseline; `None` where the baseline
/// index is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub ttt_pct: Option<f64>,
    pub fuel_pct: Option<f64>,
    pub comfort_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub j_ttt: f64,
    pub j_fuel: f64,
    pub j_comfort: f64,
    pub cum_reward: f64,
    /// First time the relative L2 deviation drops to [`SETTLE_THRESHOLD`].
    pub time_to_threshold: Option<f64>,
    pub improvement: Option<Improvement>,
}

/// Indices of one trajectory. `fuel_cubic` selects b₃v³ over the linear b₃v term.
pub fn perf_indices(
    traj: &Trajectory,
    ss: &SteadyState,
    fuel_cubic: bool,
    fuel: &FuelCoefficients,
) -> Result<PerfReport> {
    let a = acceleration_field(traj)?;
    let t = times(traj);
    let m = a.ncols();
    let mut a_t = Array2::zeros(a.raw_dim());
    for i in 0..m {
        let column: Vec<f64> = a.column(i).to_vec();
        for (k, d) in diff(&column, &t).into_iter().enumerate() {
            a_t[[k, i]] = d;
        }
    }
    let states = &traj.states;
    let j_ttt = integrate(traj, |k, i| states[k].rho[i]);
    let j_fuel = integrate(traj, |k, i| {
        let v = states[k].v[i];
        let third = if fuel_cubic { v * v * v } else { v };
        let rate = fuel.b0 + fuel.b1 * v + fuel.b3 * third + fuel.b4 * v * a[[k, i]];
        rate.max(0.0) * states[k].rho[i]
    });
    let j_comfort = integrate(traj, |k, i| {
        (a[[k, i]].powi(2) + a_t[[k, i]].powi(2)) * states[k].rho[i]
    });
    let dx = traj.grid.dx;
    let initial = relative_deviation(&states[0], ss, dx);
    let time_to_threshold = states
        .iter()
        .find(|s| relative_deviation(s, ss, dx) <= SETTLE_THRESHOLD * initial)
        .map(|s| s.t);
    Ok(PerfReport {
        j_ttt,
        j_fuel,
        j_comfort,
        cum_reward: reward_series(traj, ss).iter().sum(),
        time_to_threshold,
        improvement: None,
    })
}

/// 100 (baseline − candidate) / baseline per index.
pub fn compare_reports(candidate: &PerfReport, baseline: &PerfReport) -> Improvement {
    let pct = |c: f64, b: f64| (b != 0.0).then(|| 100.0 * (b - c) / b);
    Improvement {
        ttt_pct: pct(candidate.j_ttt, baseline.j_ttt),
        fuel_pct: pct(candidate.j_fuel, baseline.j_fuel),
        comfort_pct: pct(candidate.j_comfort, baseline.j_comfort),
    }
}

pub fn write_report_json(report: &PerfReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| ArzError::Config(format!("report encoding: {e}")))?;
    write_string_atomic(path, &text)
}

pub const REPORT_CSV_HEADER: &str = "scenario,controller,cum_reward,j_ttt_veh_s,j_fuel_l,j_comfort,time_to_threshold_s,ttt_improvement_pct,fuel_improvement_pct,comfort_improvement_pct";

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format_sig(v, 9)).unwrap_or_else(|| "undefined".into())
}

/// One table row; missing thresholds and undefined improvements render as `undefined`.
pub fn report_csv_row(scenario: &str, controller: &str, r: &PerfReport) -> String {
    let imp = r.improvement;
    format!(
        "{scenario},{controller},{},{},{},{},{},{},{},{}",
        format_sig(r.cum_reward, 9),
        format_sig(r.j_ttt, 9),
        format_sig(r.j_fuel, 9),
        format_sig(r.j_comfort, 9),
        opt_cell(r.time_to_threshold),
        opt_cell(imp.and_then(|i| i.ttt_pct)),
        opt_cell(imp.and_then(|i| i.fuel_pct)),
        opt_cell(imp.and_then(|i| i.comfort_pct)),
    )
}

pub fn write_report_table(rows: &[(String, String, PerfReport)], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        for (scenario, controller, r) in rows {
            writeln!(w, "{}", report_csv_row(scenario, controller, r))?;
        }
        Ok(())
    })
}

/// `step,t_s,reward,cum_reward` rows for steps 1..N.
pub fn write_reward_csv(traj: &Trajectory, ss: &SteadyState, path: &Path) -> Result<()> {
    let rewards = reward_series(traj, ss);
    write_atomic(path, |w| {
        writeln!(w, "step,t_s,reward,cum_reward")?;
        let mut cum = 0.0;
        for (k, r) in rewards.iter().enumerate() {
            cum += r;
            writeln!(
                w,
                "{},{},{},{}",
                k + 1,
                format_sig(traj.states[k + 1].t, 9),
                format_sig(*r, 12),
                format_sig(cum, 12)
            )?;
        }
        Ok(())
    })
}
