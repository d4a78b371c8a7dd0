//! Characteristic boundary closures for the congested regime.
//!
//! Inlet: the speed v rides the upstream-travelling characteristic, so it is copied
//! from node 1 and the commanded inflow fixes the density. Outlet: w = v − V(ρ) rides
//! the downstream-travelling characteristic, so it is copied from node M−2 and the
//! commanded outflow (or exit speed) fixes the density on the congested branch.

use super::{BoundaryCommand, Outlet, TrafficState};
use crate::error::{ArzError, Result};
use crate::model::{equilibrium_velocity_slope, greenshields, ModelParams};

/// Bracket margin away from 0 and ρ_m (veh/m).
pub const BOUNDARY_EPS: f64 = 1e-6;

/// Bisection for a monotone function on `[lo, hi]` that changes sign.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Density of the congested-branch solution of ρ (w + V(ρ)) = q.
pub(crate) fn congested_density_for_flow(w: f64, q: f64, params: &ModelParams) -> Option<f64> {
    let lo = BOUNDARY_EPS;
    let hi = params.rho_m - BOUNDARY_EPS;
    let slope = equilibrium_velocity_slope(0.0, params);
    // d/dρ [ρ (w + V(ρ))] = w + V(ρ) + ρ V'(ρ), decreasing for a concave flux
    let dflow = |r: f64| w + greenshields(r, params) + r * slope;
    let peak = if dflow(lo) <= 0.0 {
        lo
    } else if dflow(hi) >= 0.0 {
        return None;
    } else {
        bisect(lo, hi, dflow)?
    };
    bisect(peak, hi, |r| r * (w + greenshields(r, params)) - q)
}

/// Boundary node values `((ρ0, v0), (ρL, vL))` given updated interior nodes in `s`.
pub fn apply_boundary(
    s: &TrafficState,
    cmd: &BoundaryCommand,
    params: &ModelParams,
) -> Result<((f64, f64), (f64, f64))> {
    let m = s.len();
    let infeasible = |side: &'static str, reason: String| ArzError::BoundaryInfeasible {
        side,
        t: s.t,
        reason,
    };

    let v0 = s.v[1];
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(infeasible(
            "inlet",
            format!("extrapolated speed {v0} cannot carry inflow"),
        ));
    }
    let r0 = cmd.inlet / v0;
    if !(r0 > 0.0 && r0 <= params.rho_m) {
        return Err(infeasible(
            "inlet",
            format!(
                "inflow {} at speed {v0} needs density {r0} outside (0, ρ_m]",
                cmd.inlet
            ),
        ));
    }

    let i = m - 2;
    let w = s.v[i] - greenshields(s.rho[i], params);
    let rl = match cmd.outlet {
        Outlet::Flow(q) => congested_density_for_flow(w, q, params).ok_or_else(|| {
            infeasible(
                "outlet",
                format!("no congested density carries outflow {q} with w = {w}"),
            )
        })?,
        Outlet::Velocity(target) => bisect(BOUNDARY_EPS, params.rho_m - BOUNDARY_EPS, |r| {
            greenshields(r, params) - (target - w)
        })
        .ok_or_else(|| {
            infeasible(
                "outlet",
                format!("no density gives exit speed {target} with w = {w}"),
            )
        })?,
    };
    let vl = match cmd.outlet {
        Outlet::Velocity(target) => target,
        Outlet::Flow(_) => w + greenshields(rl, params),
    };
    Ok(((r0, v0), (rl, vl)))
}
