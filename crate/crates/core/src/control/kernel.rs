//! Backstepping kernels and outlet gains.
//!
//! In Riemann coordinates (see [`LinearCoeffs`]) the Volterra transformation
//!
//! ```text
//! β(x) = ṽ(x) − ∫_0^x K(x,ξ) u(ξ) dξ − ∫_0^x F(x−ξ) ṽ(ξ) dξ
//! ```
//!
//! maps the plant onto β_t + λ2 β_x = 0, β(L) = 0 when, with μ = −λ2,
//!
//! ```text
//! μ K_x − λ1 K_ξ = c(ξ) F(x−ξ)          on 0 ≤ ξ ≤ x ≤ L
//! K(x,x)        = −c(x) / (λ1 + μ)
//! F(s)          = (λ1 r / μ) K(s, 0)
//! ```
//!
//! Integrating along the characteristics of the first equation from the diagonal turns
//! the trace g(s) = K(s,0) into a Volterra equation of the second kind, solved here by
//! successive approximation on a refined grid. K(L,·) then follows by one more
//! quadrature along each characteristic.

use serde::{Deserialize, Serialize};

use crate::error::{ArzError, Result};
use crate::model::{linearize, ModelParams, SteadyState};
use crate::solver::Grid;

/// Sup-norm tolerance of the successive approximation.
pub const KERNEL_TOL: f64 = 1e-10;
pub const KERNEL_MAX_ITER: usize = 200;

/// Outlet gains on the solver grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub xi: Vec<f64>,
    /// Gain on ṽ, multiplied by ρ* in the control law.
    pub c_v: Vec<f64>,
    /// Gain on q̃.
    pub c_q: Vec<f64>,
    /// K(L, ξ) in flow units.
    pub kernel_k: Vec<f64>,
    /// M(L − ξ) in flow units.
    pub kernel_m: Vec<f64>,
    /// Gain on w(L) = v(L) − V(ρ(L)), cancelling the outlet reflection.
    pub boundary_gain: f64,
    /// Fixed-point iterations used.
    pub iterations: usize,
}

fn trapezoid(h: f64, n: usize, f: impl Fn(usize) -> f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let inner: f64 = (1..n).map(&f).sum();
    h * (inner + 0.5 * (f(0) + f(n)))
}

pub fn backstepping_gains(ss: &SteadyState, params: &ModelParams, grid: &Grid) -> Result<GainTable> {
    let lin = linearize(ss, params)?;
    let l1 = lin.lambda1;
    let mu = -lin.lambda2;
    let r = lin.inlet_reflection;
    let length = grid.length;
    let cells = grid.m - 1;
    let refine = (2000 / cells).clamp(1, 8);
    let nf = cells * refine;
    let h = grid.dx / refine as f64;

    let a_coef = l1 / (l1 + mu);
    let beta = l1 * r / (mu * (l1 + mu));
    let c = |x: f64| lin.coupling(x);

    // g(x) = −c(a x)/(λ1+μ) + β ∫_0^x c(a (x − σ)) g(σ) dσ,  a = λ1/(λ1+μ)
    let lagged: Vec<f64> = (0..=nf).map(|j| c(a_coef * j as f64 * h)).collect();
    let forcing: Vec<f64> = lagged.iter().map(|cj| -cj / (l1 + mu)).collect();
    let mut g = forcing.clone();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < KERNEL_MAX_ITER {
        iterations += 1;
        let next: Vec<f64> = (0..=nf)
            .map(|k| forcing[k] + beta * trapezoid(h, k, |j| lagged[k - j] * g[j]))
            .collect();
        residual = next
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        g = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= KERNEL_TOL {
            break;
        }
    }
    if !(residual <= KERNEL_TOL) {
        return Err(ArzError::KernelConvergence {
            iterations,
            residual,
        });
    }

    // map Riemann-coordinate kernels to flow units: ρ* K_flow = (λ2/V') K
    let scale = lin.lambda2 / (lin.rho_star * lin.slope);
    let xi = grid.xs();
    let mut kernel_k = Vec::with_capacity(grid.m);
    let mut kernel_m = Vec::with_capacity(grid.m);
    for (j, &x) in xi.iter().enumerate() {
        let ns = (cells - j) * refine;
        let a = (l1 * length + mu * x) / (l1 + mu);
        let k_val =
            -c(a) / (l1 + mu) + beta * trapezoid(h, ns, |s| c(a - a_coef * s as f64 * h) * g[s]);
        let f_val = (l1 * r / mu) * g[ns];
        kernel_k.push(scale * k_val);
        kernel_m.push(scale * f_val);
    }
    let (l1s, l2s) = (ss.lambda1, ss.lambda2);
    let c_v = (0..grid.m)
        .map(|j| kernel_m[j] + (l2s / l1s) * kernel_k[j] * lin.riemann_weight(xi[j]))
        .collect();
    let c_q = (0..grid.m)
        .map(|j| ((l1s - l2s) / l1s) * kernel_k[j] * lin.riemann_weight(xi[j]))
        .collect();
    Ok(GainTable {
        xi,
        c_v,
        c_q,
        kernel_k,
        kernel_m,
        boundary_gain: -l1 / lin.slope,
        iterations,
    })
}
