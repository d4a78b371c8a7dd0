//! Physical parameters, the Greenshields fundamental diagram, reference states and the
//! linearization around them.
//!
//! All quantities are SI: density in veh/m, speed in m/s, flow in veh/s.

use serde::{Deserialize, Serialize};

use crate::error::{ArzError, Result};

/// Physical constants of the ARZ model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Free-flow speed (m/s).
    pub v_m: f64,
    /// Jam density (veh/m).
    pub rho_m: f64,
    /// Relaxation time (s).
    pub tau: f64,
    /// Segment length (m).
    pub length: f64,
}

impl ModelParams {
    pub fn new(v_m: f64, rho_m: f64, tau: f64, length: f64) -> Result<Self> {
        let p = Self {
            v_m,
            rho_m,
            tau,
            length,
        };
        p.validate()?;
        Ok(p)
    }

    /// 40 m/s, 160 veh/km, 60 s relaxation, 500 m segment.
    pub fn reference() -> Self {
        Self {
            v_m: 40.0,
            rho_m: 0.160,
            tau: 60.0,
            length: 500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // tau = +inf is allowed (no relaxation)
        let ok = |x: f64| x > 0.0 && !x.is_nan();
        if !(ok(self.v_m) && self.v_m.is_finite())
            || !(ok(self.rho_m) && self.rho_m.is_finite())
            || !ok(self.tau)
            || !(ok(self.length) && self.length.is_finite())
        {
            return Err(ArzError::Config(format!(
                "model parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Greenshields capacity v_m ρ_m / 4 (veh/s).
    pub fn capacity(&self) -> f64 {
        self.v_m * self.rho_m / 4.0
    }
}

/// Equilibrium speed V(ρ) = v_m (1 − ρ/ρ_m).
pub fn equilibrium_velocity(rho: f64, params: &ModelParams) -> Result<f64> {
    if !(0.0..=params.rho_m).contains(&rho) {
        return Err(ArzError::Domain(format!(
            "density {rho} outside [0, {}]",
            params.rho_m
        )));
    }
    Ok(greenshields(rho, params))
}

/// V(ρ) without the range check, for hot loops that validate states separately.
#[inline]
pub(crate) fn greenshields(rho: f64, params: &ModelParams) -> f64 {
    params.v_m * (1.0 - rho / params.rho_m)
}

/// V'(ρ), constant for the linear diagram.
pub fn equilibrium_velocity_slope(_rho: f64, params: &ModelParams) -> f64 {
    -params.v_m / params.rho_m
}

/// Uniform equilibrium and its two characteristic speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub rho_star: f64,
    pub v_star: f64,
    pub q_star: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn make_steady_state(rho_star: f64, params: &ModelParams) -> Result<SteadyState> {
    if !(rho_star > 0.0 && rho_star < params.rho_m) {
        return Err(ArzError::Domain(format!(
            "steady density {rho_star} outside (0, {})",
            params.rho_m
        )));
    }
    let v_star = equilibrium_velocity(rho_star, params)?;
    Ok(SteadyState {
        rho_star,
        v_star,
        q_star: rho_star * v_star,
        lambda1: v_star,
        lambda2: v_star + rho_star * equilibrium_velocity_slope(rho_star, params),
    })
}

/// Congested iff the second characteristic travels upstream.
pub fn is_congested(ss: &SteadyState) -> bool {
    ss.lambda2 < 0.0
}

/// Linearized system in Riemann coordinates.
///
/// With `w = v − V(ρ)` and `u = exp(x/(τ v*)) w̃`, the linearization around a
/// congested steady state reads
///
/// ```text
/// u_t + λ1 u_x = 0
/// ṽ_t + λ2 ṽ_x = c(x) u,        c(x) = −exp(−x/(τ v*)) / τ
/// u(0,t) = r ṽ(0,t) − (V'/λ1) Ũ_in(t),   r = λ2/λ1
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCoeffs {
    pub lambda1: f64,
    pub lambda2: f64,
    /// τ of the underlying model; `f64::INFINITY` disables the coupling.
    pub tau: f64,
    pub v_star: f64,
    pub rho_star: f64,
    /// V'(ρ*).
    pub slope: f64,
    /// Reflection of ṽ into u at the inlet under constant inflow.
    pub inlet_reflection: f64,
    pub length: f64,
}

impl LinearCoeffs {
    /// In-domain coupling c(x) from u into the ṽ equation.
    pub fn coupling(&self, x: f64) -> f64 {
        if self.tau.is_infinite() {
            return 0.0;
        }
        -(-x / (self.tau * self.v_star)).exp() / self.tau
    }

    /// exp(x/(τ v*)), the weight turning w̃ into u.
    pub fn riemann_weight(&self, x: f64) -> f64 {
        if self.tau.is_infinite() {
            1.0
        } else {
            (x / (self.tau * self.v_star)).exp()
        }
    }

    /// Finite-time convergence bound L/|λ1| + L/|λ2|.
    pub fn transit_time(&self) -> f64 {
        self.length / self.lambda1.abs() + self.length / self.lambda2.abs()
    }
}

pub fn linearize(ss: &SteadyState, params: &ModelParams) -> Result<LinearCoeffs> {
    if !is_congested(ss) {
        return Err(ArzError::UnsupportedRegime(format!(
            "steady state with λ2 = {} is not congested",
            ss.lambda2
        )));
    }
    Ok(LinearCoeffs {
        lambda1: ss.lambda1,
        lambda2: ss.lambda2,
        tau: params.tau,
        v_star: ss.v_star,
        rho_star: ss.rho_star,
        slope: equilibrium_velocity_slope(ss.rho_star, params),
        inlet_reflection: ss.lambda2 / ss.lambda1,
        length: params.length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> ModelParams {
        ModelParams::reference()
    }

    #[test]
    fn greenshields_endpoints() {
        let p = fixture();
        assert_eq!(equilibrium_velocity(0.0, &p).unwrap(), 40.0);
        assert_eq!(equilibrium_velocity(p.rho_m, &p).unwrap(), 0.0);
        assert!((equilibrium_velocity(0.120, &p).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            equilibrium_velocity(0.2, &p),
            Err(ArzError::Domain(_))
        ));
        assert!(equilibrium_velocity(-1e-9, &p).is_err());
    }

    #[test]
    fn slope_values() {
        let p = fixture();
        assert!((equilibrium_velocity_slope(0.1, &p) + 250.0).abs() < 1e-9);
        let p2 = ModelParams { rho_m: 0.320, ..p };
        assert!((equilibrium_velocity_slope(0.0, &p2) + 125.0).abs() < 1e-9);
        assert_eq!(
            equilibrium_velocity_slope(0.01, &p),
            equilibrium_velocity_slope(0.15, &p)
        );
    }

    #[test]
    fn reference_steady_state() {
        let ss = make_steady_state(0.120, &fixture()).unwrap();
        assert!((ss.v_star - 10.0).abs() < 1e-12);
        assert!((ss.lambda1 - 10.0).abs() < 1e-12);
        assert!((ss.lambda2 + 20.0).abs() < 1e-12);
        assert!((ss.q_star - 1.2).abs() < 1e-12);
        assert!(is_congested(&ss));
    }

    #[test]
    fn critical_density_is_not_congested() {
        let p = fixture();
        let ss = make_steady_state(p.rho_m / 2.0, &p).unwrap();
        assert!(ss.lambda2.abs() < 1e-12);
        let exact_zero = SteadyState {
            lambda2: 0.0,
            ..ss
        };
        assert!(!is_congested(&exact_zero));
        let light = make_steady_state(0.040, &p).unwrap();
        assert!((light.lambda2 - 20.0).abs() < 1e-12);
        assert!(!is_congested(&light));
        assert!(matches!(
            linearize(&light, &p),
            Err(ArzError::UnsupportedRegime(_))
        ));
    }

    #[test]
    fn steady_state_rejects_bounds() {
        let p = fixture();
        assert!(make_steady_state(0.0, &p).is_err());
        assert!(make_steady_state(p.rho_m, &p).is_err());
    }

    #[test]
    fn linearization_speeds_and_coupling() {
        let p = fixture();
        let ss = make_steady_state(0.120, &p).unwrap();
        let lin = linearize(&ss, &p).unwrap();
        assert_eq!((lin.lambda1, lin.lambda2), (ss.lambda1, ss.lambda2));
        assert!((lin.inlet_reflection + 2.0).abs() < 1e-12);
        assert!((lin.transit_time() - 75.0).abs() < 1e-12);
        assert!(lin.coupling(0.0) < 0.0);
        assert!(lin.coupling(500.0).abs() < lin.coupling(0.0).abs());

        let flat = linearize(&ss, &ModelParams { tau: 1e12, ..p }).unwrap();
        let c0 = flat.coupling(0.0);
        assert!(((flat.coupling(500.0) - c0) / c0).abs() < 1e-9);
    }

    #[test]
    fn velocity_strictly_decreasing_sweep() {
        let p = fixture();
        let v: Vec<f64> = (1..=100)
            .map(|i| equilibrium_velocity(p.rho_m * i as f64 / 101.0, &p).unwrap())
            .collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn congestion_matches_sign_test(frac in 0.001f64..0.999) {
            let p = fixture();
            let ss = make_steady_state(frac * p.rho_m, &p).unwrap();
            prop_assert_eq!(is_congested(&ss), ss.lambda2 < 0.0);
            prop_assert!((ss.q_star - ss.rho_star * ss.v_star).abs() < 1e-15);
            prop_assert_eq!(ss.v_star, equilibrium_velocity(ss.rho_star, &p).unwrap());
        }
    }
}
