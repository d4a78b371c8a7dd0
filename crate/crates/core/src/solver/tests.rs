use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::control::{Controller, ControllerKind, SetpointController};
use crate::model::{linearize, make_steady_state};

fn fixture() -> ModelParams {
    ModelParams::reference()
}

fn no_relax() -> ModelParams {
    ModelParams {
        tau: f64::INFINITY,
        ..fixture()
    }
}

fn ss() -> SteadyState {
    make_steady_state(0.12, &fixture()).unwrap()
}

fn default_grid() -> Grid {
    make_grid(500.0, 240.0, 10.0, 0.8, 40.0).unwrap()
}

/// Replays a fixed command sequence.
struct Fixed(BoundaryCommand);

impl Controller for Fixed {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Setpoint
    }

    fn command(&mut self, _observed: &TrafficState) -> Result<BoundaryCommand> {
        Ok(self.0)
    }
}

#[test]
fn grid_examples() {
    let g = default_grid();
    assert_abs_diff_eq!(g.dt, 0.2, epsilon = 1e-12);
    assert_eq!((g.m, g.n), (51, 1201));
    let g = make_grid(500.0, 240.0, 10.0, 1.0, 40.0).unwrap();
    assert_abs_diff_eq!(g.dt, 0.25, epsilon = 1e-12);
    assert!(matches!(
        make_grid(500.0, 240.0, 10.0, 0.8, 0.0),
        Err(ArzError::Config(_))
    ));
    assert!(make_grid(500.0, 240.0, 7.0, 0.8, 40.0).is_err());
    assert!(make_grid(500.0, 240.0, 10.0, 1.5, 40.0).is_err());
}

#[test]
fn grid_rounds_dt_down_to_divisor() {
    let g = make_grid(500.0, 10.0, 10.0, 0.7, 40.0).unwrap();
    assert!(g.dt <= 0.7 * 10.0 / 40.0 + 1e-15);
    assert_abs_diff_eq!(g.dt * (g.n - 1) as f64, 10.0, epsilon = 1e-9);
    let h = g.with_horizon(20.0).unwrap();
    assert_eq!(h.n, 2 * (g.n - 1) + 1);
    assert!(g.with_horizon(0.05).is_err());
}

#[test]
fn conserved_examples() {
    let p = fixture();
    let c = to_conserved(&TrafficState::uniform(4, 0.12, 10.0), &p).unwrap();
    assert!(c.u2.iter().all(|&x| x.abs() < 1e-15));
    let c = to_conserved(&TrafficState::uniform(1, 0.12, 12.0), &p).unwrap();
    assert_abs_diff_eq!(c.u2[0], 0.24, epsilon = 1e-12);
    let back = from_conserved(&c, 0.0, &p).unwrap();
    assert_abs_diff_eq!(back.v[0], 12.0, epsilon = 1e-12);
    assert!(matches!(
        to_conserved(&TrafficState::uniform(2, 0.0, 10.0), &p),
        Err(ArzError::State(_))
    ));
    let bad = ConservedState {
        u1: vec![-0.1],
        u2: vec![0.0],
    };
    assert!(matches!(from_conserved(&bad, 0.0, &p), Err(ArzError::State(_))));
}

#[test]
fn flux_and_source_examples() {
    let p = fixture();
    let c = to_conserved(&TrafficState::uniform(3, 0.12, 10.0), &p).unwrap();
    let (f1, f2) = flux(&c, &p);
    for i in 0..3 {
        assert_abs_diff_eq!(f1[i], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f2[i], 0.0, epsilon = 1e-15);
    }
    let jam = to_conserved(&TrafficState::uniform(1, 0.16, 0.0), &p).unwrap();
    let (f1, f2) = flux(&jam, &p);
    assert_eq!((f1[0], f2[0]), (0.0, 0.0));

    let c = ConservedState {
        u1: vec![0.12],
        u2: vec![0.24],
    };
    let (s1, s2) = source(&c, &p);
    assert_eq!(s1[0], 0.0);
    assert_abs_diff_eq!(s2[0], -0.004, epsilon = 1e-15);
    assert_eq!(source(&c, &no_relax()).1[0], 0.0);
}

#[test]
fn flux_doubles_with_speed() {
    let p = fixture();
    let a = to_conserved(&TrafficState::uniform(1, 0.1, 5.0), &p).unwrap();
    let b = to_conserved(&TrafficState::uniform(1, 0.1, 10.0), &p).unwrap();
    assert_abs_diff_eq!(flux(&b, &p).0[0], 2.0 * flux(&a, &p).0[0], epsilon = 1e-14);
}

#[test]
fn steady_state_is_fixed_point() {
    let g = default_grid();
    let s0 = TrafficState::steady(&ss(), &g);
    let cmd = BoundaryCommand::flows(1.2, 1.2);
    let mut s = s0.clone();
    for _ in 0..1000 {
        s = lax_wendroff_step(&s, &cmd, &g, &fixture()).unwrap();
    }
    for i in 0..g.m {
        assert_abs_diff_eq!(s.rho[i], 0.12, epsilon = 1e-14);
        assert_abs_diff_eq!(s.v[i], 10.0, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(s.t, 200.0, epsilon = 1e-9);
}

#[test]
fn steady_rollout_stays_at_init() {
    let g = default_grid().with_horizon(20.0).unwrap();
    let init = TrafficState::steady(&ss(), &g);
    let mut ctrl = SetpointController { ss: ss() };
    let traj = simulate(&init, &mut ctrl, &g, &fixture()).unwrap();
    assert_eq!(traj.states.len(), g.n);
    assert_eq!(traj.commands.len(), g.n - 1);
    for s in &traj.states {
        for i in 0..g.m {
            assert_abs_diff_eq!(s.rho[i], 0.12, epsilon = 1e-13);
            assert_abs_diff_eq!(s.v[i], 10.0, epsilon = 1e-11);
        }
    }
}

#[test]
fn boundary_examples() {
    let p = fixture();
    let s = TrafficState::uniform(11, 0.12, 10.0);
    let ((r0, v0), (rl, vl)) = apply_boundary(&s, &BoundaryCommand::flows(1.2, 1.2), &p).unwrap();
    assert_abs_diff_eq!(r0, 0.12, epsilon = 1e-12);
    assert_abs_diff_eq!(v0, 10.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rl, 0.12, epsilon = 1e-9);
    assert_abs_diff_eq!(vl, 10.0, epsilon = 1e-6);

    let cmd = BoundaryCommand {
        inlet: 1.2,
        outlet: Outlet::Velocity(10.0),
    };
    let (_, (rl, vl)) = apply_boundary(&s, &cmd, &p).unwrap();
    assert_abs_diff_eq!(rl, 0.12, epsilon = 1e-9);
    assert_eq!(vl, 10.0);

    let ((r0, _), _) = apply_boundary(&s, &BoundaryCommand::flows(1.32, 1.2), &p).unwrap();
    assert!(r0 > 0.12);
    assert_abs_diff_eq!(r0, 0.132, epsilon = 1e-12);
}

/// Dense-scan root of ρ (w + V(ρ)) = q above the flow peak, refined by halving.
fn scan_root(w: f64, q: f64, p: &ModelParams) -> f64 {
    let f = |r: f64| r * (w + p.v_m * (1.0 - r / p.rho_m)) - q;
    let n = 200_000;
    let peak = (0..=n)
        .map(|k| k as f64 / n as f64 * p.rho_m)
        .max_by(|a, b| (f(*a)).partial_cmp(&f(*b)).unwrap())
        .unwrap();
    let (mut lo, mut hi) = (peak, p.rho_m);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn outlet_flow_root_matches_scan() {
    let p = fixture();
    for &(w, q) in &[(0.0, 1.32), (1.5, 1.0), (-2.0, 0.8), (0.5, 1.5)] {
        let mut s = TrafficState::uniform(5, 0.12, 10.0);
        s.v[3] = w + p.v_m * (1.0 - s.rho[3] / p.rho_m);
        let (_, (rl, vl)) = apply_boundary(&s, &BoundaryCommand::flows(1.2, q), &p).unwrap();
        assert_abs_diff_eq!(rl, scan_root(w, q, &p), epsilon = 1e-7);
        assert_abs_diff_eq!(rl * vl, q, epsilon = 1e-9);
    }
}

#[test]
fn outlet_flow_above_peak_is_infeasible() {
    let s = TrafficState::uniform(5, 0.12, 10.0);
    let err = apply_boundary(&s, &BoundaryCommand::flows(1.2, 1.7), &fixture()).unwrap_err();
    assert!(matches!(err, ArzError::BoundaryInfeasible { side: "outlet", .. }));
}

#[test]
fn large_inflow_is_reported() {
    let g = default_grid();
    let init = TrafficState::sinusoidal(&ss(), &g, 0.1);
    let mut ctrl = Fixed(BoundaryCommand::flows(12.0, 1.2));
    let err = simulate(&init, &mut ctrl, &g, &fixture()).unwrap_err();
    assert!(err.is_numerical_failure());
    assert!(matches!(err, ArzError::AtStep { step: 0, .. }));
}

#[test]
fn setpoint_keeps_oscillating() {
    let g = default_grid();
    let s = ss();
    let init = TrafficState::sinusoidal(&s, &g, 0.1);
    let traj = simulate(&init, &mut SetpointController { ss: s }, &g, &fixture()).unwrap();
    let l2 = |st: &TrafficState| {
        st.rho
            .iter()
            .zip(&st.v)
            .map(|(r, v)| ((r - 0.12) / 0.12).powi(2) + ((v - 10.0) / 10.0).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let ratio = l2(traj.states.last().unwrap()) / l2(&traj.states[0]);
    assert!(ratio > 0.25, "ratio {ratio}");
    assert_eq!(traj.cfl_exceedances, 0);
}

#[test]
fn rollouts_are_bit_identical() {
    let g = default_grid().with_horizon(40.0).unwrap();
    let s = ss();
    let init = TrafficState::sinusoidal(&s, &g, 0.1);
    let a = simulate(&init, &mut SetpointController { ss: s }, &g, &fixture()).unwrap();
    let b = simulate(&init, &mut SetpointController { ss: s }, &g, &fixture()).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!(x.rho.iter().zip(&y.rho).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(x.v.iter().zip(&y.v).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

/// L2 error of a Gaussian density bump carried at constant speed c = 10 m/s (τ = ∞).
fn advection_error(dx: f64) -> f64 {
    let p = no_relax();
    let horizon = 10.0;
    let g = make_grid(500.0, horizon, dx, 0.8, 40.0).unwrap();
    let c = 10.0;
    let bump = |x: f64| 0.10 + 0.02 * (-((x - 200.0) / 40.0).powi(2)).exp();
    let mut s = TrafficState {
        rho: g.xs().iter().map(|&x| bump(x)).collect(),
        v: vec![c; g.m],
        t: 0.0,
    };
    let q_edge = 0.10 * c;
    for _ in 0..g.n - 1 {
        s = lax_wendroff_step(&s, &BoundaryCommand::flows(q_edge, q_edge), &g, &p).unwrap();
    }
    let err: f64 = g
        .xs()
        .iter()
        .zip(&s.rho)
        .map(|(&x, &r)| (r - bump(x - c * horizon)).powi(2))
        .sum::<f64>()
        * g.dx;
    err.sqrt()
}

#[test]
fn second_order_convergence() {
    let errs: Vec<f64> = [10.0, 5.0, 2.5, 1.25].iter().map(|&dx| advection_error(dx)).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.4, "errors {errs:?}");
    }
}

#[test]
fn linear_zero_deviation_stays_zero() {
    let p = fixture();
    let s = ss();
    let lin = linearize(&s, &p).unwrap();
    let g = crate::control::linear_grid(&lin, 10.0, 30.0).unwrap();
    let zero = vec![0.0; g.m];
    let mut ctrl = crate::control::PController { ss: s, params: p };
    let tr = simulate_linear(&zero, &zero, &lin, &mut ctrl, &g).unwrap();
    assert!(tr.l2_series().iter().all(|&x| x.abs() < 1e-12));
}

#[test]
fn linear_rejects_cfl_violation() {
    let p = fixture();
    let s = ss();
    let lin = linearize(&s, &p).unwrap();
    let g = make_grid(500.0, 30.0, 10.0, 1.0, 10.0).unwrap();
    let zero = vec![0.0; g.m];
    let mut ctrl = SetpointController { ss: s };
    assert!(matches!(
        simulate_linear(&zero, &zero, &lin, &mut ctrl, &g),
        Err(ArzError::Config(_))
    ));
}

#[test]
fn csv_export_layout() {
    let g = default_grid().with_horizon(0.4).unwrap();
    let s = ss();
    let init = TrafficState::steady(&s, &g);
    let traj = simulate(&init, &mut SetpointController { ss: s }, &g, &fixture()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tp = dir.path().join("traj.csv");
    let cp = dir.path().join("cmd.csv");
    write_trajectory_csv(&traj, &tp).unwrap();
    write_commands_csv(&traj, &cp).unwrap();
    let t = std::fs::read_to_string(&tp).unwrap();
    let mut lines = t.lines();
    assert_eq!(lines.next().unwrap(), "step,t_s,node,x_m,rho_veh_per_km,v_km_per_h");
    assert_eq!(lines.next().unwrap(), "0,0,0,0,120,36");
    assert_eq!(t.lines().count(), 1 + 3 * 51);
    let c = std::fs::read_to_string(&cp).unwrap();
    let mut lines = c.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,t_s,inlet_flow_veh_per_h,outlet_kind,outlet_value"
    );
    assert_eq!(lines.next().unwrap(), "0,0,4320,flow,4320");
    assert!(!dir.path().join("traj.csv.partial").exists());
}

#[test]
fn significant_digit_formatting() {
    assert_eq!(format_sig(0.0, 9), "0");
    assert_eq!(format_sig(1.0 / 3.0, 9), "0.333333333");
    assert_eq!(format_sig(123456789012.0, 9), "1.23456789e11");
    assert_eq!(format_sig(-2.5e-7, 9), "-2.5e-7");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn interior_mass_balance(
        rho in prop::collection::vec(0.08f64..0.15, 21),
        dv in prop::collection::vec(-2.0f64..2.0, 21),
    ) {
        let p = no_relax();
        let v: Vec<f64> = rho.iter().zip(&dv).map(|(&r, &d)| greenshields(r, &p) + d).collect();
        let s = TrafficState { rho, v, t: 0.0 };
        let c = to_conserved(&s, &p).unwrap();
        let (dt, dx) = (0.2, 10.0);
        let upd = hyperbolic_update(&c, dt, dx, 0.0, &p).unwrap();
        let m = c.u1.len();
        let before: f64 = c.u1[1..m - 1].iter().sum::<f64>() * dx;
        let after: f64 = upd.conserved.u1[1..m - 1].iter().sum::<f64>() * dx;
        let expected = dt * (upd.inlet_flux - upd.outlet_flux);
        prop_assert!(((after - before) - expected).abs() <= 1e-10 * before);
    }

    #[test]
    fn conserved_round_trip(
        rho in prop::collection::vec(0.001f64..0.16, 8),
        v in prop::collection::vec(0.0f64..40.0, 8),
    ) {
        let p = fixture();
        let s = TrafficState { rho, v, t: 1.5 };
        let back = from_conserved(&to_conserved(&s, &p).unwrap(), 1.5, &p).unwrap();
        for i in 0..8 {
            prop_assert!((back.rho[i] - s.rho[i]).abs() <= 1e-15);
            prop_assert!((back.v[i] - s.v[i]).abs() <= 1e-12 * s.v[i].abs().max(1.0));
        }
    }
}
