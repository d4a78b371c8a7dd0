//! Python bindings: model constants, the nonlinear simulator, the controllers,
//! performance indices, the RL environment and PPO training.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use arz_core::control::{backstepping_gains as core_gains, build_controller, ControllerKind, ControllerOptions};
use arz_core::metrics::{perf_indices as core_perf, FuelCoefficients, PerfReport as CorePerf};
use arz_core::model::{self, ModelParams as CoreParams, SteadyState as CoreSteady};
use arz_core::rl::{self, DensitySource, EnvConfig, GridSpec, Scheme, TrainConfig};
use arz_core::solver::{make_grid as core_grid, simulate as core_simulate, Grid as CoreGrid, TrafficState, Trajectory as CoreTraj};
use arz_core::ArzError as CoreError;

create_exception!(arz, ArzError, PyException);

fn err(e: CoreError) -> PyErr {
    ArzError::new_err(e.to_string())
}

#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyModelParams {
    inner: CoreParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (v_m=40.0, rho_m=0.16, tau=60.0, length=500.0))]
    fn new(v_m: f64, rho_m: f64, tau: f64, length: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreParams::new(v_m, rho_m, tau, length).map_err(err)?,
        })
    }

    #[getter]
    fn v_m(&self) -> f64 {
        self.inner.v_m
    }

    #[getter]
    fn rho_m(&self) -> f64 {
        self.inner.rho_m
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length
    }

    fn capacity(&self) -> f64 {
        self.inner.capacity()
    }

    fn __repr__(&self) -> String {
        let p = self.inner;
        format!("ModelParams(v_m={}, rho_m={}, tau={}, length={})", p.v_m, p.rho_m, p.tau, p.length)
    }
}

fn params_or_default(p: Option<PyModelParams>) -> CoreParams {
    p.map(|p| p.inner).unwrap_or_else(CoreParams::reference)
}

#[pyclass(name = "SteadyState", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PySteadyState {
    inner: CoreSteady,
}

#[pymethods]
impl PySteadyState {
    #[getter]
    fn rho_star(&self) -> f64 {
        self.inner.rho_star
    }

    #[getter]
    fn v_star(&self) -> f64 {
        self.inner.v_star
    }

    #[getter]
    fn q_star(&self) -> f64 {
        self.inner.q_star
    }

    #[getter]
    fn lambda1(&self) -> f64 {
        self.inner.lambda1
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.inner.lambda2
    }

    fn __repr__(&self) -> String {
        let s = self.inner;
        format!(
            "SteadyState(rho_star={}, v_star={}, q_star={}, lambda1={}, lambda2={})",
            s.rho_star, s.v_star, s.q_star, s.lambda1, s.lambda2
        )
    }
}

/// Equilibrium at density `rho_star` (veh/m).
#[pyfunction]
#[pyo3(signature = (rho_star, params=None))]
fn steady_state(rho_star: f64, params: Option<PyModelParams>) -> PyResult<PySteadyState> {
    Ok(PySteadyState {
        inner: model::make_steady_state(rho_star, &params_or_default(params)).map_err(err)?,
    })
}

#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PyGrid {
    inner: CoreGrid,
}

#[pymethods]
impl PyGrid {
    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    fn xs(&self) -> Vec<f64> {
        self.inner.xs()
    }
}

#[pyfunction]
#[pyo3(signature = (length=500.0, horizon=240.0, dx=10.0, cfl_factor=0.8, c_max=40.0))]
fn make_grid(length: f64, horizon: f64, dx: f64, cfl_factor: f64, c_max: f64) -> PyResult<PyGrid> {
    Ok(PyGrid {
        inner: core_grid(length, horizon, dx, cfl_factor, c_max).map_err(err)?,
    })
}

fn grid_or_default(g: Option<PyGrid>) -> PyResult<CoreGrid> {
    match g {
        Some(g) => Ok(g.inner),
        None => core_grid(500.0, 240.0, 10.0, 0.8, 40.0).map_err(err),
    }
}

#[pyclass(name = "Trajectory", frozen)]
pub struct PyTrajectory {
    inner: CoreTraj,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.states.iter().map(|s| s.t).collect()
    }

    /// Density per time step and node (veh/m).
    #[getter]
    fn rho(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.rho.clone()).collect()
    }

    /// Speed per time step and node (m/s).
    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.v.clone()).collect()
    }

    /// (inlet flow, outlet value, outlet kind) per step.
    #[getter]
    fn commands(&self) -> Vec<(f64, f64, &'static str)> {
        self.inner
            .commands
            .iter()
            .map(|c| (c.inlet, c.outlet.value(), c.outlet.kind_name()))
            .collect()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.inner.grid }
    }

    fn __len__(&self) -> usize {
        self.inner.states.len()
    }
}

/// Closed-loop run from the sinusoidal initial condition around `rho_true`, with the
/// controller designed around `rho_assumed`.
#[pyfunction]
#[pyo3(signature = (kind, rho_true=0.12, rho_assumed=0.12, amplitude=0.1, params=None, grid=None, outlet_point_feedback=true))]
fn simulate(
    py: Python<'_>,
    kind: &str,
    rho_true: f64,
    rho_assumed: f64,
    amplitude: f64,
    params: Option<PyModelParams>,
    grid: Option<PyGrid>,
    outlet_point_feedback: bool,
) -> PyResult<PyTrajectory> {
    let kind: ControllerKind = kind.parse().map_err(err)?;
    let params = params_or_default(params);
    let grid = grid_or_default(grid)?;
    py.detach(|| {
        let truth = model::make_steady_state(rho_true, &params)?;
        let assumed = model::make_steady_state(rho_assumed, &params)?;
        let options = ControllerOptions {
            pi_gains: None,
            outlet_point_feedback,
        };
        let mut controller = build_controller(kind, assumed, params, grid, &options)?;
        let init = TrafficState::sinusoidal(&truth, &grid, amplitude);
        core_simulate(&init, controller.as_mut(), &grid, &params)
    })
    .map(|inner| PyTrajectory { inner })
    .map_err(err)
}

#[pyclass(name = "PerfReport", frozen)]
pub struct PyPerfReport {
    inner: CorePerf,
}

#[pymethods]
impl PyPerfReport {
    #[getter]
    fn j_ttt(&self) -> f64 {
        self.inner.j_ttt
    }

    #[getter]
    fn j_fuel(&self) -> f64 {
        self.inner.j_fuel
    }

    #[getter]
    fn j_comfort(&self) -> f64 {
        self.inner.j_comfort
    }

    #[getter]
    fn cum_reward(&self) -> f64 {
        self.inner.cum_reward
    }

    #[getter]
    fn time_to_threshold(&self) -> Option<f64> {
        self.inner.time_to_threshold
    }

    fn __repr__(&self) -> String {
        let r = &self.inner;
        format!(
            "PerfReport(cum_reward={:.4}, j_ttt={:.3}, j_fuel={:.4}, j_comfort={:.5})",
            r.cum_reward, r.j_ttt, r.j_fuel, r.j_comfort
        )
    }
}

#[pyfunction]
#[pyo3(signature = (trajectory, rho_true=0.12, params=None, fuel_cubic=true))]
fn perf_indices(
    trajectory: &PyTrajectory,
    rho_true: f64,
    params: Option<PyModelParams>,
    fuel_cubic: bool,
) -> PyResult<PyPerfReport> {
    let truth = model::make_steady_state(rho_true, &params_or_default(params)).map_err(err)?;
    core_perf(&trajectory.inner, &truth, fuel_cubic, &FuelCoefficients::default())
        .map(|inner| PyPerfReport { inner })
        .map_err(err)
}

/// Backstepping gain table as a dict of lists plus the outlet point gain.
#[pyfunction]
#[pyo3(signature = (rho_star=0.12, params=None, grid=None))]
fn backstepping_gains<'py>(
    py: Python<'py>,
    rho_star: f64,
    params: Option<PyModelParams>,
    grid: Option<PyGrid>,
) -> PyResult<Bound<'py, PyDict>> {
    let params = params_or_default(params);
    let ss = model::make_steady_state(rho_star, &params).map_err(err)?;
    let table = core_gains(&ss, &params, &grid_or_default(grid)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("xi", table.xi)?;
    d.set_item("c_v", table.c_v)?;
    d.set_item("c_q", table.c_q)?;
    d.set_item("boundary_gain", table.boundary_gain)?;
    Ok(d)
}

fn env_config(scheme: &str, horizon: f64, dx: f64, rho: Vec<f64>, assumed_rho: f64) -> PyResult<EnvConfig> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let density = match rho.as_slice() {
        [r] => DensitySource::Fixed { rho: *r },
        _ => DensitySource::Uniform { values: rho },
    };
    Ok(EnvConfig {
        horizon,
        grid: GridSpec {
            dx,
            ..GridSpec::default()
        },
        density,
        assumed_rho,
        ..EnvConfig::reference(scheme)
    })
}

/// Episodic environment: `reset` returns the observation, `step` returns
/// `(observation, reward, done)`.
#[pyclass(name = "Env", unsendable)]
pub struct PyEnv {
    inner: rl::Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (scheme="outlet", horizon=240.0, dx=10.0, rho=vec![0.12], assumed_rho=0.12))]
    fn new(scheme: &str, horizon: f64, dx: f64, rho: Vec<f64>, assumed_rho: f64) -> PyResult<Self> {
        let cfg = env_config(scheme, horizon, dx, rho, assumed_rho)?;
        Ok(Self {
            inner: rl::Env::new(cfg).map_err(err)?,
        })
    }

    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        self.inner.reset(&mut rng).map_err(err)
    }

    fn reset_to(&mut self, rho: f64, amplitude: f64) -> PyResult<Vec<f64>> {
        self.inner.reset_to(rho, amplitude).map_err(err)
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let out = self.inner.step(&action).map_err(err)?;
        Ok((out.observation, out.reward, out.done))
    }

    #[getter]
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    #[getter]
    fn steps_per_episode(&self) -> usize {
        self.inner.steps_per_episode()
    }
}

/// PPO training. Returns a dict with the learning curve, the deterministic final
/// evaluation and, when `checkpoint` is given, writes the final policy there.
#[pyfunction]
#[pyo3(signature = (scheme="outlet", episodes=200, seed=0, horizon=240.0, dx=25.0, rho=vec![0.12], checkpoint=None))]
fn train<'py>(
    py: Python<'py>,
    scheme: &str,
    episodes: usize,
    seed: u64,
    horizon: f64,
    dx: f64,
    rho: Vec<f64>,
    checkpoint: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let env = env_config(scheme, horizon, dx, rho, 0.12)?;
    let cfg = TrainConfig {
        episodes,
        seed,
        ..TrainConfig::default()
    };
    let out = py.detach(|| rl::train(&env, &cfg)).map_err(err)?;
    if let Some(path) = checkpoint {
        out.final_checkpoint.save(&path).map_err(err)?;
    }
    let d = PyDict::new(py);
    d.set_item("curve", out.curve.iter().map(|p| p.cum_reward).collect::<Vec<_>>())?;
    d.set_item("final_evaluation", out.final_evaluation)?;
    d.set_item("diverged", out.diverged)?;
    Ok(d)
}

#[pymodule]
fn arz(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ArzError", m.py().get_type::<ArzError>())?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySteadyState>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyPerfReport>()?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(make_grid, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(perf_indices, m)?)?;
    m.add_function(wrap_pyfunction!(backstepping_gains, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
