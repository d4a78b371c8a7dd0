//! Scenario configuration and the experiment runs behind `arzctl`.
//!
//! A configuration is a TOML document with dotted sections (`model.v_m_mps = 40`).
//! Densities are given in veh/km, speeds in m/s, lengths in m and times in s. Every run
//! writes a `manifest.toml` that echoes the full configuration, so a manifest can be
//! passed back as `--config` to reproduce the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{backstepping_gains, build_controller, Controller, ControllerKind, ControllerOptions, PiGains};
use crate::error::{ArzError, Result};
use crate::io::{write_atomic, write_string_atomic};
use crate::metrics::{
    compare_reports, perf_indices, reward_series, write_report_json, write_report_table,
    write_reward_csv, FuelCoefficients, PerfReport,
};
use crate::model::{make_steady_state, ModelParams, SteadyState};
use crate::rl::{
    curve_envelope, train, Checkpoint, DensitySource, EnvConfig, GridSpec, RewardForm, RlController,
    Scheme, TrainConfig, TrainOutcome,
};
use crate::solver::{format_sig, simulate, write_commands_csv, write_trajectory_csv, Grid, TrafficState, Trajectory};


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub v_m_mps: f64,
    pub rho_m_veh_per_km: f64,
    pub tau_s: f64,
    pub length_m: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            v_m_mps: 40.0,
            rho_m_veh_per_km: 160.0,
            tau_s: 60.0,
            length_m: 500.0,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            v_m: self.v_m_mps,
            rho_m: self.rho_m_veh_per_km / 1000.0,
            tau: self.tau_s,
            length: self.length_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dx_m: f64,
    pub cfl_factor: f64,
    /// Wave-speed bound for the time step; defaults to v_m.
    pub c_max_mps: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dx_m: 10.0,
            cfl_factor: 0.8,
            c_max_mps: None,
        }
    }
}

impl GridSection {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dx: self.dx_m,
            cfl_factor: self.cfl_factor,
            c_max: self.c_max_mps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// Steady density the controllers are designed around.
    pub assumed_rho_veh_per_km: f64,
    /// Steady density of the simulated road.
    pub true_rho_veh_per_km: f64,
    /// Densities drawn uniformly per training episode.
    pub training_rho_veh_per_km: Vec<f64>,
    /// Relative amplitude of the sinusoidal initial condition.
    pub initial_amplitude: f64,
    pub randomize_initial: bool,
    pub reward_form: RewardForm,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            assumed_rho_veh_per_km: 120.0,
            true_rho_veh_per_km: 120.0,
            training_rho_veh_per_km: vec![120.0],
            initial_amplitude: 0.1,
            randomize_initial: true,
            reward_form: RewardForm::PerCell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    /// Backstepping only: keep the k_L·w(L) outlet term.
    pub outlet_point_feedback: bool,
    /// PI only: explicit gains; tuned automatically when absent.
    pub pi: Option<PiGains>,
    /// RL only.
    pub scheme: Scheme,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Backstepping,
            outlet_point_feedback: true,
            pi: None,
            scheme: Scheme::Outlet,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// b₃ multiplies v³ rather than v.
    pub fuel_cubic: bool,
    pub fuel: FuelCoefficients,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            fuel_cubic: true,
            fuel: FuelCoefficients::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub seeds: Vec<u64>,
    pub gamma: f64,
    #[serde(flatten)]
    pub ppo: TrainConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3],
            gamma: 0.99,
            ppo: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub label: String,
    #[serde(flatten)]
    pub controller: ControllerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Label of the run every other run is measured against.
    pub baseline: String,
    pub runs: Vec<CompareRun>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            baseline: "setpoint".into(),
            runs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub horizon_s: f64,
    pub model: ModelSection,
    pub grid: GridSection,
    pub scenario: DensitySection,
    pub controller: ControllerSection,
    pub metrics: MetricsSection,
    pub training: TrainingSection,
    pub compare: CompareSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "full_knowledge".into(),
            horizon_s: 240.0,
            model: ModelSection::default(),
            grid: GridSection::default(),
            scenario: DensitySection::default(),
            controller: ControllerSection::default(),
            metrics: MetricsSection::default(),
            training: TrainingSection::default(),
            compare: CompareSection::default(),
        }
    }
}

/// veh/km to veh/m.
fn per_m(rho_veh_per_km: f64) -> f64 {
    rho_veh_per_km / 1000.0
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| ArzError::Config(e.to_string()))?;
        // a run manifest nests the configuration under `config`
        let value = match value.get("config") {
            Some(toml::Value::Table(t)) if value.contains_key("manifest_version") => t.clone(),
            _ => value,
        };
        value
            .try_into()
            .map_err(|e: toml::de::Error| ArzError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ArzError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| ArzError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative checkpoint paths relative to the configuration file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |c: &mut ControllerSection| {
            if let Some(p) = &c.checkpoint {
                if p.is_relative() {
                    c.checkpoint = Some(base.join(p));
                }
            }
        };
        fix(&mut self.controller);
        for run in &mut self.compare.runs {
            fix(&mut run.controller);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid.spec().build(&self.params(), self.horizon_s)
    }

    pub fn assumed(&self) -> Result<SteadyState> {
        make_steady_state(per_m(self.scenario.assumed_rho_veh_per_km), &self.params())
    }

    pub fn truth(&self) -> Result<SteadyState> {
        make_steady_state(per_m(self.scenario.true_rho_veh_per_km), &self.params())
    }

    pub fn env_config(&self) -> EnvConfig {
        let rhos: Vec<f64> = self.scenario.training_rho_veh_per_km.iter().map(|&r| per_m(r)).collect();
        let density = match rhos.as_slice() {
            [rho] => DensitySource::Fixed { rho: *rho },
            _ => DensitySource::Uniform { values: rhos },
        };
        EnvConfig {
            scheme: self.controller.scheme,
            horizon: self.horizon_s,
            grid: self.grid.spec(),
            params: self.params(),
            density,
            assumed_rho: per_m(self.scenario.assumed_rho_veh_per_km),
            gamma: self.training.gamma,
            randomize_initial: self.scenario.randomize_initial,
            reward_form: self.scenario.reward_form,
        }
    }

    pub fn train_config(&self, seed: u64, workers: usize) -> TrainConfig {
        TrainConfig {
            seed,
            workers,
            ..self.training.ppo.clone()
        }
    }

    /// Every problem found, reported together before anything runs.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut note = |r: Result<()>| {
            match r {
                Ok(()) => {}
                Err(ArzError::Config(m)) => problems.push(m),
                Err(e) => problems.push(e.to_string()),
            }
        };
        let params = self.params();
        note(params.validate());
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            note(Err(ArzError::Config(format!("horizon_s = {} must be positive", self.horizon_s))));
        }
        if params.validate().is_ok() {
            note(self.assumed().map(drop));
            note(self.truth().map(drop));
            for &r in &self.scenario.training_rho_veh_per_km {
                note(make_steady_state(per_m(r), &params).map(drop));
            }
            if self.horizon_s > 0.0 {
                note(self.grid().map(drop));
            }
        }
        if self.scenario.training_rho_veh_per_km.is_empty() {
            note(Err(ArzError::Config("scenario.training_rho_veh_per_km is empty".into())));
        }
        let amp = self.scenario.initial_amplitude;
        if !(0.0..1.0).contains(&amp.abs()) {
            note(Err(ArzError::Config(format!("initial_amplitude = {amp} must lie in (-1, 1)"))));
        }
        if !(0.0..=1.0).contains(&self.training.gamma) {
            note(Err(ArzError::Config(format!("training.gamma = {} outside [0, 1]", self.training.gamma))));
        }
        note(self.training.ppo.validate());
        if self.training.seeds.is_empty() {
            note(Err(ArzError::Config("training.seeds is empty".into())));
        }
        note(check_controller(&self.controller, "controller"));
        if !self.compare.runs.is_empty() {
            let mut labels: Vec<&str> = self.compare.runs.iter().map(|r| r.label.as_str()).collect();
            labels.sort();
            if labels.windows(2).any(|w| w[0] == w[1]) {
                note(Err(ArzError::Config("compare.runs labels must be unique".into())));
            }
            if !labels.contains(&self.compare.baseline.as_str()) {
                note(Err(ArzError::Config(format!(
                    "compare.baseline `{}` is not among the runs",
                    self.compare.baseline
                ))));
            }
            for run in &self.compare.runs {
                note(check_controller(&run.controller, &format!("compare run `{}`", run.label)));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ArzError::Config(problems.join("; ")))
        }
    }

    pub fn digest(&self) -> String {
        hex_sha256(self.to_toml().as_bytes())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_controller(c: &ControllerSection, what: &str) -> Result<()> {
    if c.kind != ControllerKind::RlPolicy {
        return Ok(());
    }
    let Some(path) = &c.checkpoint else {
        return Err(ArzError::Config(format!("{what}: rl-policy needs a checkpoint")));
    };
    if !path.is_file() {
        return Err(ArzError::Config(format!(
            "{what}: checkpoint {} does not exist",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    if ck.scheme != c.scheme {
        return Err(ArzError::Config(format!(
            "{what}: checkpoint {} is for the {} scheme, {} configured",
            path.display(),
            ck.scheme.name(),
            c.scheme.name()
        )));
    }
    Ok(())
}

/// Controller for a configured section, designed around the assumed steady state.
pub fn make_controller(cfg: &ScenarioConfig, c: &ControllerSection) -> Result<Box<dyn Controller>> {
    if c.kind == ControllerKind::RlPolicy {
        let path = c
            .checkpoint
            .as_ref()
            .ok_or_else(|| ArzError::Config("rl-policy needs a checkpoint".into()))?;
        let ck = Checkpoint::load(path)?;
        return Ok(Box::new(RlController::from_checkpoint(&ck, c.scheme)?));
    }
    let options = ControllerOptions {
        pi_gains: c.pi,
        outlet_point_feedback: c.outlet_point_feedback,
    };
    build_controller(c.kind, cfg.assumed()?, cfg.params(), cfg.grid()?, &options)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub verb: String,
    pub tool_version: String,
    pub config_digest: String,
    pub workers: usize,
    pub artifacts: Vec<String>,
    pub config: ScenarioConfig,
}

pub fn write_manifest(out: &Path, verb: &str, cfg: &ScenarioConfig, workers: usize, artifacts: &[&str]) -> Result<()> {
    let m = Manifest {
        manifest_version: 1,
        verb: verb.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_digest: cfg.digest(),
        workers,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        config: cfg.clone(),
    };
    let text = toml::to_string(&m).map_err(|e| ArzError::Config(e.to_string()))?;
    write_string_atomic(&out.join("manifest.toml"), &text)
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: PerfReport,
}

/// Closed-loop rollout from the sinusoidal initial condition around the true density,
/// scored against the true steady state.
pub fn rollout(cfg: &ScenarioConfig, c: &ControllerSection) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let params = cfg.params();
    let truth = cfg.truth()?;
    let init = TrafficState::sinusoidal(&truth, &grid, cfg.scenario.initial_amplitude);
    let mut controller = make_controller(cfg, c)?;
    let trajectory = simulate(&init, controller.as_mut(), &grid, &params)?;
    let report = perf_indices(&trajectory, &truth, cfg.metrics.fuel_cubic, &cfg.metrics.fuel)?;
    Ok(RunOutput { trajectory, report })
}

fn write_run(out: &Path, run: &RunOutput, truth: &SteadyState) -> Result<()> {
    write_trajectory_csv(&run.trajectory, &out.join("trajectory.csv"))?;
    write_commands_csv(&run.trajectory, &out.join("commands.csv"))?;
    write_reward_csv(&run.trajectory, truth, &out.join("rewards.csv"))?;
    write_report_json(&run.report, &out.join("report.json"))
}

const RUN_ARTIFACTS: [&str; 4] = ["trajectory.csv", "commands.csv", "rewards.csv", "report.json"];

/// `simulate`: one configured controller, all per-run artifacts.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<PerfReport> {
    cfg.validate()?;
    let run = rollout(cfg, &cfg.controller)?;
    write_run(out, &run, &cfg.truth()?)?;
    write_manifest(out, "simulate", cfg, 1, &RUN_ARTIFACTS)?;
    Ok(run.report)
}

/// `evaluate`: deterministic rollout of a trained policy.
pub fn run_evaluation(cfg: &ScenarioConfig, checkpoint: Option<&Path>, out: &Path) -> Result<PerfReport> {
    let mut cfg = cfg.clone();
    cfg.controller.kind = ControllerKind::RlPolicy;
    if let Some(path) = checkpoint {
        cfg.controller.checkpoint = Some(path.to_path_buf());
        let ck = Checkpoint::load(path)?;
        cfg.controller.scheme = ck.scheme;
    }
    cfg.validate()?;
    let run = rollout(&cfg, &cfg.controller)?;
    write_run(out, &run, &cfg.truth()?)?;
    write_manifest(out, "evaluate", &cfg, 1, &RUN_ARTIFACTS)?;
    Ok(run.report)
}

/// `train`: one PPO run per configured seed.
pub fn run_training(cfg: &ScenarioConfig, workers: usize, out: &Path) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let env = cfg.env_config();
    let mut outcomes = Vec::new();
    for &seed in &cfg.training.seeds {
        let outcome = train(&env, &cfg.train_config(seed, workers))?;
        let dir = out.join(format!("seed_{seed}"));
        outcome.final_checkpoint.save(&dir.join("final.json"))?;
        outcome.best_checkpoint.save(&dir.join("best.json"))?;
        let diverged = outcome.diverged.clone();
        outcomes.push(outcome);
        if let Some(msg) = diverged {
            write_training_files(cfg, workers, out, &outcomes)?;
            return Err(ArzError::Training(format!("seed {seed}: {msg}")));
        }
    }
    write_training_files(cfg, workers, out, &outcomes)?;
    Ok(outcomes)
}

fn write_training_files(cfg: &ScenarioConfig, workers: usize, out: &Path, outcomes: &[TrainOutcome]) -> Result<()> {
    write_atomic(&out.join("curve.csv"), |w| {
        writeln!(w, "episode,seed,cum_reward")?;
        for o in outcomes {
            for p in &o.curve {
                writeln!(w, "{},{},{}", p.episode, p.seed, format_sig(p.cum_reward, 12))?;
            }
        }
        Ok(())
    })?;
    let curves: Vec<_> = outcomes.iter().map(|o| o.curve.clone()).collect();
    write_atomic(&out.join("envelope.csv"), |w| {
        writeln!(w, "episode,min,mean,max")?;
        for (e, lo, mean, hi) in curve_envelope(&curves) {
            writeln!(w, "{e},{},{},{}", format_sig(lo, 12), format_sig(mean, 12), format_sig(hi, 12))?;
        }
        Ok(())
    })?;
    write_atomic(&out.join("final_evaluations.csv"), |w| {
        writeln!(w, "seed,final_cum_reward,diverged")?;
        for o in outcomes {
            let r = o.final_evaluation.map(|r| format_sig(r, 12)).unwrap_or_else(|| "undefined".into());
            writeln!(w, "{},{r},{}", o.final_checkpoint.seed, o.diverged.is_some())?;
        }
        Ok(())
    })?;
    write_manifest(out, "train", cfg, workers, &["curve.csv", "envelope.csv", "final_evaluations.csv", "seed_*/final.json", "seed_*/best.json"])
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub scenario: String,
    pub label: String,
    pub report: PerfReport,
}

/// `compare`: every run of every configuration, measured against each configuration's
/// baseline run.
pub fn run_comparison(cfgs: &[ScenarioConfig], out: &Path) -> Result<Vec<ComparisonRow>> {
    let Some(first) = cfgs.first() else {
        return Err(ArzError::Config("compare needs at least one configuration".into()));
    };
    let mut problems = Vec::new();
    for cfg in cfgs {
        if let Err(e) = cfg.validate() {
            problems.push(format!("{}: {e}", cfg.name));
        }
        if cfg.compare.runs.is_empty() {
            problems.push(format!("{}: no compare.runs", cfg.name));
        }
        if cfg.grid != first.grid || cfg.horizon_s != first.horizon_s || cfg.model != first.model {
            problems.push(format!(
                "{}: grid, horizon or model differs from {}",
                cfg.name, first.name
            ));
        }
    }
    if !problems.is_empty() {
        return Err(ArzError::Config(problems.join("; ")));
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for cfg in cfgs {
        let truth = cfg.truth()?;
        let runs: Vec<(String, RunOutput)> = cfg
            .compare
            .runs
            .iter()
            .map(|r| rollout(cfg, &r.controller).map(|o| (r.label.clone(), o)))
            .collect::<Result<_>>()?;
        let base = runs
            .iter()
            .find(|(l, _)| *l == cfg.compare.baseline)
            .map(|(_, o)| o.report.clone())
            .expect("validated baseline");
        for (label, run) in runs {
            let mut report = run.report.clone();
            report.improvement = Some(compare_reports(&report, &base));
            let dir = out.join(&cfg.name).join(&label);
            write_report_json(&report, &dir.join("report.json"))?;
            series.push((cfg.name.clone(), label.clone(), reward_series(&run.trajectory, &truth), run.trajectory.grid.dt));
            rows.push(ComparisonRow {
                scenario: cfg.name.clone(),
                label,
                report,
            });
        }
    }
    let table: Vec<(String, String, PerfReport)> = rows
        .iter()
        .map(|r| (r.scenario.clone(), r.label.clone(), r.report.clone()))
        .collect();
    write_report_table(&table, &out.join("comparison.csv"))?;
    write_atomic(&out.join("rewards_merged.csv"), |w| {
        writeln!(w, "scenario,controller,step,t_s,reward,cum_reward")?;
        for (scenario, label, rewards, dt) in &series {
            let mut cum = 0.0;
            for (k, r) in rewards.iter().enumerate() {
                cum += r;
                writeln!(
                    w,
                    "{scenario},{label},{},{},{},{}",
                    k + 1,
                    format_sig((k + 1) as f64 * dt, 9),
                    format_sig(*r, 12),
                    format_sig(cum, 12)
                )?;
            }
        }
        Ok(())
    })?;
    for cfg in cfgs {
        write_manifest(&out.join(&cfg.name), "compare", cfg, 1, &["*/report.json"])?;
    }
    Ok(rows)
}

/// `kernels`: backstepping gain table on the configured grid.
pub fn run_kernels(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let table = backstepping_gains(&cfg.assumed()?, &cfg.params(), &cfg.grid()?)?;
    write_atomic(&out.join("kernels.csv"), |w| {
        writeln!(w, "xi_m,c_v,c_q")?;
        for i in 0..table.xi.len() {
            writeln!(
                w,
                "{},{},{}",
                format_sig(table.xi[i], 9),
                format_sig(table.c_v[i], 12),
                format_sig(table.c_q[i], 12)
            )?;
        }
        Ok(())
    })?;
    write_string_atomic(
        &out.join("kernel_summary.toml"),
        &format!(
            "boundary_gain = {}\niterations = {}\n",
            table.boundary_gain, table.iterations
        ),
    )?;
    write_manifest(out, "kernels", cfg, 1, &["kernels.csv", "kernel_summary.toml"])
}

/// Process exit status for an error: 2 configuration, 3 numerical blow-up,
/// 4 training divergence, 1 anything else.
pub fn exit_code(e: &ArzError) -> i32 {
    if e.is_numerical_failure() {
        return 3;
    }
    match e {
        ArzError::Config(_) | ArzError::Domain(_) | ArzError::UnsupportedRegime(_) | ArzError::Usage(_) => 2,
        ArzError::Training(_) => 4,
        ArzError::AtStep { source, .. } => exit_code(source),
        _ => 1,
    }
}
