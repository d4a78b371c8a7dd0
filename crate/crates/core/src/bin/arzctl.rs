use std::path::PathBuf;
use std::process::ExitCode;

use arz_core::cli::{
    exit_code, run_comparison, run_evaluation, run_kernels, run_scenario, run_training, ScenarioConfig,
};
use arz_core::metrics::PerfReport;
use arz_core::{ArzError, Result};
use clap::{Parser, Subcommand};

/// ARZ boundary-control experiments.
#[derive(Parser)]
#[command(name = "arzctl", version)]
struct Cli {
    /// Scenario configuration (TOML or a run manifest); `compare` accepts several.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the training seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Episode-collection threads for training.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Closed-loop run of the configured controller.
    Simulate,
    /// Train PPO policies for the configured scheme.
    Train,
    /// Deterministic rollout of a trained policy.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every `compare.runs` entry and tabulate improvements over the baseline.
    Compare,
    /// Backstepping gain table.
    Kernels,
}

fn load(cli: &Cli) -> Result<Vec<ScenarioConfig>> {
    let mut cfgs = if cli.config.is_empty() {
        vec![ScenarioConfig::default()]
    } else {
        cli.config.iter().map(|p| ScenarioConfig::load(p)).collect::<Result<_>>()?
    };
    if let Some(seed) = cli.seed {
        for c in &mut cfgs {
            c.training.seeds = vec![seed];
        }
    }
    Ok(cfgs)
}

fn single(cfgs: Vec<ScenarioConfig>) -> Result<ScenarioConfig> {
    let n = cfgs.len();
    let mut it = cfgs.into_iter();
    match (it.next(), n) {
        (Some(c), 1) => Ok(c),
        _ => Err(ArzError::Config(format!("this verb takes one --config, got {n}"))),
    }
}

fn print_report(label: &str, r: &PerfReport) {
    println!(
        "{label}: cum_reward {:.4}  J_TTT {:.2} veh·s  J_fuel {:.4} l  J_comfort {:.5}",
        r.cum_reward, r.j_ttt, r.j_fuel, r.j_comfort
    );
}

fn run(cli: &Cli) -> Result<()> {
    let cfgs = load(cli)?;
    match &cli.verb {
        Verb::Simulate => {
            let cfg = single(cfgs)?;
            let r = run_scenario(&cfg, &cli.out)?;
            print_report(cfg.controller.kind.name(), &r);
        }
        Verb::Evaluate { checkpoint } => {
            let cfg = single(cfgs)?;
            let r = run_evaluation(&cfg, checkpoint.as_deref(), &cli.out)?;
            print_report("rl-policy", &r);
        }
        Verb::Train => {
            let cfg = single(cfgs)?;
            for o in run_training(&cfg, cli.workers, &cli.out)? {
                let eval = o.final_evaluation.map_or("n/a".to_string(), |r| format!("{r:.4}"));
                println!(
                    "seed {}: {} episodes, final evaluation {eval}",
                    o.final_checkpoint.seed, o.final_checkpoint.episodes
                );
            }
        }
        Verb::Compare => {
            for row in run_comparison(&cfgs, &cli.out)? {
                print_report(&format!("{}/{}", row.scenario, row.label), &row.report);
            }
        }
        Verb::Kernels => run_kernels(&single(cfgs)?, &cli.out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arzctl: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
