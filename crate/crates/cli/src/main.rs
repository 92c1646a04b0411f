// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use asrn_core::experiment::{self, preset, run_experiment, ExperimentConfig, PRESET_NAMES, SIGMA_SWEEP};
use asrn_core::metrics::{aggregate, var_delta_oracle};
use asrn_core::output::{self, read_aggregate, read_steps, render_charts, write_outputs};
use asrn_core::{env, RngStream, StepRecord};

#[derive(Parser)]
#[command(
    name = "asrnlab",
    version,
    about = "Q-learning on unequal-variance bandits, with and without adaptive reward noising"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file and write CSV/SVG outputs.
    Run(RunArgs),
    /// Monte Carlo checks independent of the training loop.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Re-render SVG charts from the CSVs in a run directory.
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    agents: Option<u32>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long, value_enum)]
    asrn: Option<Switch>,
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_charts: bool,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Mean squared TD error of one arm at its converged value.
    VarDelta {
        #[arg(long, default_value = "broken_armed")]
        preset: String,
        #[arg(long, default_value = "right")]
        arm: String,
        #[arg(short = 'n', long = "samples", default_value_t = 100_000)]
        samples: usize,
        /// Discount; defaults to the preset's learner.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Censored trap durations across boring-arm sigmas.
    TrapDuration {
        #[arg(long, value_delimiter = ',', default_values_t = SIGMA_SWEEP.to_vec())]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        seeds: u32,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_configs(args: &RunArgs) -> Result<Vec<ExperimentConfig>> {
    let mut configs = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            vec![ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?]
        }
        _ => bail!("pass exactly one of --preset or --config"),
    };
    for cfg in &mut configs {
        if let Some(s) = args.seed {
            cfg.master_seed = s;
        }
        if let Some(n) = args.agents {
            cfg.n_agents = n;
        }
        if let Some(n) = args.steps {
            cfg.n_steps = n;
        }
        if let Some(n) = args.record_every {
            cfg.record_every = n;
        }
        match args.asrn {
            Some(Switch::On) if cfg.asrn.is_none() => cfg.asrn = Some(experiment::preset_asrn()),
            Some(Switch::Off) => cfg.asrn = None,
            _ => {}
        }
        cfg.validate()?;
    }
    Ok(configs)
}

fn run(args: RunArgs) -> Result<()> {
    let configs = load_configs(&args)?;
    let base = args
        .out
        .clone()
        .or_else(|| configs[0].output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let nested = configs.len() > 1;
    for cfg in configs {
        let dir = if nested { base.join(&cfg.name) } else { base.clone() };
        let result = run_experiment(&cfg, args.threads)?;
        let files = write_outputs(&result, &dir, !args.no_charts)?;
        println!(
            "{}: {} agents x {} steps, final right fraction {:.3}, {} trap events -> {}",
            cfg.name,
            cfg.n_agents,
            cfg.n_steps,
            result.final_right_fraction(),
            result.events.len(),
            files.steps.parent().unwrap_or(Path::new(".")).display()
        );
    }
    Ok(())
}

fn oracle(cmd: OracleCommand) -> Result<()> {
    match cmd {
        OracleCommand::VarDelta {
            preset,
            arm,
            samples,
            gamma,
            seed,
        } => {
            let bandit = env::env_preset(&preset)?;
            let arm_idx = bandit.arm_by_name(&arm)?;
            let gamma = gamma.unwrap_or(match preset.as_str() {
                "fig3" => experiment::fig3_agent().gamma,
                _ => experiment::broken_armed_agent().gamma,
            });
            let est = var_delta_oracle(&bandit, arm_idx, gamma, samples, &mut RngStream::new(seed))?;
            let var = bandit.arms[arm_idx].params.variance();
            println!(
                "E[delta^2] = {:.6} (std err {:.6}, n = {}); arm variance = {}",
                est.mean, est.std_err, est.n, var
            );
        }
        OracleCommand::TrapDuration {
            sigmas,
            seeds,
            steps,
            seed,
        } => {
            println!("sigma_l,median_duration,never_exit_fraction,n_events,exited_fraction");
            for p in experiment::trap_sweep(&sigmas, seeds, steps, seed)? {
                println!(
                    "{},{},{},{},{}",
                    p.sigma_l,
                    p.stats.median.map(|m| m.to_string()).unwrap_or_default(),
                    p.stats.never_exit_fraction,
                    p.stats.n_events,
                    p.exited_fraction
                );
            }
        }
    }
    Ok(())
}

fn plot(dir: &Path) -> Result<()> {
    let frames = read_aggregate(&dir.join(output::AGGREGATE_CSV))?;
    let steps = read_steps(&dir.join(output::STEPS_CSV))?;
    let first: &[StepRecord] = steps.first().map(Vec::as_slice).unwrap_or(&[]);
    let frames = if frames.is_empty() && !steps.is_empty() {
        let slices: Vec<&[StepRecord]> = steps.iter().map(Vec::as_slice).collect();
        aggregate(&slices, Default::default())
    } else {
        frames
    };
    for path in render_charts(dir, &frames, first)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Oracle(cmd) => oracle(cmd),
        Command::Plot { dir } => plot(&dir),
        Command::Presets => {
            PRESET_NAMES.iter().for_each(|n| println!("{n}"));
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
