use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod artifact;
mod commands;
mod config;
mod error;
mod report;

use commands::{Outcome, SimulateArgs};
use config::RunConfig;
use error::{exit_code, CliError, EXIT_DATA};

/// Cognitive-load analytics for multi-turn tool-use tasks.
#[derive(Parser, Debug)]
#[command(name = "tigload", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` (and `gen.seed` for `gen`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `lambda`.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Intrinsic and extraneous load for every task.
    Analyze {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extraneous load only.
    Score {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate omega_e from tercile accuracy drops.
    CalibrateOmega {
        #[arg(long)]
        loads: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// One omega_e across all agents.
        #[arg(long)]
        pooled: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit load/accuracy profiles and write calibration artifacts.
    Fit {
        #[arg(long)]
        loads: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Output of `calibrate-omega`; otherwise `omega.value` is used.
        #[arg(long)]
        omega: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Hosmer-Lemeshow test of existing profiles against trials.
    Validate {
        #[arg(long)]
        loads: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated trials, per call from a tasks file or per task from a loads file.
    Simulate {
        #[arg(long, conflicts_with = "loads")]
        tasks: Option<PathBuf>,
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long)]
        agent_id: Option<String>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        b_node: Option<f64>,
        #[arg(long)]
        trials_per_task: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic tasks over a grid of target loads.
    Gen {
        /// Comma-separated target loads.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
        #[arg(long)]
        per_target: Option<usize>,
        #[arg(long)]
        mean_calls: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Choose an agent per task under a routing policy.
    Route {
        #[arg(long)]
        loads: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        /// TOML routing policy.
        #[arg(long)]
        policy: PathBuf,
        /// Use this omega_e for every agent instead of each profile's own.
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markdown summary of profiles, calibration and tercile accuracy.
    Report {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        hl: PathBuf,
        /// Output of `calibrate-omega`.
        #[arg(long)]
        buckets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.gen.seed = s;
    }
    if let Some(l) = cli.lambda {
        cfg.lambda = l;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }

    match cli.command {
        Command::Analyze { tasks, out } => {
            cfg.check()?;
            commands::analyze(&cfg, &tasks, &out)
        }
        Command::Score { tasks, out } => {
            cfg.check()?;
            commands::score(&cfg, &tasks, &out)
        }
        Command::CalibrateOmega {
            loads,
            trials,
            pooled,
            out,
        } => {
            cfg.check()?;
            commands::calibrate(&cfg, &loads, &trials, pooled, &out)
        }
        Command::Fit {
            loads,
            trials,
            omega,
            out_dir,
        } => {
            cfg.check()?;
            commands::fit(&cfg, &loads, &trials, omega.as_deref(), &out_dir)
        }
        Command::Validate {
            loads,
            trials,
            profiles,
            out,
        } => {
            cfg.check()?;
            commands::validate(&cfg, &loads, &trials, &profiles, &out)
        }
        Command::Simulate {
            tasks,
            loads,
            agent_id,
            k,
            b,
            b_node,
            trials_per_task,
            out,
        } => {
            let s = &mut cfg.simulate;
            if let Some(a) = agent_id {
                s.agent_id = a;
            }
            s.k = k.unwrap_or(s.k);
            s.b = b.unwrap_or(s.b);
            s.b_node = b_node.unwrap_or(s.b_node);
            s.trials_per_task = trials_per_task.unwrap_or(s.trials_per_task);
            cfg.check()?;
            commands::simulate(&cfg, &SimulateArgs { tasks, loads, out })
        }
        Command::Gen {
            targets,
            per_target,
            mean_calls,
            out,
            manifest,
        } => {
            if let Some(t) = targets {
                cfg.gen.targets = t;
            }
            cfg.gen.instances_per_target = per_target.unwrap_or(cfg.gen.instances_per_target);
            cfg.gen.mean_calls = mean_calls.unwrap_or(cfg.gen.mean_calls);
            cfg.check()?;
            commands::gen(&cfg, &out, &manifest)
        }
        Command::Route {
            loads,
            profiles,
            policy,
            omega,
            out,
        } => {
            cfg.check()?;
            commands::route(&cfg, &loads, &profiles, &policy, omega, &out)
        }
        Command::Report {
            profiles,
            hl,
            buckets,
            out,
        } => {
            cfg.check()?;
            commands::report(&cfg, &profiles, &hl, buckets.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for d in &outcome.diagnostics {
                eprintln!("error: {d}");
            }
            if outcome.diagnostics.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
