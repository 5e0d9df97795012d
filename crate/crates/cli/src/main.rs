//! `recvisit`: visit-window diagnostics, inverse-intensity-weighted trajectories
//! and tilting sensitivity analysis from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod logging;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{Completion, NumericalFailure, Session, SimulateArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "recvisit",
    version,
    about = "Analysis of irregular visits against recommended intervals"
)]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Visit CSV (`id,date,time_since_dx,DAS,S,censor,R`).
    input: Option<PathBuf>,
    /// Flat `key = value` config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(short, long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check an input file.
    Validate(RunArgs),
    /// Interval agreement diagnostics and quantile bands.
    Diagnose(RunArgs),
    /// Per-gap visit category and time at risk.
    Classify(RunArgs),
    /// Intensity models, weights and the weighted trajectory under assessment at random.
    FitAar {
        #[command(flatten)]
        run: RunArgs,
        /// Shorthand for `--set weighting=unweighted`.
        #[arg(long)]
        unweighted: bool,
    },
    /// AUC over the tilting-parameter grid.
    Sensitivity(RunArgs),
    /// Elicitation curves and the plausible range of the early tilting parameter.
    Elicit {
        #[command(flatten)]
        run: RunArgs,
        /// Fix the normalizer at one instead of fitting it.
        #[arg(long)]
        no_normalizer: bool,
    },
    /// Simulate a cohort with known mean trajectory.
    Simulate {
        /// Scenario file (`key = value`).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Dataset CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Truth trajectory CSV to write.
        #[arg(long)]
        truth: PathBuf,
        /// Directory for the scenario echo and run log.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Override any scenario key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Defaults, then the config file, then flags.
fn run_config(args: &RunArgs, extra: &[(&str, &str)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(p.clone());
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.apply_overrides(&args.overrides)?;
    for (k, v) in extra {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command, session: &mut Session) -> Result<Completion> {
    match command {
        Command::Validate(a) => commands::validate(&run_config(&a, &[])?),
        Command::Diagnose(a) => commands::diagnose(&run_config(&a, &[])?, session),
        Command::Classify(a) => commands::classify(&run_config(&a, &[])?, session),
        Command::FitAar { run, unweighted } => {
            let extra: &[(&str, &str)] = if unweighted {
                &[("weighting", "unweighted")]
            } else {
                &[]
            };
            commands::fit_aar(&run_config(&run, extra)?, session)
        }
        Command::Sensitivity(a) => commands::sensitivity(&run_config(&a, &[])?, session),
        Command::Elicit { run, no_normalizer } => {
            let extra: &[(&str, &str)] = if no_normalizer {
                &[("no_normalizer", "true")]
            } else {
                &[]
            };
            commands::elicit(&run_config(&run, extra)?, session)
        }
        Command::Simulate {
            spec,
            out,
            truth,
            run_dir,
            jobs,
            seed,
            overrides,
        } => commands::simulate_cmd(
            &SimulateArgs {
                spec,
                overrides,
                seed,
                jobs,
                out,
                truth,
                run_dir,
            },
            session,
        ),
    }
}

/// 2 for bad input or configuration, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<recvisit::Error>() {
            return match e {
                recvisit::Error::Parse { .. }
                | recvisit::Error::Validation { .. }
                | recvisit::Error::InvalidArgument(_)
                | recvisit::Error::Io(_)
                | recvisit::Error::Csv(_) => 2,
                _ => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(cli.verbose, cli.quiet);
    let mut session = Session::default();
    let result = run(cli.command, &mut session);
    let code = match &result {
        Ok(Completion::Ok) => 0,
        Ok(Completion::PartialGrid) => {
            log::warn!("grid finished with failed cells");
            4
        }
        Err(e) => {
            log::error!("{e:#}");
            exit_code(e)
        }
    };
    if let Some(dir) = &session.run_dir {
        if let Err(e) = std::fs::write(dir.path.join("run.log"), logging::run_log()) {
            eprintln!("could not write run.log: {e}");
        }
    }
    ExitCode::from(code)
}
