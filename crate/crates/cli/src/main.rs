//! `userdp`: user-level differential privacy from the command line.
//!
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 when a work
//! budget is exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use userdp::seeding::trial_rng;
use userdp::{
    delstab_distribution, delstab_params, delstab_run, verify_item_dp, verify_user_dp, AuditMode,
    Dataset, FiniteDistribution, PrivacyParams,
};
use userdp_cli::experiment::{run_experiment, ExperimentConfig, TaskKind};
use userdp_cli::mechanism::MechanismSpec;
use userdp_cli::resolve_budget;

#[derive(Parser)]
#[command(
    name = "userdp",
    version,
    about = "User-level differential privacy toolkit: parameter calculus, \
             mechanism audits, a deletion-stability wrapper, and seeded \
             learning experiments."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive deletion-stability wrapper parameters from a privacy target.
    Params {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Check a mechanism's differential privacy over its full input space.
    Audit {
        /// Mechanism spec file (JSON, tagged by "kind").
        #[arg(long)]
        mechanism: PathBuf,
        /// Neighbor enumeration strategy.
        #[arg(long, value_enum, default_value_t = ModeArg::Exhaustive)]
        mode: ModeArg,
        /// Neighbor granularity: replace a whole user or a single item.
        #[arg(long, value_enum, default_value_t = LevelArg::User)]
        level: LevelArg,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        /// Work cap; defaults to USERDP_BUDGET, then the built-in cap.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replacement distribution for sampled mode (JSON array of masses);
        /// uniform when absent.
        #[arg(long)]
        replacement: Option<PathBuf>,
    },
    /// Run the deletion-stability wrapper on one dataset and report its law.
    DelstabDemo {
        /// Mechanism spec file (JSON, tagged by "kind").
        #[arg(long)]
        mechanism: PathBuf,
        /// Dataset file: {"universe_size": .., "m": .., "users": [[..], ..]}.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Learn a discrete distribution over seeded trials.
    LearnDiscrete(RunArgs),
    /// Select among candidate distributions over seeded trials.
    HypothesisSelect(RunArgs),
    /// PAC-learn a binary hypothesis over seeded trials.
    PacLearn(RunArgs),
    /// Run a config's full (n, m) grid and write per-cell CSV results.
    Experiment {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Where to write the per-cell CSV.
        #[arg(long)]
        csv: PathBuf,
        /// Optional JSON summary path; stdout when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

/// Shared arguments of the single-task subcommands.
#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON) whose "task" matches the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Optional per-trial CSV log.
    #[arg(long)]
    trial_log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    User,
    Item,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Requested help or version output is a success; anything else
            // (bad flags, missing subcommand) is a usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let budget = err
                .chain()
                .any(|c| c.downcast_ref::<userdp::Error>().is_some_and(|e| e.is_budget()));
            ExitCode::from(if budget { 2 } else { 1 })
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Params { epsilon, delta } => {
            let pp = PrivacyParams::new(epsilon, delta)?;
            let params = delstab_params(pp)?;
            let out = json!({
                "epsilon": epsilon,
                "delta": delta,
                "eps_bar": params.eps_bar,
                "delta_bar": params.delta_bar,
                "kappa": params.kappa,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Audit {
            mechanism,
            mode,
            level,
            epsilon,
            delta,
            budget,
            seed,
            replacement,
        } => {
            let budget = resolve_budget(budget)?;
            let spec: MechanismSpec = read_json(&mechanism)?;
            let mech = spec.build(budget)?;
            let pp = PrivacyParams::new(epsilon, delta)?;
            let mode = match mode {
                ModeArg::Exhaustive => {
                    if replacement.is_some() {
                        bail!("--replacement only applies to sampled mode");
                    }
                    AuditMode::Exhaustive
                }
                ModeArg::Sampled => {
                    let replacement = replacement
                        .map(|p| read_json::<FiniteDistribution>(&p))
                        .transpose()?;
                    AuditMode::Sampled { replacement }
                }
            };
            let report = match level {
                LevelArg::User => verify_user_dp(
                    mech.as_ref(),
                    mech.universe_size(),
                    mech.input_users(),
                    mech.m(),
                    &pp,
                    &mode,
                    budget,
                    seed,
                )?,
                LevelArg::Item => verify_item_dp(
                    mech.as_ref(),
                    mech.universe_size(),
                    mech.input_users(),
                    mech.m(),
                    &pp,
                    &mode,
                    budget,
                    seed,
                )?,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::DelstabDemo {
            mechanism,
            dataset,
            epsilon,
            delta,
            seed,
            budget,
        } => {
            let budget = resolve_budget(budget)?;
            let spec: MechanismSpec = read_json(&mechanism)?;
            let mech = spec.build(budget)?;
            let ds: Dataset = read_json(&dataset)?;
            let pp = PrivacyParams::new(epsilon, delta)?;
            let params = delstab_params(pp)?;
            let mut rng = trial_rng(seed, 0);
            let outcome = delstab_run(mech.as_ref(), &ds, &pp, &mut rng, budget)?;
            let mut out = json!({
                "params": params,
                "seed": seed,
                "outcome": outcome,
            });
            // The exact law is tabulated only for count-summary mechanisms.
            if let Some(cs) = mech.as_count_summary() {
                let law = delstab_distribution(cs, &ds, &pp, budget)?;
                out["exact_law"] = json!({
                    "output_masses": law.output_masses(),
                    "bottom_mass": law.bottom_mass(),
                });
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::LearnDiscrete(args) => run_task(TaskKind::LearnDiscrete, args),
        Command::HypothesisSelect(args) => run_task(TaskKind::HypothesisSelect, args),
        Command::PacLearn(args) => run_task(TaskKind::PacLearn, args),
        Command::Experiment {
            config,
            csv,
            summary,
        } => {
            let cfg: ExperimentConfig = parse_config(&config)?;
            let result = run_experiment(&cfg)?;
            fs::write(&csv, result.to_csv())
                .with_context(|| format!("writing {}", csv.display()))?;
            let pretty = serde_json::to_string_pretty(&result)?;
            match summary {
                Some(path) => fs::write(&path, pretty + "\n")
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{pretty}"),
            }
            Ok(())
        }
    }
}

fn parse_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn run_task(expected: TaskKind, args: RunArgs) -> anyhow::Result<()> {
    let cfg = parse_config(&args.config)?;
    if cfg.task != expected {
        bail!(
            "config names task {} but the subcommand is {}",
            cfg.task.name(),
            expected.name()
        );
    }
    let result = run_experiment(&cfg)?;
    if let Some(path) = args.trial_log {
        fs::write(&path, result.trial_log_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}
