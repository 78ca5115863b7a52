//! Command-line front end for the federated server-learning toolkit.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fedsl::config::{parse_config, ResolvedExperiment};
use fedsl::harness::{check_theory, gradient_check_suite, run_experiment};
use fedsl::report::{compare_dir, render_table};

#[derive(Parser)]
#[command(
    name = "fedsl",
    version,
    about = "Deterministic federated-learning simulator with a server learning phase"
)]
struct Cli {
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, gamma, seed) combination of a config file.
    Run {
        /// Experiment configuration (TOML).
        config: PathBuf,
    },
    /// Evaluate step-size caps, constants, and the descent/horizon bounds
    /// against fresh runs of a quadratic config.
    CheckTheory {
        /// Experiment configuration (TOML) with a quadratic dataset.
        config: PathBuf,
    },
    /// Tabulate and compare the trace CSVs in a directory.
    Report {
        /// Directory containing trace CSVs written by `run`.
        dir: PathBuf,
    },
    /// Audit analytic gradients against finite differences.
    Gradcheck {
        /// Number of random parameter points per model.
        #[arg(long, default_value_t = 10)]
        points: usize,
    },
}

fn load(config: &PathBuf, cli: &Cli) -> anyhow::Result<ResolvedExperiment> {
    let mut exp = parse_config(config)
        .with_context(|| format!("failed to load {}", config.display()))?;
    if let Some(seed) = cli.seed {
        exp.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        exp.out_dir = out.clone();
    }
    Ok(exp)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

fn run_command(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Run { config } => {
            let exp = load(config, cli)?;
            let outcome = run_experiment(&exp)?;
            for path in &outcome.trace_paths {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", outcome.summary_path.display());
            println!();
            for g in &outcome.summary.groups {
                let gamma = g.gamma.map(|g| format!(" (gamma={g})")).unwrap_or_default();
                println!(
                    "{}{}: final train loss {:.6}, final rolling acc {}, rise {}",
                    g.algorithm,
                    gamma,
                    g.final_train_loss.mean,
                    fmt_opt(g.final_rolling_acc.as_ref().map(|s| s.mean)),
                    fmt_opt(g.rise_time.as_ref().and_then(|r| r.mean)),
                );
            }
            Ok(true)
        }
        Command::CheckTheory { config } => {
            let exp = load(config, cli)?;
            let reports = check_theory(&exp)?;
            let mut all_ok = true;
            for r in &reports {
                let caps_ok = r.step_within_basic && r.step_within_strict;
                let h_ok = r.h >= r.h_guarantee;
                let bounds_ok = r.descent_violations == 0
                    && r.client_drift_violations == 0
                    && r.server_drift_violations == 0
                    && r.horizon_violations == 0;
                let mc_ok = r.mc.as_ref().map(|m| m.ok).unwrap_or(true);
                let ok = caps_ok && h_ok && bounds_ok && mc_ok;
                all_ok &= ok;
                let descent = if r.deterministic {
                    format!("{}/{} rounds", r.rounds.len() - r.descent_violations, r.rounds.len())
                } else {
                    "expectation (see mc)".to_string()
                };
                let server_drift = if !r.deterministic {
                    "n/a"
                } else if r.server_drift_violations == 0 {
                    "ok"
                } else {
                    "VIOLATED"
                };
                let horizon = if !r.deterministic {
                    "n/a"
                } else if r.horizon_violations == 0 {
                    "ok"
                } else {
                    "VIOLATED"
                };
                println!(
                    "gamma={} seed={}: step {:.6e} (caps {:.6e} / {:.6e}), h={:.4} (guarantee {:.4}), \
                     descent {}, client drift {}, server drift {}, horizon {}, mc {} -> {}",
                    r.gamma,
                    r.seed,
                    r.step,
                    r.cap_basic,
                    r.cap_strict,
                    r.h,
                    r.h_guarantee,
                    descent,
                    if r.client_drift_violations == 0 { "ok" } else { "VIOLATED" },
                    server_drift,
                    horizon,
                    r.mc
                        .as_ref()
                        .map(|m| if m.ok { "ok" } else { "VIOLATED" })
                        .unwrap_or("n/a"),
                    if ok { "PASS" } else { "FAIL" },
                );
            }
            println!("wrote {}", exp.out_dir.join("theory.json").display());
            Ok(all_ok)
        }
        Command::Report { dir } => {
            let report = compare_dir(dir)?;
            print!("{}", render_table(&report));
            Ok(true)
        }
        Command::Gradcheck { points } => {
            let checks = gradient_check_suite(*points)?;
            let mut all_ok = true;
            for c in &checks {
                all_ok &= c.ok;
                println!(
                    "{:<10} points={} step={:.0e} worst_rel_err={:.3e} tol={:.0e} -> {}",
                    c.model,
                    c.points,
                    c.step,
                    c.worst_rel_err,
                    c.tolerance,
                    if c.ok { "PASS" } else { "FAIL" },
                );
            }
            Ok(all_ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
