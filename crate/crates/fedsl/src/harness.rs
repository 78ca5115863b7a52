//! Experiment harness: executes a resolved experiment's run matrix, writes
//! one CSV trace per run and one summary JSON per experiment, and drives the
//! theory checks on quadratic worlds.
//!
//! The CSV schema is fixed:
//!
//! ```text
//! round,train_loss,test_acc,rolling_acc,grad_norm_F,grad_norm_Ftilde,xi_sq,G_sq,Ec_drift,E0_drift,Ftilde
//! ```
//!
//! Floats are written with 17 significant digits so byte-level comparison is
//! a valid determinism check; absent values are written as `NaN`. Every
//! number in the summary is recomputable from the traces and the
//! configuration alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedExperiment, RunPlan};
use crate::error::{Error, Result};
use crate::fedsim::{
    self, fsl_round, starting_params, Algorithm, DriftMode, FederationConfig, RoundCtx, RunOutput,
    World,
};
use crate::metrics::{self, drift_terms, RoundTrace};
use crate::theory::{
    self, composite_minimum_for_quadratics, constants_from_quadratic_world, derive_constants,
    step_cap_basic, step_cap_strict, DescentState,
};

pub const TRACE_HEADER: &str =
    "round,train_loss,test_acc,rolling_acc,grad_norm_F,grad_norm_Ftilde,xi_sq,G_sq,Ec_drift,E0_drift,Ftilde";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "NaN".to_string(),
        Some(x) => format!("{:.16e}", x),
        None => "NaN".to_string(),
    }
}

/// Renders a run trace as CSV text (including the trailing newline).
pub fn trace_to_csv(trace: &[RoundTrace]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.round,
            fmt_opt(Some(row.train_loss)),
            fmt_opt(row.test_acc),
            fmt_opt(row.rolling_acc),
            fmt_opt(row.grad_norm_f),
            fmt_opt(row.grad_norm_ftilde),
            fmt_opt(row.xi_sq),
            fmt_opt(row.g_sq),
            fmt_opt(row.client_drift),
            fmt_opt(row.server_drift),
            fmt_opt(row.f_tilde),
        ));
    }
    out
}

/// One parsed CSV row; `NaN` cells come back as `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
    pub rolling_acc: Option<f64>,
    pub grad_norm_f: Option<f64>,
    pub grad_norm_ftilde: Option<f64>,
    pub xi_sq: Option<f64>,
    pub g_sq: Option<f64>,
    pub ec_drift: Option<f64>,
    pub e0_drift: Option<f64>,
    pub f_tilde: Option<f64>,
}

/// Reads a trace CSV produced by this harness.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        reason: "empty trace file".into(),
    })?;
    if header != TRACE_HEADER {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: format!("unexpected header: {header}"),
        });
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: format!("bad float {s:?}: {e}"),
        })
    };
    let opt = |v: f64| if v.is_nan() { None } else { Some(v) };
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 11 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                reason: format!("expected 11 columns, got {}", cells.len()),
            });
        }
        rows.push(TraceRow {
            round: cells[0].parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: format!("bad round {:?}: {e}", cells[0]),
            })?,
            train_loss: parse_f(cells[1])?,
            test_acc: opt(parse_f(cells[2])?),
            rolling_acc: opt(parse_f(cells[3])?),
            grad_norm_f: opt(parse_f(cells[4])?),
            grad_norm_ftilde: opt(parse_f(cells[5])?),
            xi_sq: opt(parse_f(cells[6])?),
            g_sq: opt(parse_f(cells[7])?),
            ec_drift: opt(parse_f(cells[8])?),
            e0_drift: opt(parse_f(cells[9])?),
            f_tilde: opt(parse_f(cells[10])?),
        });
    }
    Ok(rows)
}

/// Per-seed values with their mean.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeedStats {
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

impl SeedStats {
    fn new(per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        SeedStats { per_seed, mean }
    }
}

/// Rise times may be absent for a seed (accuracy never reached the target).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RiseStats {
    pub per_seed: Vec<Option<usize>>,
    pub mean: Option<f64>,
}

/// Summary of one (algorithm, gamma) cell over its seeds.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroupSummary {
    pub algorithm: String,
    /// Present only for algorithms that use the server objective weight.
    pub gamma: Option<f64>,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub final_train_loss: SeedStats,
    pub final_rolling_acc: Option<SeedStats>,
    pub rise_time: Option<RiseStats>,
}

/// Theory constants and caps included when the world is quadratic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TheorySummary {
    pub gamma: f64,
    pub l: f64,
    pub sigma_sq: f64,
    pub sigma0_sq: f64,
    pub g_sq: f64,
    pub xi_sq: f64,
    pub rho_s: f64,
    pub kappa: f64,
    pub psi: f64,
    pub phi: f64,
    pub h: f64,
    pub step: f64,
    pub cap_basic: f64,
    pub cap_strict: f64,
    pub steps_identical: bool,
    /// Initial optimality gap and the horizon bound per seed.
    pub per_seed: Vec<TheorySeed>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TheorySeed {
    pub seed: u64,
    pub d0: f64,
    /// Bound on the best mean squared composite gradient norm over the
    /// configured horizon; absent when the step violates the caps.
    pub horizon_bound: Option<f64>,
}

/// The experiment-level summary written next to the traces.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSummary {
    pub rounds: usize,
    pub rolling_window: usize,
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<Vec<TheorySummary>>,
}

/// Everything `run_experiment` produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: ExperimentSummary,
}

fn is_quadratic(world: &World<f64>) -> bool {
    matches!(world.model, crate::model::LossModel::QuadraticConsensus { .. })
}

/// Executes every plan of the experiment, writes traces and the summary.
pub fn run_experiment(exp: &ResolvedExperiment) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(&exp.out_dir)?;

    // worlds are per seed and shared across algorithms
    let mut worlds: BTreeMap<u64, World<f64>> = BTreeMap::new();
    for &seed in &exp.seeds {
        worlds.insert(seed, exp.build_world(seed)?);
    }

    let plans = exp.plans();
    let outputs: Vec<(RunPlan, RunOutput<f64>)> = plans
        .into_par_iter()
        .map(|plan| {
            let world = &worlds[&plan.cfg.master_seed];
            let out = fedsim::run(&plan.cfg, world, &exp.options)?;
            Ok((plan, out))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace_paths = Vec::with_capacity(outputs.len());
    for (plan, out) in &outputs {
        let path = exp.out_dir.join(format!("{}.csv", plan.stem));
        std::fs::write(&path, trace_to_csv(&out.trace))?;
        trace_paths.push(path);
    }

    let summary = summarize(exp, &outputs, &worlds)?;
    let summary_path = exp.out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&summary_path, text)?;

    Ok(ExperimentOutcome { trace_paths, summary_path, summary })
}

fn summarize(
    exp: &ResolvedExperiment,
    outputs: &[(RunPlan, RunOutput<f64>)],
    worlds: &BTreeMap<u64, World<f64>>,
) -> Result<ExperimentSummary> {
    // group plans by (algorithm, gamma), preserving plan order
    let mut groups: Vec<((Algorithm, u64), Vec<&(RunPlan, RunOutput<f64>)>)> = Vec::new();
    for pair in outputs {
        let key = (pair.0.cfg.algorithm, pair.0.cfg.gamma.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pair),
            None => groups.push((key, vec![pair])),
        }
    }

    let mut group_summaries = Vec::with_capacity(groups.len());
    for ((alg, gamma_bits), members) in groups {
        let gamma = f64::from_bits(gamma_bits);
        let uses_gamma = matches!(alg, Algorithm::Fsl | Algorithm::FslP);
        let seeds: Vec<u64> = members.iter().map(|(p, _)| p.cfg.master_seed).collect();
        let files: Vec<String> = members.iter().map(|(p, _)| format!("{}.csv", p.stem)).collect();
        let final_train_loss = SeedStats::new(
            members
                .iter()
                .map(|(_, o)| o.trace.last().map(|r| r.train_loss).unwrap_or(f64::NAN))
                .collect(),
        );
        let rolling_last: Vec<Option<f64>> =
            members.iter().map(|(_, o)| o.trace.last().and_then(|r| r.rolling_acc)).collect();
        let final_rolling_acc = if rolling_last.iter().all(|v| v.is_some()) {
            Some(SeedStats::new(rolling_last.iter().map(|v| v.unwrap()).collect()))
        } else {
            None
        };
        let rise_time = if rolling_last.iter().all(|v| v.is_some()) {
            let per_seed: Vec<Option<usize>> = members
                .iter()
                .map(|(_, o)| {
                    let rolling: Vec<f64> =
                        o.trace.iter().filter_map(|r| r.rolling_acc).collect();
                    metrics::rise_time(&rolling)
                })
                .collect();
            let present: Vec<f64> = per_seed.iter().flatten().map(|&t| t as f64).collect();
            let mean = if present.is_empty() {
                None
            } else {
                Some(present.iter().sum::<f64>() / present.len() as f64)
            };
            Some(RiseStats { per_seed, mean })
        } else {
            None
        };
        group_summaries.push(GroupSummary {
            algorithm: alg.label().to_string(),
            gamma: uses_gamma.then_some(gamma),
            seeds,
            files,
            final_train_loss,
            final_rolling_acc,
            rise_time,
        });
    }

    // closed-form constants for quadratic worlds (identical across seeds by
    // construction, but d0 depends on the seeded initialisation)
    let first_world = &worlds[&exp.seeds[0]];
    let theory = if is_quadratic(first_world) && first_world.server_data.is_some() {
        let mut entries = Vec::new();
        for &gamma in exp.gammas() {
            let mut cfg = exp.base_config().clone();
            cfg.algorithm = Algorithm::Fsl;
            cfg.gamma = gamma;
            let tc = constants_from_quadratic_world(first_world, &cfg)?;
            let dc = derive_constants(&tc)?;
            let mut per_seed = Vec::new();
            for &seed in &exp.seeds {
                let world = &worlds[&seed];
                cfg.master_seed = seed;
                let x0 = starting_params(&cfg, world)?;
                let (_, fmin) = composite_minimum_for_quadratics(world, gamma)?;
                let f0 = metrics::objective_ftilde(
                    &world.model,
                    &x0,
                    &world.clients,
                    world.server_data.as_ref().expect("checked above"),
                    gamma,
                )?;
                let d0 = f0 - fmin;
                let horizon_bound =
                    theory::horizon_bound(&tc, &dc, d0, cfg.rounds).ok();
                per_seed.push(TheorySeed { seed, d0, horizon_bound });
            }
            entries.push(TheorySummary {
                gamma,
                l: tc.l,
                sigma_sq: tc.sigma_sq,
                sigma0_sq: tc.sigma0_sq,
                g_sq: tc.g_sq,
                xi_sq: tc.xi_sq,
                rho_s: dc.rho_s,
                kappa: dc.kappa,
                psi: dc.psi,
                phi: dc.phi,
                h: dc.h,
                step: tc.step(),
                cap_basic: step_cap_basic(&tc),
                cap_strict: step_cap_strict(&tc)?,
                steps_identical: tc.steps_identical(),
                per_seed,
            });
        }
        Some(entries)
    } else {
        None
    };

    Ok(ExperimentSummary {
        rounds: exp.base_config().rounds,
        rolling_window: exp.options.rolling_window,
        seeds: exp.seeds.clone(),
        groups: group_summaries,
        theory,
    })
}

// ---------------------------------------------------------------------------
// theory checking
// ---------------------------------------------------------------------------

/// Slack for comparisons that are exact in reals but run in floats.
fn float_slack(scale: f64) -> f64 {
    1e-9 * scale.abs().max(1.0)
}

/// One round of the descent check.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DescentRow {
    pub round: usize,
    pub ftilde: f64,
    pub grad_ftilde_sq: f64,
    pub xi_sq: f64,
    /// Descent bound on the next composite objective.
    pub rhs: f64,
    pub ftilde_next: f64,
    /// Asserted only for deterministic rounds (full participation).
    pub descent_ok: Option<bool>,
    pub client_drift: f64,
    pub client_drift_bound_rhs: f64,
    pub client_drift_ok: bool,
    pub server_drift: Option<f64>,
    pub server_drift_bound_rhs: Option<f64>,
    /// Asserted only under full participation, where the aggregation point
    /// is deterministic.
    pub server_drift_ok: Option<bool>,
}

/// Bound check at one horizon.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HorizonRow {
    pub t: usize,
    pub bound: f64,
    pub observed_min_grad_sq: f64,
    pub ok: bool,
}

/// Monte-Carlo descent check for sampled participation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct McDescent {
    pub resamples: usize,
    pub mean_ftilde_next: f64,
    pub std_error: f64,
    pub rhs: f64,
    /// `mean <= rhs + 3 * std_error`.
    pub ok: bool,
}

/// Full theory check for one (gamma, seed) run of the incremental scheme.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TheoryReport {
    pub gamma: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub l: f64,
    pub sigma_sq: f64,
    pub sigma0_sq: f64,
    pub g_sq: f64,
    pub xi_sq: f64,
    pub rho_s: f64,
    pub kappa: f64,
    pub psi: f64,
    pub phi: f64,
    pub h: f64,
    pub h_guarantee: f64,
    pub step: f64,
    pub cap_basic: f64,
    pub cap_strict: f64,
    pub step_within_basic: bool,
    pub step_within_strict: bool,
    pub steps_identical: bool,
    pub client_drift_premise: bool,
    pub server_drift_premise: bool,
    pub d0: f64,
    pub rounds: Vec<DescentRow>,
    pub descent_violations: usize,
    pub client_drift_violations: usize,
    pub server_drift_violations: usize,
    pub horizon_rows: Vec<HorizonRow>,
    pub horizon_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McDescent>,
}

struct PointState {
    ftilde: f64,
    grad_ftilde_sq: f64,
    grad_f_sq: f64,
    grad_f0_sq: f64,
    xi_sq: f64,
}

fn point_state(world: &World<f64>, x: &crate::param::ParamVector<f64>, gamma: f64) -> Result<PointState> {
    let server = world
        .server_data
        .as_ref()
        .ok_or_else(|| Error::invalid_config("server_data", "theory checks need a server dataset"))?;
    let ftilde = metrics::objective_ftilde(&world.model, x, &world.clients, server, gamma)?;
    let gf = metrics::grad_f(&world.model, x, &world.clients)?;
    let gft = metrics::grad_ftilde(&world.model, x, &world.clients, server, gamma)?;
    let gf0 = world.model.full_grad(x, server)?.grad;
    let dis = metrics::grad_dissimilarity(&world.model, x, &world.clients, Some(server))?;
    Ok(PointState {
        ftilde,
        grad_ftilde_sq: gft.norm_sq().max(0.0),
        grad_f_sq: gf.norm_sq().max(0.0),
        grad_f0_sq: gf0.norm_sq().max(0.0),
        xi_sq: dis.xi_sq.expect("server data present"),
    })
}

/// Horizons the aggregate bound is checked at: 10, 50, 200, and the final
/// round, clipped to the configured horizon.
fn horizons(rounds: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = [10, 50, 200].iter().copied().filter(|&t| t <= rounds).collect();
    if !ts.contains(&rounds) {
        ts.push(rounds);
    }
    ts
}

/// Number of Monte-Carlo round resamples used for sampled participation.
pub const MC_RESAMPLES: usize = 1000;

/// Runs the incremental scheme on a quadratic world and checks the one-round
/// descent bound, both drift bounds, and the aggregate horizon bound.
pub fn check_theory_run(
    world: &World<f64>,
    cfg: &FederationConfig,
) -> Result<TheoryReport> {
    if !is_quadratic(world) {
        return Err(Error::invalid_config(
            "model",
            "theory checks are defined on the quadratic testbed only",
        ));
    }
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Fsl;
    cfg.validate()?;
    world.validate(&cfg)?;

    let tc = constants_from_quadratic_world(world, &cfg)?;
    let dc = derive_constants(&tc)?;
    let cap8 = step_cap_basic(&tc);
    let cap9 = step_cap_strict(&tc)?;
    let step = tc.step();
    let deterministic =
        cfg.clients_per_round == cfg.num_clients && tc.sigma_sq == 0.0 && tc.sigma0_sq == 0.0;
    let client_drift_premise = theory::client_drift_premise_holds(&tc);
    let server_drift_premise = theory::server_drift_premise_holds(&tc);

    let server = world.server_data.as_ref().expect("validated above");
    let (_, fmin) = composite_minimum_for_quadratics(world, cfg.gamma)?;
    let x0 = starting_params(&cfg, world)?;
    let d0 = metrics::objective_ftilde(&world.model, &x0, &world.clients, server, cfg.gamma)? - fmin;

    let ctx = RoundCtx {
        cfg: &cfg,
        model: &world.model,
        clients: &world.clients,
        server_data: world.server_data.as_ref(),
    };

    let mut rows = Vec::with_capacity(cfg.rounds);
    let mut grad_sqs = Vec::with_capacity(cfg.rounds);
    let mut descent_violations = 0usize;
    let mut client_drift_violations = 0usize;
    let mut server_drift_violations = 0usize;
    let mut x = x0.clone();
    for t in 0..cfg.rounds {
        let state = point_state(world, &x, cfg.gamma)?;
        grad_sqs.push(state.grad_ftilde_sq);
        let rhs = theory::descent_bound_rhs(
            &tc,
            &dc,
            &DescentState {
                ftilde: state.ftilde,
                grad_ftilde_sq: state.grad_ftilde_sq,
                xi_sq: state.xi_sq,
            },
        )?;
        let (next, result) = fsl_round(&ctx, &x, t, DriftMode::Exact)?;
        let ftilde_next =
            metrics::objective_ftilde(&world.model, &next, &world.clients, server, cfg.gamma)?;

        let drift = drift_terms(result.drift.as_ref())?;
        let l4_rhs = theory::client_drift_bound_rhs(&tc, state.grad_f_sq);
        let l4_ok = !client_drift_premise || drift.client <= l4_rhs + float_slack(l4_rhs);
        if !l4_ok {
            client_drift_violations += 1;
        }
        let (l5_rhs, l5_ok) = match drift.server {
            Some(server_drift) => {
                let rhs5 = theory::server_drift_bound_rhs(&tc, &dc, drift.client, state.grad_f_sq, state.grad_f0_sq);
                let ok = if deterministic && server_drift_premise {
                    let ok = server_drift <= rhs5 + float_slack(rhs5);
                    if !ok {
                        server_drift_violations += 1;
                    }
                    Some(ok)
                } else {
                    None
                };
                (Some(rhs5), ok)
            }
            None => (None, None),
        };

        let descent_ok = if deterministic {
            let ok = ftilde_next <= rhs + float_slack(rhs);
            if !ok {
                descent_violations += 1;
            }
            Some(ok)
        } else {
            None
        };
        rows.push(DescentRow {
            round: t,
            ftilde: state.ftilde,
            grad_ftilde_sq: state.grad_ftilde_sq,
            xi_sq: state.xi_sq,
            rhs,
            ftilde_next,
            descent_ok,
            client_drift: drift.client,
            client_drift_bound_rhs: l4_rhs,
            client_drift_ok: l4_ok,
            server_drift: drift.server,
            server_drift_bound_rhs: l5_rhs,
            server_drift_ok: l5_ok,
        });
        x = next;
    }

    // aggregate bound over horizons; only meaningful when the trajectory is
    // the expectation trajectory, i.e. for deterministic runs
    let mut horizon_rows = Vec::new();
    let mut horizon_violations = 0usize;
    if deterministic {
        for t in horizons(cfg.rounds) {
            let bound = theory::horizon_bound(&tc, &dc, d0, t)?;
            let observed = grad_sqs[..t].iter().copied().fold(f64::INFINITY, f64::min);
            let ok = observed <= bound + float_slack(bound);
            if !ok {
                horizon_violations += 1;
            }
            horizon_rows.push(HorizonRow { t, bound, observed_min_grad_sq: observed, ok });
        }
    }

    // sampled participation: check the descent bound in expectation at the
    // starting point by resampling the round
    let mc = if cfg.clients_per_round < cfg.num_clients {
        let state = point_state(world, &x0, cfg.gamma)?;
        let rhs = theory::descent_bound_rhs(
            &tc,
            &dc,
            &DescentState {
                ftilde: state.ftilde,
                grad_ftilde_sq: state.grad_ftilde_sq,
                xi_sq: state.xi_sq,
            },
        )?;
        let values: Vec<f64> = (0..MC_RESAMPLES)
            .into_par_iter()
            .map(|r| {
                let (next, _) = fsl_round(&ctx, &x0, r, DriftMode::Off)?;
                metrics::objective_ftilde(&world.model, &next, &world.clients, server, cfg.gamma)
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() as f64 - 1.0);
        let std_error = (var / values.len() as f64).sqrt();
        let ok = mean <= rhs + 3.0 * std_error + float_slack(rhs);
        Some(McDescent { resamples: MC_RESAMPLES, mean_ftilde_next: mean, std_error, rhs, ok })
    } else {
        None
    };

    Ok(TheoryReport {
        gamma: cfg.gamma,
        seed: cfg.master_seed,
        deterministic,
        l: tc.l,
        sigma_sq: tc.sigma_sq,
        sigma0_sq: tc.sigma0_sq,
        g_sq: tc.g_sq,
        xi_sq: tc.xi_sq,
        rho_s: dc.rho_s,
        kappa: dc.kappa,
        psi: dc.psi,
        phi: dc.phi,
        h: dc.h,
        h_guarantee: theory::h_guarantee(cfg.gamma),
        step,
        cap_basic: cap8,
        cap_strict: cap9,
        step_within_basic: step <= cap8,
        step_within_strict: step <= cap9,
        steps_identical: tc.steps_identical(),
        client_drift_premise,
        server_drift_premise,
        d0,
        rounds: rows,
        descent_violations,
        client_drift_violations,
        server_drift_violations,
        horizon_rows,
        horizon_violations,
        mc,
    })
}

/// Runs [`check_theory_run`] over the experiment's (gamma, seed) matrix and
/// writes `theory.json` into the output directory.
pub fn check_theory(exp: &ResolvedExperiment) -> Result<Vec<TheoryReport>> {
    let mut reports = Vec::new();
    for &seed in &exp.seeds {
        let world = exp.build_world(seed)?;
        for &gamma in exp.gammas() {
            let mut cfg = exp.base_config().clone();
            cfg.algorithm = Algorithm::Fsl;
            cfg.gamma = gamma;
            cfg.master_seed = seed;
            reports.push(check_theory_run(&world, &cfg)?);
        }
    }
    std::fs::create_dir_all(&exp.out_dir)?;
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    std::fs::write(exp.out_dir.join("theory.json"), text)?;
    Ok(reports)
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

/// Outcome of one model's finite-difference audit.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GradCheck {
    pub model: String,
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
    pub worst_rel_err: f64,
    pub ok: bool,
}

/// Audits the analytic gradients of all three model kinds against central
/// finite differences at `points` randomly initialised parameter vectors.
pub fn gradient_check_suite(points: usize) -> Result<Vec<GradCheck>> {
    use crate::data::gen_blobs;
    use crate::model::LossModel;
    use crate::rng::{stream, StreamKind};

    let step = 1e-4;
    let quad_data = gen_blobs::<f64>(2, 8, 8, 1.0, 91)?;
    let class_data = gen_blobs::<f64>(4, 10, 6, 1.0, 92)?;
    let cases: Vec<(LossModel<f64>, &crate::data::LabeledDataset<f64>, f64)> = vec![
        (
            LossModel::QuadraticConsensus { center: crate::param::ParamVector::zeros(8) },
            &quad_data,
            1e-10,
        ),
        (LossModel::SoftmaxRegression { input_dim: 6, num_classes: 4 }, &class_data, 1e-5),
        (LossModel::Mlp1 { input_dim: 6, hidden: 5, num_classes: 4 }, &class_data, 1e-5),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (model, data, tolerance) in cases {
        let mut worst = 0.0f64;
        for p in 0..points {
            let params = model.init_params(&mut stream(1000 + p as u64, StreamKind::Init, 0, p));
            let err = model.finite_diff_check(&params, data, step)?;
            worst = worst.max(err);
        }
        let name = match &model {
            LossModel::QuadraticConsensus { .. } => "quadratic",
            LossModel::SoftmaxRegression { .. } => "softmax",
            LossModel::Mlp1 { .. } => "mlp",
        };
        out.push(GradCheck {
            model: name.to_string(),
            points,
            step,
            tolerance,
            worst_rel_err: worst,
            ok: worst <= tolerance,
        });
    }
    Ok(out)
}
