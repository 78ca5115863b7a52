//! The federation engine: local SGD, client sampling, the four round types
//! and the end-to-end runner.
//!
//! One round with server learning:
//!
//! 1. sample a subset of clients,
//! 2. each sampled client runs K local SGD steps from the global parameters
//!    and reports its displacement,
//! 3. the server averages the displacements, applies them with the global
//!    learning rate, and
//! 4. continues with K0 SGD steps on its own dataset at rate `gamma *
//!    server_lr`, starting from the aggregated parameters.
//!
//! Skipping step 4 gives plain federated averaging; the non-incremental
//! variant instead computes the server displacement from the round-start
//! parameters and mixes it into the average. Every random decision has its
//! own stream (see [`crate::rng`]), so clients may run in parallel and the
//! trajectory is a pure function of the configuration.

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, DriftRecord, RoundTrace};
use crate::model::LossModel;
use crate::param::ParamVector;
use crate::rng::{stream, StreamKind};
use crate::scalar::Scalar;

/// Which update rule a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Server learning after aggregation (the incremental scheme).
    Fsl,
    /// Plain federated averaging.
    FedAvg,
    /// Federated averaging with the server data shared into every client.
    #[serde(rename = "ds")]
    DataSharing,
    /// Non-incremental variant: the server displacement is computed from the
    /// round-start parameters and mixed into the client average.
    FslP,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Fsl => "fsl",
            Algorithm::FedAvg => "fedavg",
            Algorithm::DataSharing => "ds",
            Algorithm::FslP => "fslp",
        }
    }
}

/// Server pre-training before round 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pretrain {
    pub epochs: usize,
    pub lr: f64,
}

/// Everything that defines a single run, apart from the data and model.
#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    /// N: total clients.
    pub num_clients: usize,
    /// S: clients sampled per round.
    pub clients_per_round: usize,
    /// K: local SGD steps per sampled client.
    pub local_steps: usize,
    /// K0: server SGD steps per round.
    pub server_steps: usize,
    pub batch_size: usize,
    pub server_batch_size: usize,
    /// eta_l.
    pub local_lr: f64,
    /// eta_g, applied to the averaged client displacement.
    pub global_lr: f64,
    /// eta_0; the server phase steps at `gamma * server_lr`.
    pub server_lr: f64,
    pub gamma: f64,
    /// T: rounds.
    pub rounds: usize,
    pub master_seed: u64,
    /// Mixing weight of the server displacement (non-incremental variant).
    pub fslp_server_weight: f64,
    pub pretrain: Option<Pretrain>,
}

/// Default global learning rate `sqrt(S)`.
pub fn default_global_lr(clients_per_round: usize) -> f64 {
    (clients_per_round as f64).sqrt()
}

/// Default server learning rate, chosen so the total server step matches
/// the total client step: `K * local_lr * global_lr = K0 * server_lr`.
///
/// Computed as `(local_lr * global_lr) * (K / K0)`, which makes the identity
/// bit-exact whenever `K / K0` is a power of two (including `K == K0`).
pub fn default_server_lr(local_steps: usize, server_steps: usize, local_lr: f64, global_lr: f64) -> f64 {
    (local_lr * global_lr) * (local_steps as f64 / server_steps as f64)
}

/// Default mixing weight `1 / (S + 1)` for the non-incremental variant.
pub fn default_fslp_weight(clients_per_round: usize) -> f64 {
    1.0 / (clients_per_round as f64 + 1.0)
}

impl FederationConfig {
    /// `K * local_lr * global_lr`.
    pub fn effective_client_step(&self) -> f64 {
        self.local_steps as f64 * (self.local_lr * self.global_lr)
    }

    /// `K0 * server_lr`.
    pub fn effective_server_step(&self) -> f64 {
        self.server_steps as f64 * self.server_lr
    }

    fn has_server_phase(&self) -> bool {
        matches!(self.algorithm, Algorithm::Fsl | Algorithm::FslP) && self.gamma > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid_config("num_clients", "must be at least 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::invalid_config(
                "clients_per_round",
                format!("S must be in 1..={} (N)", self.num_clients),
            ));
        }
        if self.local_steps == 0 {
            return Err(Error::invalid_config("local_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be at least 1"));
        }
        for (name, v) in [
            ("local_lr", self.local_lr),
            ("global_lr", self.global_lr),
            ("server_lr", self.server_lr),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_config(name, "must be finite and non-negative"));
            }
        }
        match self.algorithm {
            Algorithm::Fsl | Algorithm::FslP => {
                if self.server_steps == 0 {
                    return Err(Error::invalid_config("server_steps", "must be at least 1"));
                }
                if self.server_batch_size == 0 {
                    return Err(Error::invalid_config("server_batch_size", "must be at least 1"));
                }
                if self.algorithm == Algorithm::FslP
                    && !(0.0..=1.0).contains(&self.fslp_server_weight)
                {
                    return Err(Error::invalid_config("fslp_server_weight", "must be in [0, 1]"));
                }
            }
            Algorithm::FedAvg | Algorithm::DataSharing => {
                if self.gamma != 0.0 {
                    return Err(Error::invalid_config(
                        "gamma",
                        format!("{} runs with gamma = 0", self.algorithm.label()),
                    ));
                }
            }
        }
        if let Some(p) = &self.pretrain {
            if !p.lr.is_finite() || p.lr < 0.0 {
                return Err(Error::invalid_config("pretrain.lr", "must be finite and non-negative"));
            }
            if self.server_batch_size == 0 {
                return Err(Error::invalid_config("server_batch_size", "must be at least 1 for pretraining"));
            }
        }
        Ok(())
    }
}

/// Model plus data: the fixed part of an experiment.
#[derive(Clone, Debug)]
pub struct World<S: Scalar> {
    pub model: LossModel<S>,
    pub clients: Vec<LabeledDataset<S>>,
    pub server_data: Option<LabeledDataset<S>>,
    pub test_data: Option<LabeledDataset<S>>,
}

impl<S: Scalar> World<S> {
    pub fn validate(&self, cfg: &FederationConfig) -> Result<()> {
        self.model.validate()?;
        if self.clients.len() != cfg.num_clients {
            return Err(Error::invalid_config(
                "num_clients",
                format!("{} clients configured, {} datasets", cfg.num_clients, self.clients.len()),
            ));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::EmptyDataset { context: format!("client {}", i) });
            }
            if cfg.batch_size > c.len() {
                return Err(Error::BatchSize { batch: cfg.batch_size, available: c.len() });
            }
            if c.feature_dim() != self.model.feature_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.model.feature_dim(),
                    got: c.feature_dim(),
                });
            }
        }
        let needs_server = matches!(
            cfg.algorithm,
            Algorithm::Fsl | Algorithm::FslP | Algorithm::DataSharing
        ) || cfg.pretrain.is_some();
        if needs_server {
            let server = self.server_data.as_ref().ok_or_else(|| {
                Error::invalid_config(
                    "server_data",
                    format!("{} requires a server dataset", cfg.algorithm.label()),
                )
            })?;
            let server_trains =
                matches!(cfg.algorithm, Algorithm::Fsl | Algorithm::FslP) || cfg.pretrain.is_some();
            if server.is_empty() && server_trains {
                return Err(Error::EmptyDataset { context: "server dataset".into() });
            }
            if server_trains && cfg.server_batch_size > server.len() {
                return Err(Error::BatchSize { batch: cfg.server_batch_size, available: server.len() });
            }
        }
        Ok(())
    }
}

/// How much drift bookkeeping a round performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    /// No drift diagnostics.
    Off,
    /// Drift over the sampled clients only (free).
    Sampled,
    /// Drift over all clients; unsampled ones are simulated for drift only.
    Exact,
}

/// What a round reports besides the new parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundResult {
    pub round: usize,
    /// Sampled client ids, ascending.
    pub sampled: Vec<usize>,
    /// Norm of the averaged client displacement (before the global rate).
    pub update_norm: f64,
    /// Fingerprint of the post-round parameters.
    pub params_digest: u64,
    pub drift: Option<DriftRecord>,
}

/// Borrowed view of everything a single round needs.
#[derive(Clone, Copy)]
pub struct RoundCtx<'a, S: Scalar> {
    pub cfg: &'a FederationConfig,
    pub model: &'a LossModel<S>,
    pub clients: &'a [LabeledDataset<S>],
    pub server_data: Option<&'a LabeledDataset<S>>,
}

/// `steps` SGD steps from `start`, accumulating the squared distance of each
/// pre-step iterate to `reference`.
fn sgd_with_drift<S: Scalar>(
    model: &LossModel<S>,
    data: &LabeledDataset<S>,
    start: &ParamVector<S>,
    reference: &ParamVector<S>,
    lr: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(ParamVector<S>, f64)> {
    let mut y = start.clone();
    let neg_lr = S::from_f64(-lr);
    let mut sq_sum = 0.0f64;
    for _ in 0..steps {
        sq_sum += reference.dist_sq(&y)?.as_f64();
        let estimate = model.stochastic_grad(&y, data, batch_size, rng)?;
        y.add_scaled(neg_lr, &estimate.grad)?;
    }
    Ok((y, sq_sum))
}

/// Plain local SGD: `steps` stochastic steps at rate `lr` from `start`.
pub fn local_sgd<S: Scalar>(
    start: &ParamVector<S>,
    lr: f64,
    steps: usize,
    data: &LabeledDataset<S>,
    model: &LossModel<S>,
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ParamVector<S>> {
    sgd_with_drift(model, data, start, start, lr, steps, batch_size, rng).map(|(y, _)| y)
}

/// Uniform without-replacement subset of `0..num_clients`, ascending.
pub fn sample_clients(
    num_clients: usize,
    clients_per_round: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<usize>> {
    if clients_per_round == 0 || clients_per_round > num_clients {
        return Err(Error::invalid_config(
            "clients_per_round",
            format!("S must be in 1..={} (N)", num_clients),
        ));
    }
    let mut ids = rand::seq::index::sample(rng, num_clients, clients_per_round).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// One client's displacement after local SGD, plus its drift sum.
fn client_update<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    client: usize,
) -> Result<(ParamVector<S>, f64)> {
    let mut rng = stream(ctx.cfg.master_seed, StreamKind::Client, round, client);
    let (end, sq_sum) = sgd_with_drift(
        ctx.model,
        &ctx.clients[client],
        x,
        x,
        ctx.cfg.local_lr,
        ctx.cfg.local_steps,
        ctx.cfg.batch_size,
        &mut rng,
    )?;
    Ok((end.sub(x)?, sq_sum))
}

struct Aggregation<S: Scalar> {
    sampled: Vec<usize>,
    /// Mean client displacement.
    delta: ParamVector<S>,
    client_sq_sum: f64,
    clients_counted: usize,
    exact: bool,
}

/// Steps 1-3 of a round: sampling, local updates, averaging.
fn aggregate_clients<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    drift: DriftMode,
) -> Result<Aggregation<S>> {
    let cfg = ctx.cfg;
    let mut rng = stream(cfg.master_seed, StreamKind::ClientSampling, round, 0);
    let sampled = sample_clients(cfg.num_clients, cfg.clients_per_round, &mut rng)?;

    let updates: Vec<(ParamVector<S>, f64)> = sampled
        .par_iter()
        .map(|&i| client_update(ctx, x, round, i))
        .collect::<Result<_>>()?;

    let mut delta = ParamVector::zeros(x.dim());
    let mut client_sq_sum = 0.0;
    for (d, sq) in &updates {
        delta.add_scaled(S::one(), d)?;
        client_sq_sum += sq;
    }
    delta.scale(S::from_f64(1.0 / sampled.len() as f64));

    let (clients_counted, exact) = match drift {
        DriftMode::Exact => {
            let rest: Vec<usize> =
                (0..cfg.num_clients).filter(|i| !sampled.contains(i)).collect();
            let extra: Vec<f64> = rest
                .par_iter()
                .map(|&i| client_update(ctx, x, round, i).map(|(_, sq)| sq))
                .collect::<Result<_>>()?;
            for sq in extra {
                client_sq_sum += sq;
            }
            (cfg.num_clients, true)
        }
        _ => (sampled.len(), false),
    };

    Ok(Aggregation { sampled, delta, client_sq_sum, clients_counted, exact })
}

fn round_result<S: Scalar>(
    cfg: &FederationConfig,
    round: usize,
    agg: &Aggregation<S>,
    next: &ParamVector<S>,
    update_norm: f64,
    server: Option<(f64, usize)>,
    drift: DriftMode,
) -> RoundResult {
    let drift_record = match drift {
        DriftMode::Off => None,
        _ => Some(DriftRecord {
            client_sq_sum: agg.client_sq_sum,
            clients_counted: agg.clients_counted,
            local_steps: cfg.local_steps,
            server_sq_sum: server.map(|(sq, _)| sq),
            server_steps: server.map(|(_, k0)| k0).unwrap_or(0),
            exact: agg.exact,
        }),
    };
    RoundResult {
        round,
        sampled: agg.sampled.clone(),
        update_norm,
        params_digest: next.digest(),
        drift: drift_record,
    }
}

/// One round of the incremental scheme. With `gamma == 0` the server phase
/// is skipped entirely, which makes the round identical to [`fedavg_round`].
pub fn fsl_round<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    drift: DriftMode,
) -> Result<(ParamVector<S>, RoundResult)> {
    if !ctx.cfg.has_server_phase() {
        return fedavg_round(ctx, x, round, drift);
    }
    let cfg = ctx.cfg;
    let server_data = ctx.server_data.ok_or_else(|| {
        Error::invalid_config("server_data", "fsl requires a server dataset")
    })?;
    let agg = aggregate_clients(ctx, x, round, drift)?;
    let mut aggregated = x.clone();
    aggregated.add_scaled(S::from_f64(cfg.global_lr), &agg.delta)?;

    let mut rng = stream(cfg.master_seed, StreamKind::Server, round, 0);
    let (next, server_sq) = sgd_with_drift(
        ctx.model,
        server_data,
        &aggregated,
        x,
        cfg.gamma * cfg.server_lr,
        cfg.server_steps,
        cfg.server_batch_size,
        &mut rng,
    )?;
    let update_norm = agg.delta.norm().as_f64();
    let result = round_result(
        cfg,
        round,
        &agg,
        &next,
        update_norm,
        Some((server_sq, cfg.server_steps)),
        drift,
    );
    Ok((next, result))
}

/// One round of federated averaging: aggregation only.
pub fn fedavg_round<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    drift: DriftMode,
) -> Result<(ParamVector<S>, RoundResult)> {
    let cfg = ctx.cfg;
    let agg = aggregate_clients(ctx, x, round, drift)?;
    let mut next = x.clone();
    next.add_scaled(S::from_f64(cfg.global_lr), &agg.delta)?;
    let update_norm = agg.delta.norm().as_f64();
    let result = round_result(cfg, round, &agg, &next, update_norm, None, drift);
    Ok((next, result))
}

/// One data-sharing round: federated averaging over pre-augmented clients.
/// Build them with [`augment_clients`]; with an empty server set this is
/// exactly [`fedavg_round`].
pub fn ds_round<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    drift: DriftMode,
) -> Result<(ParamVector<S>, RoundResult)> {
    fedavg_round(ctx, x, round, drift)
}

/// One round of the non-incremental variant: the server displacement is
/// taken from the round-start parameters and mixed into the client average
/// with weight `fslp_server_weight`.
pub fn fslp_round<S: Scalar>(
    ctx: &RoundCtx<'_, S>,
    x: &ParamVector<S>,
    round: usize,
    drift: DriftMode,
) -> Result<(ParamVector<S>, RoundResult)> {
    let cfg = ctx.cfg;
    let agg = aggregate_clients(ctx, x, round, drift)?;
    let w = S::from_f64(cfg.fslp_server_weight);
    let mut combined = agg.delta.clone();
    combined.scale(S::one() - w);

    let server = if cfg.has_server_phase() {
        let server_data = ctx.server_data.ok_or_else(|| {
            Error::invalid_config("server_data", "fslp requires a server dataset")
        })?;
        let mut rng = stream(cfg.master_seed, StreamKind::Server, round, 0);
        let (end, server_sq) = sgd_with_drift(
            ctx.model,
            server_data,
            x,
            x,
            cfg.gamma * cfg.server_lr,
            cfg.server_steps,
            cfg.server_batch_size,
            &mut rng,
        )?;
        combined.add_scaled(w, &end.sub(x)?)?;
        Some((server_sq, cfg.server_steps))
    } else {
        None
    };

    let mut next = x.clone();
    next.add_scaled(S::from_f64(cfg.global_lr), &combined)?;
    let update_norm = combined.norm().as_f64();
    let result = round_result(cfg, round, &agg, &next, update_norm, server, drift);
    Ok((next, result))
}

/// Clones every client dataset with the server samples appended.
pub fn augment_clients<S: Scalar>(
    clients: &[LabeledDataset<S>],
    server: &LabeledDataset<S>,
) -> Result<Vec<LabeledDataset<S>>> {
    clients.iter().map(|c| c.merged_with(server)).collect()
}

/// SGD on the server dataset before round 0: `epochs * ceil(n0 / batch)`
/// steps with independently drawn batches.
pub fn pretrain_server<S: Scalar>(
    start: &ParamVector<S>,
    server_data: &LabeledDataset<S>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    model: &LossModel<S>,
    rng: &mut ChaCha12Rng,
) -> Result<ParamVector<S>> {
    if server_data.is_empty() {
        return Err(Error::EmptyDataset { context: "pretraining".into() });
    }
    let steps_per_epoch = server_data.len().div_ceil(batch_size);
    local_sgd(start, lr, epochs * steps_per_epoch, server_data, model, batch_size, rng)
}

/// Options of [`run`] that are not part of the algorithm definition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub drift_mode: DriftMode,
    /// Gradient diagnostics every this many rounds (the last round is always
    /// included). Loss, accuracy and drift are recorded every round.
    pub metrics_stride: usize,
    pub rolling_window: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { drift_mode: DriftMode::Sampled, metrics_stride: 1, rolling_window: 20 }
    }
}

impl RunOptions {
    fn validate(&self) -> Result<()> {
        if self.metrics_stride == 0 {
            return Err(Error::invalid_config("metrics_stride", "must be at least 1"));
        }
        if self.rolling_window == 0 {
            return Err(Error::invalid_config("rolling_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// A finished run: per-round trace and results, plus both endpoints of the
/// parameter trajectory.
#[derive(Clone, Debug)]
pub struct RunOutput<S: Scalar> {
    pub trace: Vec<RoundTrace>,
    pub rounds: Vec<RoundResult>,
    pub initial_params: ParamVector<S>,
    pub final_params: ParamVector<S>,
}

/// The exact parameters a run starts its first round from: the seeded
/// initialisation, pushed through server pre-training when configured.
pub fn starting_params<S: Scalar>(cfg: &FederationConfig, world: &World<S>) -> Result<ParamVector<S>> {
    let x = world
        .model
        .init_params(&mut stream(cfg.master_seed, StreamKind::Init, 0, 0));
    match &cfg.pretrain {
        Some(p) => {
            let server = world.server_data.as_ref().ok_or_else(|| {
                Error::invalid_config("pretrain", "pre-training requires a server dataset")
            })?;
            pretrain_server(
                &x,
                server,
                p.epochs,
                p.lr,
                cfg.server_batch_size,
                &world.model,
                &mut stream(cfg.master_seed, StreamKind::Pretrain, 0, 0),
            )
        }
        None => Ok(x),
    }
}

/// Runs a full experiment: init, optional pretraining, `cfg.rounds` rounds,
/// and per-round diagnostics against the original partition.
pub fn run<S: Scalar>(cfg: &FederationConfig, world: &World<S>, opts: &RunOptions) -> Result<RunOutput<S>> {
    cfg.validate()?;
    world.validate(cfg)?;
    opts.validate()?;

    let mut x = starting_params(cfg, world)?;
    let initial_params = x.clone();

    let augmented;
    let round_clients: &[LabeledDataset<S>] = match cfg.algorithm {
        Algorithm::DataSharing => {
            let server = world.server_data.as_ref().expect("validated above");
            augmented = augment_clients(&world.clients, server)?;
            for (i, c) in augmented.iter().enumerate() {
                if cfg.batch_size > c.len() {
                    return Err(Error::BatchSize { batch: cfg.batch_size, available: c.len() });
                }
                debug_assert!(c.len() == world.clients[i].len() + server.len());
            }
            &augmented
        }
        _ => &world.clients,
    };
    let ctx = RoundCtx { cfg, model: &world.model, clients: round_clients, server_data: world.server_data.as_ref() };

    let mut trace = Vec::with_capacity(cfg.rounds);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let (next, result) = match cfg.algorithm {
            Algorithm::Fsl => fsl_round(&ctx, &x, t, opts.drift_mode)?,
            Algorithm::FedAvg => fedavg_round(&ctx, &x, t, opts.drift_mode)?,
            Algorithm::DataSharing => ds_round(&ctx, &x, t, opts.drift_mode)?,
            Algorithm::FslP => fslp_round(&ctx, &x, t, opts.drift_mode)?,
        };
        next.check_finite(&format!("parameters after round {}", t))?;
        x = next;
        trace.push(trace_row(cfg, world, opts, t, &x, &result)?);
        rounds.push(result);
    }

    let accs: Option<Vec<f64>> = trace.iter().map(|r| r.test_acc).collect();
    if let Some(accs) = accs {
        let rolling = metrics::rolling_accuracy(&accs, opts.rolling_window)?;
        for (row, r) in trace.iter_mut().zip(rolling) {
            row.rolling_acc = Some(r);
        }
    }

    Ok(RunOutput { trace, rounds, initial_params, final_params: x })
}

fn trace_row<S: Scalar>(
    cfg: &FederationConfig,
    world: &World<S>,
    opts: &RunOptions,
    t: usize,
    x: &ParamVector<S>,
    result: &RoundResult,
) -> Result<RoundTrace> {
    let model = &world.model;
    let train_loss = metrics::objective_f(model, x, &world.clients)?;
    let (test_loss, test_acc) = match &world.test_data {
        Some(test) => (
            Some(model.loss(x, test)?.as_f64()),
            model.accuracy(x, test)?,
        ),
        None => (None, None),
    };

    let on_stride = t % opts.metrics_stride == 0 || t + 1 == cfg.rounds;
    let mut row = RoundTrace {
        round: t,
        train_loss,
        test_loss,
        test_acc,
        rolling_acc: None,
        grad_norm_f: None,
        grad_norm_ftilde: None,
        xi_sq: None,
        g_sq: None,
        client_drift: None,
        server_drift: None,
        f_tilde: None,
    };
    if on_stride {
        row.grad_norm_f = Some(metrics::grad_f(model, x, &world.clients)?.norm().as_f64());
        let dis = metrics::grad_dissimilarity(model, x, &world.clients, world.server_data.as_ref())?;
        row.g_sq = Some(dis.g_sq);
        row.xi_sq = dis.xi_sq;
        if let Some(server) = &world.server_data {
            row.grad_norm_ftilde =
                Some(metrics::grad_ftilde(model, x, &world.clients, server, cfg.gamma)?.norm().as_f64());
            row.f_tilde = Some(metrics::objective_ftilde(model, x, &world.clients, server, cfg.gamma)?);
        }
    }
    if let Some(record) = &result.drift {
        let terms = metrics::drift_terms(Some(record))?;
        row.client_drift = Some(terms.client);
        row.server_drift = terms.server;
    }
    Ok(row)
}
