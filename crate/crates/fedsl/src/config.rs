//! Declarative experiment configuration: a single TOML file describes the
//! dataset, the model, the federation schedule, and the run matrix
//! (algorithms x gamma values x seeds). Parsing applies the documented
//! defaults and validates everything up front, naming the offending field.
//!
//! ```toml
//! [dataset]
//! kind = "blobs"
//! num_classes = 5
//! dim = 10
//! train_per_class = 400
//! test_per_class = 200
//! spread = 1.0
//!
//! [dataset.partition]
//! classes_per_client = 1
//!
//! [dataset.server]
//! kind = "iid_subsample"
//! n0 = 100
//!
//! [model]
//! kind = "softmax"
//!
//! [federation]
//! algorithms = ["fsl", "fedavg"]
//! gammas = [1.0]
//! num_clients = 20
//! clients_per_round = 5
//! local_steps = 5
//! batch_size = 20
//! local_lr = 0.05
//! rounds = 300
//!
//! [run]
//! seeds = [1, 2, 3]
//! out_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{
    build_server_data, gen_blobs, gen_blobs_test, partition_by_class, read_csv, BlobProfile,
    LabeledDataset, PartitionSpec, Sample, ServerDataSpec,
};
use crate::error::{Error, Result};
use crate::fedsim::{
    default_fslp_weight, default_global_lr, default_server_lr, Algorithm, DriftMode,
    FederationConfig, Pretrain, RunOptions, World,
};
use crate::model::LossModel;
use crate::param::ParamVector;

/// Raw `[dataset]` block.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpecRaw {
    pub kind: DatasetKind,
    // blobs
    pub num_classes: Option<usize>,
    pub dim: Option<usize>,
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: usize,
    pub spread: Option<f64>,
    // csv
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    // quadratic
    pub client_centers: Option<Vec<Vec<f64>>>,
    pub server_center: Option<Vec<f64>>,
    // shared
    pub partition: Option<PartitionBlock>,
    pub server: Option<ServerBlock>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Csv,
    Quadratic,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlock {
    pub classes_per_client: usize,
}

/// Raw `[dataset.server]` block.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerBlock {
    pub kind: ServerKind,
    pub n0: Option<usize>,
    pub shift: Option<f64>,
    #[serde(default)]
    pub drop_classes: Vec<usize>,
    pub clients: Option<usize>,
    pub samples_each: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    IidSubsample,
    FromClients,
    Shifted,
}

/// Raw `[model]` block.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecRaw {
    pub kind: ModelKind,
    pub hidden: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Softmax,
    Mlp,
}

/// Raw `[federation]` block.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpecRaw {
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    pub num_clients: Option<usize>,
    pub clients_per_round: Option<usize>,
    pub local_steps: Option<usize>,
    pub client_epochs: Option<usize>,
    pub server_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub server_batch_size: Option<usize>,
    pub local_lr: f64,
    pub global_lr: Option<f64>,
    pub server_lr: Option<f64>,
    pub rounds: usize,
    pub fslp_server_weight: Option<f64>,
    pub pretrain: Option<Pretrain>,
}

/// Raw `[run]` block.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpecRaw {
    pub seeds: Option<Vec<u64>>,
    pub metrics_stride: Option<usize>,
    pub diagnostics: Option<DriftMode>,
    pub out_dir: Option<PathBuf>,
    pub rolling_window: Option<usize>,
}

impl Default for RunSpecRaw {
    fn default() -> Self {
        RunSpecRaw {
            seeds: None,
            metrics_stride: None,
            diagnostics: None,
            out_dir: None,
            rolling_window: None,
        }
    }
}

/// The whole configuration file, as written.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpecRaw,
    pub model: ModelSpecRaw,
    pub federation: FederationSpecRaw,
    #[serde(default)]
    pub run: RunSpecRaw,
}

/// Parses and fully resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<ResolvedExperiment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    // paths in the file are relative to the file
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(spec, &base)
}

/// Dataset source after validation: what to build per seed.
#[derive(Clone, Debug)]
enum DataSource {
    Blobs { profile: BlobProfile, train_per_class: usize, test_per_class: usize },
    Csv { train: LabeledDataset<f64>, test: Option<LabeledDataset<f64>> },
    Quadratic { client_centers: Vec<Vec<f64>>, server_center: Option<Vec<f64>> },
}

/// One (algorithm, gamma, seed) cell of the run matrix.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub cfg: FederationConfig,
    /// Output file stem, e.g. `fsl_g1_seed3`.
    pub stem: String,
}

/// A validated experiment with all defaults applied.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    source: DataSource,
    partition: Option<PartitionBlock>,
    server: Option<ServerBlock>,
    model: ModelSpecRaw,
    /// Template configuration; per-plan fields are overridden in `plans`.
    base_cfg: FederationConfig,
    gammas: Vec<f64>,
    algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub options: RunOptions,
}

fn require<T: Copy>(v: Option<T>, field: &str, hint: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid_config(field, format!("required {hint}")))
}

fn gamma_tag(gamma: f64) -> String {
    let s = format!("{gamma}");
    s.replace('.', "p").replace('-', "m")
}

fn resolve(spec: ExperimentSpec, base: &Path) -> Result<ResolvedExperiment> {
    let ds = &spec.dataset;

    // --- dataset ---------------------------------------------------------
    let source = match ds.kind {
        DatasetKind::Blobs => {
            let num_classes = require(ds.num_classes, "dataset.num_classes", "for blobs")?;
            let dim = require(ds.dim, "dataset.dim", "for blobs")?;
            let train_per_class =
                require(ds.train_per_class, "dataset.train_per_class", "for blobs")?;
            if ds.train.is_some() || ds.test.is_some() || ds.client_centers.is_some() {
                return Err(Error::invalid_config("dataset", "blobs take no paths or centres"));
            }
            DataSource::Blobs {
                profile: BlobProfile { num_classes, dim, spread: ds.spread.unwrap_or(1.0) },
                train_per_class,
                test_per_class: ds.test_per_class,
            }
        }
        DatasetKind::Csv => {
            let train_path = ds
                .train
                .as_ref()
                .ok_or_else(|| Error::invalid_config("dataset.train", "required for csv"))?;
            let train = read_csv::<f64>(&base.join(train_path))?;
            let test = match &ds.test {
                Some(p) => Some(read_csv::<f64>(&base.join(p))?),
                None => None,
            };
            if let Some(t) = &test {
                if t.feature_dim() != train.feature_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: train.feature_dim(),
                        got: t.feature_dim(),
                    });
                }
            }
            DataSource::Csv { train, test }
        }
        DatasetKind::Quadratic => {
            let centers = ds
                .client_centers
                .clone()
                .ok_or_else(|| Error::invalid_config("dataset.client_centers", "required for quadratic"))?;
            if centers.is_empty() {
                return Err(Error::invalid_config("dataset.client_centers", "must be non-empty"));
            }
            let d = centers[0].len();
            if d == 0 {
                return Err(Error::invalid_config("dataset.client_centers", "centres must be non-empty vectors"));
            }
            for c in &centers {
                if c.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: c.len() });
                }
            }
            if let Some(c0) = &ds.server_center {
                if c0.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: c0.len() });
                }
            }
            if ds.partition.is_some() || ds.server.is_some() {
                return Err(Error::invalid_config(
                    "dataset",
                    "quadratic centres define clients and server directly; drop the partition/server blocks",
                ));
            }
            DataSource::Quadratic { client_centers: centers, server_center: ds.server_center.clone() }
        }
    };

    // --- dataset-derived sizes -------------------------------------------
    let n_total = match &source {
        DataSource::Blobs { profile, train_per_class, .. } => profile.num_classes * train_per_class,
        DataSource::Csv { train, .. } => train.len(),
        DataSource::Quadratic { client_centers, .. } => client_centers.len(),
    };

    if matches!(source, DataSource::Blobs { .. } | DataSource::Csv { .. }) && ds.partition.is_none() {
        return Err(Error::invalid_config("dataset.partition", "required for blobs and csv"));
    }

    // --- model -----------------------------------------------------------
    match spec.model.kind {
        ModelKind::Quadratic => {
            if !matches!(source, DataSource::Quadratic { .. }) {
                return Err(Error::invalid_config("model.kind", "quadratic model needs a quadratic dataset"));
            }
        }
        ModelKind::Softmax => {
            if matches!(source, DataSource::Quadratic { .. }) {
                return Err(Error::invalid_config("model.kind", "classification models need a labelled dataset"));
            }
            if spec.model.hidden.is_some() {
                return Err(Error::invalid_config("model.hidden", "only the mlp model takes a hidden width"));
            }
        }
        ModelKind::Mlp => {
            if matches!(source, DataSource::Quadratic { .. }) {
                return Err(Error::invalid_config("model.kind", "classification models need a labelled dataset"));
            }
            let h = require(spec.model.hidden, "model.hidden", "for mlp")?;
            if h == 0 {
                return Err(Error::invalid_config("model.hidden", "must be at least 1"));
            }
        }
    }

    // --- federation ------------------------------------------------------
    let fed = &spec.federation;
    if fed.algorithms.is_empty() {
        return Err(Error::invalid_config("federation.algorithms", "must list at least one algorithm"));
    }
    let num_clients = match &source {
        DataSource::Quadratic { client_centers, .. } => {
            let n = client_centers.len();
            if let Some(given) = fed.num_clients {
                if given != n {
                    return Err(Error::invalid_config(
                        "federation.num_clients",
                        format!("{} centres define {} clients", n, n),
                    ));
                }
            }
            n
        }
        _ => require(fed.num_clients, "federation.num_clients", "for blobs and csv")?,
    };
    if num_clients == 0 {
        return Err(Error::invalid_config("federation.num_clients", "must be at least 1"));
    }
    let clients_per_round = fed.clients_per_round.unwrap_or(num_clients);
    if clients_per_round == 0 || clients_per_round > num_clients {
        return Err(Error::invalid_config(
            "federation.clients_per_round",
            format!("must be in 1..={num_clients}"),
        ));
    }

    let batch_size = match &source {
        DataSource::Quadratic { .. } => fed.batch_size.unwrap_or(1),
        _ => require(fed.batch_size, "federation.batch_size", "for blobs and csv")?,
    };
    if batch_size == 0 {
        return Err(Error::invalid_config("federation.batch_size", "must be at least 1"));
    }

    // client steps: given directly or derived from epochs over the local shard
    let n_i = n_total / num_clients.max(1);
    let local_steps = match (fed.local_steps, fed.client_epochs) {
        (Some(k), None) => k,
        (None, Some(e)) => {
            if e == 0 {
                return Err(Error::invalid_config("federation.client_epochs", "must be at least 1"));
            }
            (e * n_i).div_ceil(batch_size)
        }
        (Some(_), Some(_)) => {
            return Err(Error::invalid_config(
                "federation.local_steps",
                "give either local_steps or client_epochs, not both",
            ))
        }
        (None, None) => {
            return Err(Error::invalid_config(
                "federation.local_steps",
                "either local_steps or client_epochs is required",
            ))
        }
    };
    if local_steps == 0 {
        return Err(Error::invalid_config("federation.local_steps", "must be at least 1"));
    }

    // server data size, needed for epoch-derived server steps
    let n0 = match (&source, &ds.server) {
        (DataSource::Quadratic { server_center, .. }, _) => server_center.as_ref().map(|_| 1),
        (_, Some(block)) => Some(match block.kind {
            ServerKind::IidSubsample | ServerKind::Shifted => {
                require(block.n0, "dataset.server.n0", "for this server kind")?
            }
            ServerKind::FromClients => {
                let c = require(block.clients, "dataset.server.clients", "for from_clients")?;
                let s = require(block.samples_each, "dataset.server.samples_each", "for from_clients")?;
                c * s
            }
        }),
        (_, None) => None,
    };

    let server_batch_size = match fed.server_batch_size {
        Some(b) => b,
        None => match n0 {
            Some(n0) => batch_size.min(n0),
            None => batch_size,
        },
    };

    let server_steps = match (fed.server_steps, fed.client_epochs, n0) {
        (Some(k0), _, _) => k0,
        (None, Some(e_c), Some(n0)) if n0 > 0 => {
            // server epochs scale with the data imbalance between one client
            // shard and the server set
            let e_s = (n_total as f64 / (num_clients as f64 * n0 as f64) * e_c as f64).ceil() as usize;
            (e_s.max(1) * n0).div_ceil(server_batch_size)
        }
        _ => local_steps,
    };
    if server_steps == 0 {
        return Err(Error::invalid_config("federation.server_steps", "must be at least 1"));
    }

    if !(fed.local_lr.is_finite() && fed.local_lr >= 0.0) {
        return Err(Error::invalid_config("federation.local_lr", "must be finite and non-negative"));
    }
    let global_lr = fed.global_lr.unwrap_or_else(|| default_global_lr(clients_per_round));
    let server_lr = fed
        .server_lr
        .unwrap_or_else(|| default_server_lr(local_steps, server_steps, fed.local_lr, global_lr));
    let fslp_server_weight =
        fed.fslp_server_weight.unwrap_or_else(|| default_fslp_weight(clients_per_round));

    let wants_gamma = fed
        .algorithms
        .iter()
        .any(|a| matches!(a, Algorithm::Fsl | Algorithm::FslP));
    let gammas = if fed.gammas.is_empty() { vec![1.0] } else { fed.gammas.clone() };
    for &g in &gammas {
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::invalid_config("federation.gammas", "must be finite and non-negative"));
        }
    }
    if !wants_gamma && !fed.gammas.is_empty() {
        return Err(Error::invalid_config(
            "federation.gammas",
            "only the fsl and fslp algorithms use gamma",
        ));
    }

    if fed.rounds == 0 {
        return Err(Error::invalid_config("federation.rounds", "must be at least 1"));
    }

    let base_cfg = FederationConfig {
        algorithm: fed.algorithms[0],
        num_clients,
        clients_per_round,
        local_steps,
        server_steps,
        batch_size,
        server_batch_size,
        local_lr: fed.local_lr,
        global_lr,
        server_lr,
        gamma: 0.0,
        rounds: fed.rounds,
        master_seed: 0,
        fslp_server_weight,
        pretrain: fed.pretrain,
    };

    // --- run block ---------------------------------------------------------
    let quadratic = matches!(source, DataSource::Quadratic { .. });
    let seeds = spec.run.seeds.clone().unwrap_or_else(|| vec![1]);
    if seeds.is_empty() {
        return Err(Error::invalid_config("run.seeds", "must list at least one seed"));
    }
    let options = RunOptions {
        drift_mode: spec
            .run
            .diagnostics
            .unwrap_or(if quadratic { DriftMode::Exact } else { DriftMode::Sampled }),
        metrics_stride: spec.run.metrics_stride.unwrap_or(if quadratic { 1 } else { 10 }),
        rolling_window: spec.run.rolling_window.unwrap_or(20),
    };
    if options.metrics_stride == 0 {
        return Err(Error::invalid_config("run.metrics_stride", "must be at least 1"));
    }
    if options.rolling_window == 0 {
        return Err(Error::invalid_config("run.rolling_window", "must be at least 1"));
    }

    let resolved = ResolvedExperiment {
        source,
        partition: ds.partition,
        server: ds.server.clone(),
        model: spec.model.clone(),
        base_cfg,
        gammas,
        algorithms: fed.algorithms.clone(),
        seeds,
        out_dir: base.join(spec.run.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))),
        options,
    };

    // fail fast on configuration errors that only surface when running:
    // build the first seed's world and validate it against every plan
    let world = resolved.build_world(resolved.seeds[0])?;
    for plan in resolved.plans() {
        world.validate(&plan.cfg)?;
    }
    Ok(resolved)
}

impl ResolvedExperiment {
    /// The run matrix: algorithms x gammas (server-using algorithms only) x seeds.
    pub fn plans(&self) -> Vec<RunPlan> {
        let mut plans = Vec::new();
        for &alg in &self.algorithms {
            let gammas: &[f64] = match alg {
                Algorithm::Fsl | Algorithm::FslP => &self.gammas,
                Algorithm::FedAvg | Algorithm::DataSharing => &[0.0],
            };
            for &gamma in gammas {
                for &seed in &self.seeds {
                    let mut cfg = self.base_cfg.clone();
                    cfg.algorithm = alg;
                    cfg.gamma = gamma;
                    cfg.master_seed = seed;
                    let stem = match alg {
                        Algorithm::Fsl | Algorithm::FslP => {
                            format!("{}_g{}_seed{}", alg.label(), gamma_tag(gamma), seed)
                        }
                        _ => format!("{}_seed{}", alg.label(), seed),
                    };
                    plans.push(RunPlan { cfg, stem });
                }
            }
        }
        plans
    }

    /// Builds the model, client shards, server set, and test set for a seed.
    pub fn build_world(&self, seed: u64) -> Result<World<f64>> {
        match &self.source {
            DataSource::Quadratic { client_centers, server_center } => {
                let d = client_centers[0].len();
                let singleton = |c: &Vec<f64>| {
                    LabeledDataset::with_dim(
                        vec![Sample { features: c.clone(), label: 0 }],
                        d,
                        1,
                    )
                };
                let clients = client_centers.iter().map(singleton).collect::<Result<Vec<_>>>()?;
                let server_data = server_center.as_ref().map(singleton).transpose()?;
                Ok(World {
                    model: LossModel::QuadraticConsensus { center: ParamVector::zeros(d) },
                    clients,
                    server_data,
                    test_data: None,
                })
            }
            DataSource::Blobs { profile, train_per_class, test_per_class } => {
                let train = gen_blobs::<f64>(
                    profile.num_classes,
                    *train_per_class,
                    profile.dim,
                    profile.spread,
                    seed,
                )?;
                let test = if *test_per_class > 0 {
                    Some(gen_blobs_test::<f64>(
                        profile.num_classes,
                        *test_per_class,
                        profile.dim,
                        profile.spread,
                        seed,
                    )?)
                } else {
                    None
                };
                self.assemble(train, test, Some(profile.spread), seed)
            }
            DataSource::Csv { train, test } => self.assemble(train.clone(), test.clone(), None, seed),
        }
    }

    fn assemble(
        &self,
        train: LabeledDataset<f64>,
        test: Option<LabeledDataset<f64>>,
        blob_spread: Option<f64>,
        seed: u64,
    ) -> Result<World<f64>> {
        let partition = self
            .partition
            .as_ref()
            .ok_or_else(|| Error::invalid_config("dataset.partition", "required for blobs and csv"))?;
        let clients = partition_by_class(
            &train,
            &PartitionSpec {
                num_clients: self.base_cfg.num_clients,
                classes_per_client: partition.classes_per_client,
                seed,
            },
        )?;
        let server_data = match &self.server {
            Some(block) => {
                Some(build_server_data(&train, &clients, &block.to_spec(&train, blob_spread)?, seed)?)
            }
            None => None,
        };
        let model = match self.model.kind {
            ModelKind::Softmax => LossModel::SoftmaxRegression {
                input_dim: train.feature_dim(),
                num_classes: train.num_classes(),
            },
            ModelKind::Mlp => LossModel::Mlp1 {
                input_dim: train.feature_dim(),
                hidden: self.model.hidden.expect("validated at resolve time"),
                num_classes: train.num_classes(),
            },
            ModelKind::Quadratic => unreachable!("validated at resolve time"),
        };
        Ok(World { model, clients, server_data, test_data: test })
    }

    pub fn base_config(&self) -> &FederationConfig {
        &self.base_cfg
    }

    pub fn algorithms(&self) -> &[Algorithm] {
        &self.algorithms
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
}

impl ServerBlock {
    fn to_spec(&self, train: &LabeledDataset<f64>, blob_spread: Option<f64>) -> Result<ServerDataSpec> {
        Ok(match self.kind {
            ServerKind::IidSubsample => ServerDataSpec::IidSubsample {
                n0: require(self.n0, "dataset.server.n0", "for iid_subsample")?,
            },
            ServerKind::FromClients => ServerDataSpec::FromClients {
                num_clients: require(self.clients, "dataset.server.clients", "for from_clients")?,
                samples_each: require(
                    self.samples_each,
                    "dataset.server.samples_each",
                    "for from_clients",
                )?,
            },
            ServerKind::Shifted => {
                let spread = blob_spread.ok_or_else(|| {
                    Error::invalid_config("dataset.server.kind", "shifted requires a blobs dataset")
                })?;
                ServerDataSpec::Shifted {
                    n0: require(self.n0, "dataset.server.n0", "for shifted")?,
                    shift: require(self.shift, "dataset.server.shift", "for shifted")?,
                    profile: BlobProfile {
                        num_classes: train.num_classes(),
                        dim: train.feature_dim(),
                        spread,
                    },
                    drop_classes: self.drop_classes.clone(),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse_str(text: &str) -> Result<ResolvedExperiment> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        parse_config(&path)
    }

    const MINIMAL_BLOBS: &str = r#"
        [dataset]
        kind = "blobs"
        num_classes = 4
        dim = 3
        train_per_class = 30

        [dataset.partition]
        classes_per_client = 2

        [dataset.server]
        kind = "iid_subsample"
        n0 = 12

        [model]
        kind = "softmax"

        [federation]
        algorithms = ["fsl", "fedavg"]
        num_clients = 4
        clients_per_round = 4
        local_steps = 5
        batch_size = 10
        local_lr = 0.05
        rounds = 3
    "#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let exp = parse_str(MINIMAL_BLOBS).unwrap();
        let cfg = exp.base_config();
        assert_eq!(cfg.global_lr, 2.0); // sqrt(4)
        assert_eq!(cfg.server_steps, cfg.local_steps);
        assert_eq!(cfg.server_batch_size, 10); // min(batch, n0) = min(10, 12)
        assert!((cfg.server_lr - 0.05 * 2.0).abs() < 1e-15); // K = K0
        assert_eq!(exp.seeds, vec![1]);
        assert_eq!(exp.options.metrics_stride, 10);
        assert_eq!(exp.options.drift_mode, DriftMode::Sampled);
        assert_eq!(exp.options.rolling_window, 20);
        // fsl expands over the default gamma list, fedavg pins gamma = 0
        let plans = exp.plans();
        assert_eq!(plans.len(), 2);
        assert_eq!(plans[0].stem, "fsl_g1_seed1");
        assert_eq!(plans[0].cfg.gamma, 1.0);
        assert_eq!(plans[1].stem, "fedavg_seed1");
        assert_eq!(plans[1].cfg.gamma, 0.0);
    }

    #[test]
    fn participation_defaults_to_all_clients() {
        let text = MINIMAL_BLOBS.replace("clients_per_round = 4\n", "");
        let exp = parse_str(&text).unwrap();
        assert_eq!(exp.base_config().clients_per_round, 4);
        assert_eq!(exp.base_config().global_lr, 2.0);
    }

    #[test]
    fn s_larger_than_n_is_rejected_naming_the_field() {
        let text = MINIMAL_BLOBS.replace("clients_per_round = 4", "clients_per_round = 9");
        let err = parse_str(&text).unwrap_err().to_string();
        assert!(err.contains("clients_per_round"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL_BLOBS.replace("local_lr = 0.05", "local_lr = 0.05\nlocal_lrr = 1.0");
        assert!(parse_str(&text).is_err());
    }

    #[test]
    fn epochs_translate_to_steps() {
        // n_i = 120 / 4 = 30, batch 10 -> 2 epochs = 6 steps
        let text = MINIMAL_BLOBS.replace("local_steps = 5", "client_epochs = 2");
        let exp = parse_str(&text).unwrap();
        assert_eq!(exp.base_config().local_steps, 6);
        // E_s = ceil(120 / (4 * 12) * 2) = ceil(5) = 5 epochs over n0 = 12
        // at server batch 10 -> ceil(5 * 12 / 10) = 6 steps
        assert_eq!(exp.base_config().server_steps, 6);
    }

    #[test]
    fn quadratic_worlds_are_singletons() {
        let text = r#"
            [dataset]
            kind = "quadratic"
            client_centers = [[1.0, 0.0], [-1.0, 0.0]]
            server_center = [0.0, 0.0]

            [model]
            kind = "quadratic"

            [federation]
            algorithms = ["fsl"]
            gammas = [0.5, 1.0]
            local_steps = 4
            server_steps = 2
            local_lr = 0.01
            rounds = 5

            [run]
            seeds = [7, 8]
        "#;
        let exp = parse_str(text).unwrap();
        let world = exp.build_world(7).unwrap();
        assert_eq!(world.clients.len(), 2);
        assert_eq!(world.clients[0].len(), 1);
        assert!(world.server_data.is_some());
        assert_eq!(exp.base_config().num_clients, 2);
        assert_eq!(exp.base_config().batch_size, 1);
        assert_eq!(exp.options.metrics_stride, 1);
        assert_eq!(exp.options.drift_mode, DriftMode::Exact);
        let plans = exp.plans();
        assert_eq!(plans.len(), 4);
        assert_eq!(plans[0].stem, "fsl_g0p5_seed7");
        assert_eq!(plans[3].stem, "fsl_g1_seed8");
    }

    #[test]
    fn worlds_are_deterministic_per_seed() {
        let exp = parse_str(MINIMAL_BLOBS).unwrap();
        let a = exp.build_world(3).unwrap();
        let b = exp.build_world(3).unwrap();
        assert_eq!(a.clients.len(), b.clients.len());
        for (x, y) in a.clients.iter().zip(&b.clients) {
            assert_eq!(x.len(), y.len());
            for (sa, sb) in x.iter().zip(y.iter()) {
                assert_eq!(sa.features, sb.features);
                assert_eq!(sa.label, sb.label);
            }
        }
        let c = exp.build_world(4).unwrap();
        let same = a
            .clients
            .iter()
            .zip(&c.clients)
            .all(|(x, y)| x.iter().zip(y.iter()).all(|(sa, sb)| sa.features == sb.features));
        assert!(!same);
    }

    #[test]
    fn missing_required_fields_name_the_field() {
        let text = MINIMAL_BLOBS.replace("num_classes = 4\n", "");
        let err = parse_str(&text).unwrap_err().to_string();
        assert!(err.contains("num_classes"), "{err}");

        let text = MINIMAL_BLOBS.replace("local_steps = 5", "");
        let err = parse_str(&text).unwrap_err().to_string();
        assert!(err.contains("local_steps"), "{err}");
    }

    #[test]
    fn ds_requires_server_block() {
        let text = MINIMAL_BLOBS
            .replace("algorithms = [\"fsl\", \"fedavg\"]", "algorithms = [\"ds\"]")
            .replace(
                "[dataset.server]\n        kind = \"iid_subsample\"\n        n0 = 12\n",
                "",
            );
        assert!(parse_str(&text).is_err());
    }

    #[test]
    fn shifted_server_inherits_the_blob_spread() {
        let text = MINIMAL_BLOBS
            .replace("train_per_class = 30", "train_per_class = 30\n        spread = 0.05")
            .replace(
                "[dataset.server]\n        kind = \"iid_subsample\"\n        n0 = 12\n",
                "[dataset.server]\n        kind = \"shifted\"\n        shift = 0.0\n        n0 = 40\n",
            );
        let exp = parse_str(&text).unwrap();
        let world = exp.build_world(3).unwrap();
        let server = world.server_data.as_ref().unwrap();
        // With shift 0 and the dataset's own spread (0.05), the per-class
        // server means must sit within a few noise sigma of the layout means.
        let means = crate::data::blob_means(4, 3);
        for (class, idx) in server.indices_by_class().iter().enumerate() {
            assert!(!idx.is_empty());
            for coord in 0..2 {
                let avg: f64 =
                    idx.iter().map(|&i| server.get(i).features[coord]).sum::<f64>() / idx.len() as f64;
                let sigma_of_mean = 0.05 / (idx.len() as f64).sqrt();
                assert!(
                    (avg - means[class][coord]).abs() < 6.0 * sigma_of_mean,
                    "class {class} coord {coord}: {avg} vs {}",
                    means[class][coord]
                );
            }
        }
    }

    #[test]
    fn shifted_server_requires_a_blob_dataset() {
        use crate::data::write_csv;
        let dir = tempfile::tempdir().unwrap();
        let data = gen_blobs::<f64>(2, 20, 3, 0.5, 9).unwrap();
        write_csv(&data, &dir.path().join("train.csv")).unwrap();
        let text = r#"
            [dataset]
            kind = "csv"
            train = "train.csv"

            [dataset.partition]
            classes_per_client = 1

            [dataset.server]
            kind = "shifted"
            shift = 1.0
            n0 = 10

            [model]
            kind = "softmax"

            [federation]
            algorithms = ["fsl"]
            num_clients = 2
            local_steps = 2
            batch_size = 5
            local_lr = 0.1
            rounds = 2
        "#;
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, text).unwrap();
        let err = parse_config(&path).unwrap_err().to_string();
        assert!(err.contains("shifted requires a blobs dataset"), "{err}");
    }

    #[test]
    fn csv_roundtrip_through_config() {
        use crate::data::write_csv;
        let dir = tempfile::tempdir().unwrap();
        let data = gen_blobs::<f64>(2, 20, 3, 0.5, 9).unwrap();
        write_csv(&data, &dir.path().join("train.csv")).unwrap();
        let text = r#"
            [dataset]
            kind = "csv"
            train = "train.csv"

            [dataset.partition]
            classes_per_client = 1

            [model]
            kind = "softmax"

            [federation]
            algorithms = ["fedavg"]
            num_clients = 2
            local_steps = 2
            batch_size = 5
            local_lr = 0.1
            rounds = 2
        "#;
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, text).unwrap();
        let exp = parse_config(&path).unwrap();
        let world = exp.build_world(1).unwrap();
        assert_eq!(world.clients.len(), 2);
        assert_eq!(world.clients[0].len() + world.clients[1].len(), 40);
    }
}
