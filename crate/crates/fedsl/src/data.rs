//! Datasets: synthetic blob generation, class-based partitioning, and the
//! construction of the server-held dataset.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::accum::canonical_sum;
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::param::ParamVector;
use crate::rng::{stream, StreamKind};
use crate::scalar::Scalar;

/// Radius of the circle the blob class means sit on.
/// Radius of the circle the class means sit on. Together with `spread` it
/// sets the curvature of the resulting classification problems: logits and
/// gradients scale with the feature magnitude, so a small radius puts the
/// reference scenarios in the slowly-converging regime where differences in
/// per-round progress between algorithms are visible within a few hundred
/// rounds rather than being washed out by immediate saturation.
const BLOB_RADIUS: f64 = 0.2;

/// One labelled sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<S: Scalar> {
    pub features: Vec<S>,
    pub label: usize,
}

/// An immutable labelled dataset with a fixed feature dimension and a
/// declared number of classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<S: Scalar> {
    samples: Vec<Sample<S>>,
    feature_dim: usize,
    num_classes: usize,
}

impl<S: Scalar> LabeledDataset<S> {
    /// Builds a dataset, validating labels and feature dimensions.
    pub fn new(samples: Vec<Sample<S>>, num_classes: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::EmptyDataset {
            context: "LabeledDataset::new (use LabeledDataset::empty for empty sets)".into(),
        })?;
        let feature_dim = first.features.len();
        Self::with_dim(samples, feature_dim, num_classes)
    }

    /// Like [`LabeledDataset::new`] but with an explicit feature dimension,
    /// so the dataset may be empty.
    pub fn with_dim(samples: Vec<Sample<S>>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid_config("num_classes", "must be at least 1"));
        }
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, got: s.features.len() });
            }
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange { label: s.label, num_classes });
            }
        }
        Ok(LabeledDataset { samples, feature_dim, num_classes })
    }

    pub fn empty(feature_dim: usize, num_classes: usize) -> Self {
        LabeledDataset { samples: Vec::new(), feature_dim, num_classes }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, index: usize) -> &Sample<S> {
        &self.samples[index]
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample<S>> {
        self.samples.iter()
    }

    /// New dataset holding clones of the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InfeasiblePartition {
                    reason: format!("index {} out of range for {} samples", i, self.len()),
                });
            }
            samples.push(self.samples[i].clone());
        }
        Ok(LabeledDataset { samples, feature_dim: self.feature_dim, num_classes: self.num_classes })
    }

    /// Concatenation of `self` and `other`.
    pub fn merged_with(&self, other: &Self) -> Result<Self> {
        if self.feature_dim != other.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: other.feature_dim });
        }
        if self.num_classes != other.num_classes {
            return Err(Error::invalid_config(
                "num_classes",
                format!("cannot merge datasets with {} and {} classes", self.num_classes, other.num_classes),
            ));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Ok(LabeledDataset { samples, feature_dim: self.feature_dim, num_classes: self.num_classes })
    }

    /// Sample indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        by_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(|v| v.len()).collect()
    }
}

/// How the full training set is split across clients.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Number of distinct classes each client holds.
    pub classes_per_client: usize,
    pub seed: u64,
}

/// How the small server-held dataset is constructed.
#[derive(Clone, Debug, PartialEq)]
pub enum ServerDataSpec {
    /// Label-stratified subsample of the full training set.
    IidSubsample { n0: usize },
    /// Union of small donations from a few clients.
    FromClients { num_clients: usize, samples_each: usize },
    /// Freshly generated blobs whose class means are translated by
    /// `shift` blob standard deviations along the first feature axis,
    /// optionally with some classes dropped entirely.
    Shifted { n0: usize, shift: f64, profile: BlobProfile, drop_classes: Vec<usize> },
}

/// Shape of a blob generator, shared between training and server sets.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobProfile {
    pub num_classes: usize,
    pub dim: usize,
    pub spread: f64,
}

/// Class means evenly spaced on a circle of radius [`BLOB_RADIUS`] in the
/// first two feature coordinates.
pub(crate) fn blob_means(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let theta = 2.0 * std::f64::consts::PI * (c as f64) / (num_classes as f64);
            let mut mean = vec![0.0; dim];
            mean[0] = BLOB_RADIUS * theta.cos();
            if dim > 1 {
                mean[1] = BLOB_RADIUS * theta.sin();
            }
            mean
        })
        .collect()
}

fn check_blob_args(num_classes: usize, dim: usize, spread: f64) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::invalid_config("num_classes", "must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::invalid_config("dim", "must be at least 1"));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::invalid_config("spread", "must be finite and non-negative"));
    }
    Ok(())
}

fn gen_from_means<S: Scalar>(
    means: &[(usize, Vec<f64>)],
    counts: &[usize],
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    kind: StreamKind,
) -> LabeledDataset<S> {
    let mut samples = Vec::new();
    for ((label, mean), &count) in means.iter().zip(counts) {
        let mut rng = stream(seed, kind, 0, *label);
        for _ in 0..count {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    S::from_f64(m + spread * z)
                })
                .collect();
            samples.push(Sample { features, label: *label });
        }
    }
    LabeledDataset { samples, feature_dim: dim, num_classes }
}

/// Gaussian blobs: `per_class` samples per class around means on a circle.
pub fn gen_blobs<S: Scalar>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset<S>> {
    gen_blobs_stream(num_classes, per_class, dim, spread, seed, StreamKind::DataGen)
}

/// Blobs from the same means but an independent stream, for held-out data.
pub fn gen_blobs_test<S: Scalar>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset<S>> {
    gen_blobs_stream(num_classes, per_class, dim, spread, seed, StreamKind::TestGen)
}

fn gen_blobs_stream<S: Scalar>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    kind: StreamKind,
) -> Result<LabeledDataset<S>> {
    check_blob_args(num_classes, dim, spread)?;
    if per_class == 0 {
        return Err(Error::invalid_config("per_class", "must be at least 1"));
    }
    let means: Vec<(usize, Vec<f64>)> = blob_means(num_classes, dim).into_iter().enumerate().collect();
    let counts = vec![per_class; num_classes];
    Ok(gen_from_means(&means, &counts, num_classes, dim, spread, seed, kind))
}

/// Splits `data` so client `i` holds classes `(i*C + j) mod num_classes`
/// for `j < C`, drawing uniformly without replacement from each class pool.
pub fn partition_by_class<S: Scalar>(
    data: &LabeledDataset<S>,
    spec: &PartitionSpec,
) -> Result<Vec<LabeledDataset<S>>> {
    let n = data.len();
    let num_clients = spec.num_clients;
    let c = spec.classes_per_client;
    let k = data.num_classes();
    if num_clients == 0 {
        return Err(Error::invalid_config("num_clients", "must be at least 1"));
    }
    if c == 0 || c > k {
        return Err(Error::invalid_config(
            "classes_per_client",
            format!("must be in 1..={} (dataset has {} classes)", k, k),
        ));
    }
    if n == 0 || n % num_clients != 0 {
        return Err(Error::InfeasiblePartition {
            reason: format!("{} samples cannot be split evenly across {} clients", n, num_clients),
        });
    }
    let per_client = n / num_clients;
    if per_client % c != 0 {
        return Err(Error::InfeasiblePartition {
            reason: format!("{} samples per client not divisible by {} classes per client", per_client, c),
        });
    }
    let quota = per_client / c;

    let mut pools = data.indices_by_class();
    for (class, pool) in pools.iter_mut().enumerate() {
        let mut rng = stream(spec.seed, StreamKind::Partition, 0, class);
        pool.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; k];

    let mut clients = Vec::with_capacity(num_clients);
    for i in 0..num_clients {
        let mut indices = Vec::with_capacity(per_client);
        for j in 0..c {
            let class = (i * c + j) % k;
            let start = cursors[class];
            if start + quota > pools[class].len() {
                return Err(Error::InfeasiblePartition {
                    reason: format!(
                        "class {} exhausted: needs {} more samples for client {}, {} left",
                        class,
                        quota,
                        i,
                        pools[class].len() - start
                    ),
                });
            }
            indices.extend_from_slice(&pools[class][start..start + quota]);
            cursors[class] = start + quota;
        }
        indices.sort_unstable();
        clients.push(data.subset(&indices)?);
    }
    Ok(clients)
}

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    debug_assert!(sum > 0);
    let mut quotas: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let exact = (total as f64) * (w as f64) / (sum as f64);
        let floor = exact.floor() as usize;
        quotas.push(floor);
        assigned += floor;
        fractions.push((i, exact - floor as f64));
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in fractions.iter().take(total - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Builds the server-held dataset.
///
/// `train` is the pooled training set and `clients` its partition; which one
/// a variant draws from is documented on [`ServerDataSpec`].
pub fn build_server_data<S: Scalar>(
    train: &LabeledDataset<S>,
    clients: &[LabeledDataset<S>],
    spec: &ServerDataSpec,
    seed: u64,
) -> Result<LabeledDataset<S>> {
    match spec {
        ServerDataSpec::IidSubsample { n0 } => {
            let n = train.len();
            if *n0 == 0 || *n0 > n {
                return Err(Error::invalid_config("n0", format!("must be in 1..={}", n)));
            }
            let pools = train.indices_by_class();
            let counts: Vec<usize> = pools.iter().map(|p| p.len()).collect();
            let quotas = apportion(*n0, &counts);
            let mut indices = Vec::with_capacity(*n0);
            for (class, (pool, &q)) in pools.iter().zip(&quotas).enumerate() {
                if q > pool.len() {
                    return Err(Error::InfeasiblePartition {
                        reason: format!("class {} has {} samples, need {}", class, pool.len(), q),
                    });
                }
                let mut rng = stream(seed, StreamKind::ServerData, 0, class);
                let mut picks = rand::seq::index::sample(&mut rng, pool.len(), q).into_vec();
                picks.sort_unstable();
                indices.extend(picks.into_iter().map(|p| pool[p]));
            }
            train.subset(&indices)
        }
        ServerDataSpec::FromClients { num_clients, samples_each } => {
            if *num_clients == 0 || *num_clients > clients.len() {
                return Err(Error::invalid_config(
                    "num_clients",
                    format!("must be in 1..={} (contributing clients)", clients.len()),
                ));
            }
            if *samples_each == 0 {
                return Err(Error::invalid_config("samples_each", "must be at least 1"));
            }
            let mut rng = stream(seed, StreamKind::ServerData, 1, 0);
            let mut chosen = rand::seq::index::sample(&mut rng, clients.len(), *num_clients).into_vec();
            chosen.sort_unstable();
            let mut out = LabeledDataset::empty(train.feature_dim(), train.num_classes());
            for id in chosen {
                let client = &clients[id];
                if *samples_each > client.len() {
                    return Err(Error::InfeasiblePartition {
                        reason: format!("client {} has {} samples, need {}", id, client.len(), samples_each),
                    });
                }
                let mut rng = stream(seed, StreamKind::ServerData, 2, id);
                let mut picks = rand::seq::index::sample(&mut rng, client.len(), *samples_each).into_vec();
                picks.sort_unstable();
                out = out.merged_with(&client.subset(&picks)?)?;
            }
            Ok(out)
        }
        ServerDataSpec::Shifted { n0, shift, profile, drop_classes } => {
            if *n0 == 0 {
                return Err(Error::invalid_config("n0", "must be at least 1"));
            }
            if !shift.is_finite() {
                return Err(Error::invalid_config("shift", "must be finite"));
            }
            check_blob_args(profile.num_classes, profile.dim, profile.spread)?;
            if profile.dim != train.feature_dim() {
                return Err(Error::DimensionMismatch { expected: train.feature_dim(), got: profile.dim });
            }
            let k = profile.num_classes;
            let mut dropped = vec![false; k];
            for &d in drop_classes {
                if d >= k {
                    return Err(Error::invalid_config("drop_classes", format!("class {} out of range", d)));
                }
                dropped[d] = true;
            }
            let kept: Vec<usize> = (0..k).filter(|&c| !dropped[c]).collect();
            if kept.is_empty() {
                return Err(Error::invalid_config("drop_classes", "all classes dropped"));
            }
            let all_means = blob_means(k, profile.dim);
            let means: Vec<(usize, Vec<f64>)> = kept
                .iter()
                .map(|&c| {
                    let mut m = all_means[c].clone();
                    m[0] += shift * profile.spread;
                    (c, m)
                })
                .collect();
            let counts = apportion(*n0, &vec![1; kept.len()]);
            Ok(gen_from_means(&means, &counts, k, profile.dim, profile.spread, seed, StreamKind::ServerData))
        }
    }
}

/// Exact expected squared deviation of a mean-of-`n0` subsample gradient
/// from the full gradient at `params`: `(n/n0 - 1) / (n - 1)` times the
/// per-sample gradient variance.
pub fn subsample_variance_expected<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    data: &LabeledDataset<S>,
    n0: usize,
) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(Error::EmptyDataset { context: "subsample_variance_expected needs n >= 2".into() });
    }
    if n0 == 0 || n0 > n {
        return Err(Error::invalid_config("n0", format!("must be in 1..={}", n)));
    }
    let mean = model.full_grad(params, data)?.grad;
    let mut sq_devs: Vec<f64> = Vec::with_capacity(n);
    let mut g = ParamVector::<S>::zeros(model.param_dim());
    for s in data.iter() {
        model.sample_grad_into(params, s, g.values_mut())?;
        sq_devs.push(g.dist_sq(&mean)?.as_f64());
    }
    let sigma0_sq = canonical_sum(&mut sq_devs) / n as f64;
    let n_f = n as f64;
    Ok((n_f / n0 as f64 - 1.0) * sigma0_sq / (n_f - 1.0))
}

/// Reads `label,f0,f1,...` rows. The class count is the largest label + 1.
pub fn read_csv<S: Scalar>(path: &Path) -> Result<LabeledDataset<S>> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let mut samples: Vec<Sample<S>> = Vec::new();
    let mut max_label = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse { path: display.clone(), reason: e.to_string() })?;
        let mut fields = record.iter();
        let label: usize = fields
            .next()
            .ok_or_else(|| Error::Parse { path: display.clone(), reason: format!("row {}: empty", row) })?
            .trim()
            .parse()
            .map_err(|e| Error::Parse { path: display.clone(), reason: format!("row {}: bad label: {}", row, e) })?;
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map(S::from_f64)
                    .map_err(|e| Error::Parse { path: display.clone(), reason: format!("row {}: bad feature: {}", row, e) })
            })
            .collect::<Result<Vec<S>>>()?;
        max_label = max_label.max(label);
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset { context: display });
    }
    LabeledDataset::new(samples, max_label + 1)
}

/// Writes the dataset in the format [`read_csv`] accepts, with enough digits
/// for exact round-trips.
pub fn write_csv<S: Scalar>(data: &LabeledDataset<S>, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..data.feature_dim()).map(|j| format!("f{}", j)));
    writer.write_record(&header)?;
    for s in data.iter() {
        let mut row = vec![s.label.to_string()];
        row.extend(s.features.iter().map(|v| format!("{:.16e}", v.as_f64())));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(k: usize, per: usize) -> LabeledDataset<f64> {
        gen_blobs(k, per, 3, 0.5, 42).unwrap()
    }

    fn sample_key(s: &Sample<f64>) -> (usize, Vec<u64>) {
        (s.label, s.features.iter().map(|f| f.to_bits()).collect())
    }

    fn multiset(data: &LabeledDataset<f64>) -> Vec<(usize, Vec<u64>)> {
        let mut keys: Vec<_> = data.iter().map(sample_key).collect();
        keys.sort();
        keys
    }

    #[test]
    fn blobs_have_expected_shape_and_labels() {
        let d = blobs(4, 25);
        assert_eq!(d.len(), 100);
        assert_eq!(d.feature_dim(), 3);
        assert_eq!(d.num_classes(), 4);
        assert_eq!(d.class_counts(), vec![25; 4]);
    }

    #[test]
    fn blobs_are_deterministic_in_the_seed() {
        assert_eq!(blobs(4, 25), blobs(4, 25));
        assert_ne!(blobs(4, 25), gen_blobs::<f64>(4, 25, 3, 0.5, 43).unwrap());
        assert_ne!(multiset(&blobs(4, 25)), multiset(&gen_blobs_test::<f64>(4, 25, 3, 0.5, 42).unwrap()));
    }

    #[test]
    fn blob_samples_concentrate_near_their_means() {
        let d = gen_blobs::<f64>(2, 500, 2, 0.1, 7).unwrap();
        let means = blob_means(2, 2);
        for class in 0..2 {
            let idx = &d.indices_by_class()[class];
            for j in 0..2 {
                let avg: f64 = idx.iter().map(|&i| d.get(i).features[j]).sum::<f64>() / idx.len() as f64;
                assert!(
                    (avg - means[class][j]).abs() < 0.05,
                    "class {} coord {}: {} vs {}",
                    class,
                    j,
                    avg,
                    means[class][j]
                );
            }
        }
    }

    #[test]
    fn partition_covers_every_sample_exactly_once() {
        let d = blobs(4, 25);
        let spec = PartitionSpec { num_clients: 10, classes_per_client: 2, seed: 9 };
        let clients = partition_by_class(&d, &spec).unwrap();
        assert_eq!(clients.len(), 10);
        let mut pooled = Vec::new();
        for c in &clients {
            assert_eq!(c.len(), 10);
            pooled.extend(c.iter().map(sample_key));
        }
        pooled.sort();
        assert_eq!(pooled, multiset(&d));
    }

    #[test]
    fn partition_assigns_the_documented_classes() {
        let d = blobs(4, 30);
        let spec = PartitionSpec { num_clients: 4, classes_per_client: 2, seed: 9 };
        let clients = partition_by_class(&d, &spec).unwrap();
        for (i, client) in clients.iter().enumerate() {
            let mut expected = vec![(i * 2) % 4, (i * 2 + 1) % 4];
            expected.sort_unstable();
            let mut got: Vec<usize> = client
                .class_counts()
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(c, _)| c)
                .collect();
            got.sort_unstable();
            assert_eq!(got, expected, "client {}", i);
        }
    }

    #[test]
    fn single_client_partition_is_the_whole_dataset() {
        let d = blobs(3, 10);
        let spec = PartitionSpec { num_clients: 1, classes_per_client: 3, seed: 0 };
        let clients = partition_by_class(&d, &spec).unwrap();
        assert_eq!(clients.len(), 1);
        assert_eq!(multiset(&clients[0]), multiset(&d));
    }

    #[test]
    fn infeasible_partitions_are_rejected_with_the_reason() {
        let d = blobs(4, 25);
        let err = partition_by_class(&d, &PartitionSpec { num_clients: 3, classes_per_client: 2, seed: 0 })
            .unwrap_err();
        assert!(err.to_string().contains("3 clients"), "{}", err);
        // 10 clients x 1 class x 10 samples needs 10 x 10 = 100 from 4 pools
        // of 25 each; class 0 runs dry for client 4.
        let err = partition_by_class(&d, &PartitionSpec { num_clients: 10, classes_per_client: 1, seed: 0 })
            .unwrap_err();
        assert!(err.to_string().contains("class 0"), "{}", err);
    }

    #[test]
    fn partition_is_deterministic() {
        let d = blobs(4, 25);
        let spec = PartitionSpec { num_clients: 10, classes_per_client: 2, seed: 11 };
        assert_eq!(partition_by_class(&d, &spec).unwrap(), partition_by_class(&d, &spec).unwrap());
    }

    #[test]
    fn iid_subsample_is_stratified() {
        let d = blobs(4, 25);
        let server = build_server_data(&d, &[], &ServerDataSpec::IidSubsample { n0: 20 }, 3).unwrap();
        assert_eq!(server.len(), 20);
        assert_eq!(server.class_counts(), vec![5; 4]);
    }

    #[test]
    fn iid_subsample_of_everything_is_a_permutation() {
        let d = blobs(4, 25);
        let server = build_server_data(&d, &[], &ServerDataSpec::IidSubsample { n0: 100 }, 3).unwrap();
        assert_eq!(multiset(&server), multiset(&d));
    }

    #[test]
    fn from_clients_samples_come_from_exactly_one_contributor() {
        let d = blobs(4, 25);
        let clients =
            partition_by_class(&d, &PartitionSpec { num_clients: 10, classes_per_client: 2, seed: 1 }).unwrap();
        let spec = ServerDataSpec::FromClients { num_clients: 3, samples_each: 4 };
        let server = build_server_data(&d, &clients, &spec, 8).unwrap();
        assert_eq!(server.len(), 12);
        for s in server.iter() {
            let key = sample_key(s);
            let holders = clients
                .iter()
                .filter(|c| c.iter().any(|cs| sample_key(cs) == key))
                .count();
            assert_eq!(holders, 1);
        }
    }

    #[test]
    fn shifted_with_zero_shift_uses_the_training_means() {
        let profile = BlobProfile { num_classes: 3, dim: 2, spread: 0.0 };
        let d = gen_blobs::<f64>(3, 5, 2, 0.0, 1).unwrap();
        let spec = ServerDataSpec::Shifted { n0: 6, shift: 0.0, profile, drop_classes: vec![] };
        let server = build_server_data(&d, &[], &spec, 1).unwrap();
        // zero spread collapses both generators onto the class means
        let means = blob_means(3, 2);
        for s in server.iter() {
            assert_eq!(s.features, means[s.label]);
        }
        assert_eq!(server.len(), 6);
        assert_eq!(server.class_counts(), vec![2; 3]);
    }

    #[test]
    fn shifted_translates_means_along_the_first_axis() {
        let profile = BlobProfile { num_classes: 2, dim: 2, spread: 0.5 };
        let d = gen_blobs::<f64>(2, 5, 2, 0.5, 1).unwrap();
        let spec = ServerDataSpec::Shifted { n0: 400, shift: 2.0, profile, drop_classes: vec![] };
        let server = build_server_data(&d, &[], &spec, 1).unwrap();
        let means = blob_means(2, 2);
        for class in 0..2 {
            let idx = &server.indices_by_class()[class];
            let avg: f64 = idx.iter().map(|&i| server.get(i).features[0]).sum::<f64>() / idx.len() as f64;
            let expected = means[class][0] + 2.0 * 0.5;
            assert!((avg - expected).abs() < 0.15, "class {}: {} vs {}", class, avg, expected);
        }
    }

    #[test]
    fn shifted_can_drop_classes() {
        let profile = BlobProfile { num_classes: 4, dim: 2, spread: 0.3 };
        let d = gen_blobs::<f64>(4, 5, 2, 0.3, 1).unwrap();
        let spec = ServerDataSpec::Shifted { n0: 9, shift: 1.0, profile, drop_classes: vec![1, 3] };
        let server = build_server_data(&d, &[], &spec, 1).unwrap();
        let counts = server.class_counts();
        assert_eq!(counts[1], 0);
        assert_eq!(counts[3], 0);
        assert_eq!(counts[0] + counts[2], 9);
        assert_eq!(server.num_classes(), 4);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let d = blobs(3, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_csv(&d, &path).unwrap();
        let back: LabeledDataset<f64> = read_csv(&path).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn apportion_matches_counts_when_total_is_everything() {
        assert_eq!(apportion(10, &[3, 3, 4]), vec![3, 3, 4]);
        assert_eq!(apportion(10, &[1, 1, 1]).iter().sum::<usize>(), 10);
        assert_eq!(apportion(4, &[1, 1, 1]), vec![2, 1, 1]);
    }
}
