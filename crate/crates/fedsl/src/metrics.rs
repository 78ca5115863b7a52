//! Per-round diagnostics: objective values, gradient dissimilarity, client
//! and server drift, rolling accuracy and rise time.
//!
//! The global objective `F` is the uniform average of the client objectives,
//! and the composite objective blends in the server loss `f0` with weight
//! `gamma`. Diagnostics are always evaluated against the original partition,
//! also for algorithms that train on augmented data, so traces from
//! different algorithms measure the same quantities.

use crate::accum::{canonical_mean, canonical_sum};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// One row of a run trace.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// `F` at the post-round parameters.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    /// Trailing-window mean of `test_acc`, filled in after the run.
    pub rolling_acc: Option<f64>,
    pub grad_norm_f: Option<f64>,
    pub grad_norm_ftilde: Option<f64>,
    /// Squared server-client gradient dissimilarity at the current point.
    pub xi_sq: Option<f64>,
    /// Mean squared client gradient dissimilarity at the current point.
    pub g_sq: Option<f64>,
    pub client_drift: Option<f64>,
    pub server_drift: Option<f64>,
    /// Composite objective at the post-round parameters.
    pub f_tilde: Option<f64>,
}

/// Raw drift sums accumulated inside a round.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftRecord {
    /// Sum over counted clients and local steps of the squared distance
    /// between the round-start parameters and each local iterate.
    pub client_sq_sum: f64,
    pub clients_counted: usize,
    pub local_steps: usize,
    /// Same sum over the server phase iterates, when one ran.
    pub server_sq_sum: Option<f64>,
    pub server_steps: usize,
    /// True when every client was simulated, not just the sampled ones.
    pub exact: bool,
}

/// Normalised drift diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftTerms {
    /// Mean squared client drift per step and client.
    pub client: f64,
    /// Mean squared server drift per step, when a server phase ran.
    pub server: Option<f64>,
    pub exact: bool,
}

/// Converts raw drift sums into per-step means.
pub fn drift_terms(record: Option<&DriftRecord>) -> Result<DriftTerms> {
    let record = record.ok_or_else(|| Error::DiagnosticsDisabled {
        context: "drift was not recorded for this round".into(),
    })?;
    if record.clients_counted == 0 || record.local_steps == 0 {
        return Err(Error::DiagnosticsDisabled { context: "empty drift record".into() });
    }
    let client = record.client_sq_sum / (record.clients_counted * record.local_steps) as f64;
    let server = match record.server_sq_sum {
        Some(sum) if record.server_steps > 0 => Some(sum / record.server_steps as f64),
        Some(_) => return Err(Error::DiagnosticsDisabled { context: "server drift without steps".into() }),
        None => None,
    };
    Ok(DriftTerms { client, server, exact: record.exact })
}

/// Squared gradient dissimilarities at `params`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dissimilarity {
    /// `(1/N) sum_i ||grad f_i - grad F||^2`.
    pub g_sq: f64,
    /// `||grad f0 - grad F||^2`, when server data is available.
    pub xi_sq: Option<f64>,
}

fn client_grads<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
) -> Result<Vec<ParamVector<S>>> {
    if clients.is_empty() {
        return Err(Error::EmptyDataset { context: "no clients".into() });
    }
    clients.iter().map(|c| Ok(model.full_grad(params, c)?.grad)).collect()
}

fn mean_vector<S: Scalar>(vectors: &[ParamVector<S>]) -> ParamVector<S> {
    let d = vectors[0].dim();
    let n = vectors.len();
    let mut cols = vec![S::zero(); d * n];
    for (i, v) in vectors.iter().enumerate() {
        for (j, &vj) in v.values().iter().enumerate() {
            cols[j * n + i] = vj;
        }
    }
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        out.push(canonical_mean(&mut cols[j * n..(j + 1) * n]));
    }
    ParamVector::new(out)
}

/// Gradient of `F` at `params`: the uniform average of client gradients.
pub fn grad_f<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
) -> Result<ParamVector<S>> {
    Ok(mean_vector(&client_grads(model, params, clients)?))
}

/// `F` at `params`: the uniform average of client losses.
pub fn objective_f<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::EmptyDataset { context: "no clients".into() });
    }
    let mut losses = clients
        .iter()
        .map(|c| model.loss(params, c))
        .collect::<Result<Vec<S>>>()?;
    Ok(canonical_mean(&mut losses).as_f64())
}

/// Composite objective `(F + gamma * f0) / (1 + gamma)`.
pub fn objective_ftilde<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
    server: &LabeledDataset<S>,
    gamma: f64,
) -> Result<f64> {
    let f = objective_f(model, params, clients)?;
    let f0 = model.loss(params, server)?.as_f64();
    Ok((f + gamma * f0) / (1.0 + gamma))
}

/// Gradient of the composite objective.
pub fn grad_ftilde<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
    server: &LabeledDataset<S>,
    gamma: f64,
) -> Result<ParamVector<S>> {
    let gf = grad_f(model, params, clients)?;
    let g0 = model.full_grad(params, server)?.grad;
    let gamma_s = S::from_f64(gamma);
    let scale = S::from_f64(1.0 / (1.0 + gamma));
    let values = gf
        .values()
        .iter()
        .zip(g0.values())
        .map(|(&a, &b)| (a + gamma_s * b) * scale)
        .collect();
    Ok(ParamVector::new(values))
}

/// Client gradient dissimilarity `G^2` and, when server data is given, the
/// server-client dissimilarity `xi^2`, both at `params`.
pub fn grad_dissimilarity<S: Scalar>(
    model: &LossModel<S>,
    params: &ParamVector<S>,
    clients: &[LabeledDataset<S>],
    server: Option<&LabeledDataset<S>>,
) -> Result<Dissimilarity> {
    let grads = client_grads(model, params, clients)?;
    let mean = mean_vector(&grads);
    let mut sq_devs: Vec<f64> = grads
        .iter()
        .map(|g| Ok(g.dist_sq(&mean)?.as_f64()))
        .collect::<Result<Vec<f64>>>()?;
    let g_sq = canonical_sum(&mut sq_devs) / grads.len() as f64;
    let xi_sq = match server {
        Some(data) => Some(model.full_grad(params, data)?.grad.dist_sq(&mean)?.as_f64()),
        None => None,
    };
    Ok(Dissimilarity { g_sq, xi_sq })
}

/// Trailing-window mean; early entries average the available prefix.
pub fn rolling_accuracy(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid_config("rolling_window", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let start = (t + 1).saturating_sub(window);
        let w = t + 1 - start;
        let mut acc = 0.0;
        for &v in &series[start..=t] {
            acc += v;
        }
        out.push(acc / w as f64);
    }
    Ok(out)
}

/// First round whose rolling accuracy reaches 90% of the final rolling
/// accuracy. `None` for an empty series or a non-finite final value.
pub fn rise_time(rolling: &[f64]) -> Option<usize> {
    let last = *rolling.last()?;
    if !last.is_finite() {
        return None;
    }
    let threshold = 0.9 * last;
    rolling.iter().position(|&v| v >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn singleton(center: &[f64]) -> LabeledDataset<f64> {
        LabeledDataset::new(
            vec![Sample { features: center.to_vec(), label: 0 }],
            1,
        )
        .unwrap()
    }

    fn quad_world(centers: &[&[f64]]) -> (LossModel<f64>, Vec<LabeledDataset<f64>>) {
        let dim = centers[0].len();
        let model = LossModel::QuadraticConsensus { center: ParamVector::zeros(dim) };
        (model, centers.iter().map(|c| singleton(c)).collect())
    }

    #[test]
    fn drift_terms_normalise_the_sums() {
        let record = DriftRecord {
            client_sq_sum: 6.0,
            clients_counted: 3,
            local_steps: 2,
            server_sq_sum: Some(4.0),
            server_steps: 2,
            exact: true,
        };
        let terms = drift_terms(Some(&record)).unwrap();
        assert_eq!(terms.client, 1.0);
        assert_eq!(terms.server, Some(2.0));
        assert!(terms.exact);
        assert!(matches!(drift_terms(None), Err(Error::DiagnosticsDisabled { .. })));
    }

    #[test]
    fn dissimilarity_matches_the_closed_form() {
        let (model, clients) = quad_world(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let server = singleton(&[0.5, 0.0]);
        let x = ParamVector::from_f64_slice(&[0.3, -2.0]);
        let d = grad_dissimilarity(&model, &x, &clients, Some(&server)).unwrap();
        // grad f_i - grad F = mean center - center_i, so G^2 = 1 and
        // xi^2 = ||c0 - mean||^2 = 0.25 at every x
        assert!((d.g_sq - 1.0).abs() < 1e-12);
        assert!((d.xi_sq.unwrap() - 0.25).abs() < 1e-12);
        let no_server = grad_dissimilarity(&model, &x, &clients, None).unwrap();
        assert_eq!(no_server.xi_sq, None);
    }

    #[test]
    fn identical_clients_have_zero_dissimilarity() {
        let (model, clients) = quad_world(&[&[0.7, -0.2], &[0.7, -0.2], &[0.7, -0.2]]);
        let x = ParamVector::from_f64_slice(&[5.0, 5.0]);
        let d = grad_dissimilarity(&model, &x, &clients, None).unwrap();
        assert_eq!(d.g_sq, 0.0);
    }

    #[test]
    fn composite_objective_interpolates_f_and_f0() {
        let (model, clients) = quad_world(&[&[2.0], &[-2.0]]);
        let server = singleton(&[1.0]);
        let x = ParamVector::from_f64_slice(&[0.0]);
        let f = objective_f(&model, &x, &clients).unwrap();
        assert_eq!(f, 2.0);
        let f0 = 0.5;
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            let ft = objective_ftilde(&model, &x, &clients, &server, gamma).unwrap();
            assert!((ft - (f + gamma * f0) / (1.0 + gamma)).abs() < 1e-15);
        }
        assert_eq!(objective_ftilde(&model, &x, &clients, &server, 0.0).unwrap(), f);
    }

    #[test]
    fn gradient_norm_identity_holds_pointwise() {
        // ||grad F||^2 + gamma ||grad f0||^2
        //   = (1+gamma) ||grad Ftilde||^2 + gamma/(1+gamma) xi^2
        let (model, clients) = quad_world(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.0, -1.0]]);
        let server = singleton(&[0.25, 0.75]);
        for (gamma, xs) in [(0.5, [0.1, -0.4]), (1.0, [2.0, 3.0]), (2.0, [-1.0, 0.0])] {
            let x = ParamVector::from_f64_slice(&xs);
            let gf = grad_f(&model, &x, &clients).unwrap();
            let g0 = model.full_grad(&x, &server).unwrap().grad;
            let gt = grad_ftilde(&model, &x, &clients, &server, gamma).unwrap();
            let xi = grad_dissimilarity(&model, &x, &clients, Some(&server)).unwrap().xi_sq.unwrap();
            let lhs = gf.norm_sq() + gamma * g0.norm_sq();
            let rhs = (1.0 + gamma) * gt.norm_sq() + gamma / (1.0 + gamma) * xi;
            assert!((lhs - rhs).abs() < 1e-12, "gamma {}: {} vs {}", gamma, lhs, rhs);
        }
    }

    #[test]
    fn rolling_accuracy_matches_hand_values() {
        let series = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(rolling_accuracy(&series, 2).unwrap(), vec![0.0, 0.5, 1.0, 1.0]);
        assert_eq!(rolling_accuracy(&series, 1).unwrap(), series.to_vec());
        let constant = [0.75; 6];
        assert_eq!(rolling_accuracy(&constant, 20).unwrap(), constant.to_vec());
        assert!(rolling_accuracy(&series, 0).is_err());
    }

    #[test]
    fn rise_time_finds_the_first_crossing() {
        assert_eq!(rise_time(&[0.1, 0.5, 0.89, 0.95, 1.0]), Some(3));
        assert_eq!(rise_time(&[1.0, 1.0, 1.0]), Some(0));
        assert_eq!(rise_time(&[]), None);
        // a flat-zero series rises immediately
        assert_eq!(rise_time(&[0.0, 0.0]), Some(0));
    }
}
