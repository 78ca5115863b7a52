//! Loss models: the objectives clients and server optimise.
//!
//! All three models expose per-sample losses and gradients; dataset-level
//! loss and gradient are means over samples, accumulated in a canonical
//! order so they do not depend on how the dataset happens to be sorted.

use rand::Rng;

use crate::accum::canonical_mean;
use crate::data::{LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Half-width of the uniform parameter initialisation interval.
const INIT_RANGE: f64 = 0.05;

/// A stochastic (or exact) gradient together with the batch that produced it.
#[derive(Clone, Debug)]
pub struct GradEstimate<S: Scalar> {
    pub grad: ParamVector<S>,
    /// Sample indices that went into the estimate, ascending.
    pub batch_indices: Vec<usize>,
    /// True when the batch was the whole dataset.
    pub is_exact: bool,
}

/// The model family an experiment trains.
#[derive(Clone, Debug, PartialEq)]
pub enum LossModel<S: Scalar> {
    /// `loss(x, s) = 0.5 * ||x - (center + s.features)||^2`. With zero
    /// features this is plain consensus on `center`; per-sample features act
    /// as additive offsets, so a singleton dataset with features `c - center`
    /// gives a client the quadratic objective centred at `c`.
    QuadraticConsensus { center: ParamVector<S> },
    /// Multinomial logistic regression on raw features.
    SoftmaxRegression { input_dim: usize, num_classes: usize },
    /// One hidden tanh layer followed by softmax.
    Mlp1 { input_dim: usize, hidden: usize, num_classes: usize },
}

impl<S: Scalar> LossModel<S> {
    pub fn param_dim(&self) -> usize {
        match self {
            LossModel::QuadraticConsensus { center } => center.dim(),
            LossModel::SoftmaxRegression { input_dim, num_classes } => (input_dim + 1) * num_classes,
            LossModel::Mlp1 { input_dim, hidden, num_classes } => {
                hidden * (input_dim + 1) + num_classes * (hidden + 1)
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            LossModel::QuadraticConsensus { center } => center.dim(),
            LossModel::SoftmaxRegression { input_dim, .. } => *input_dim,
            LossModel::Mlp1 { input_dim, .. } => *input_dim,
        }
    }

    /// Class count for classifiers, `None` for the quadratic model.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            LossModel::QuadraticConsensus { .. } => None,
            LossModel::SoftmaxRegression { num_classes, .. } => Some(*num_classes),
            LossModel::Mlp1 { num_classes, .. } => Some(*num_classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim() == 0 {
            return Err(Error::invalid_config("input_dim", "must be at least 1"));
        }
        match self {
            LossModel::QuadraticConsensus { center } => center.check_finite("quadratic center"),
            LossModel::SoftmaxRegression { num_classes, .. } => {
                if *num_classes < 2 {
                    return Err(Error::invalid_config("num_classes", "classifier needs at least 2 classes"));
                }
                Ok(())
            }
            LossModel::Mlp1 { hidden, num_classes, .. } => {
                if *hidden == 0 {
                    return Err(Error::invalid_config("hidden", "must be at least 1"));
                }
                if *num_classes < 2 {
                    return Err(Error::invalid_config("num_classes", "classifier needs at least 2 classes"));
                }
                Ok(())
            }
        }
    }

    fn check_args(&self, params: &ParamVector<S>, data: &LabeledDataset<S>) -> Result<()> {
        if params.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: params.dim() });
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset { context: "loss/gradient evaluation".into() });
        }
        if data.feature_dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), got: data.feature_dim() });
        }
        if let Some(k) = self.num_classes() {
            if data.num_classes() != k {
                return Err(Error::invalid_config(
                    "num_classes",
                    format!("model expects {} classes, dataset declares {}", k, data.num_classes()),
                ));
            }
        }
        Ok(())
    }

    /// Loss of a single sample.
    pub fn sample_loss(&self, params: &ParamVector<S>, sample: &Sample<S>) -> S {
        let x = params.values();
        match self {
            LossModel::QuadraticConsensus { center } => {
                let mut acc = S::zero();
                for ((&xi, &ci), &fi) in x.iter().zip(center.values()).zip(&sample.features) {
                    let d = xi - (ci + fi);
                    acc += d * d;
                }
                acc * S::from_f64(0.5)
            }
            LossModel::SoftmaxRegression { input_dim, num_classes } => {
                let logits = softmax_logits(x, &sample.features, *input_dim, *num_classes);
                cross_entropy(&logits, sample.label)
            }
            LossModel::Mlp1 { input_dim, hidden, num_classes } => {
                let (_, logits) = mlp_forward(x, &sample.features, *input_dim, *hidden, *num_classes);
                cross_entropy(&logits, sample.label)
            }
        }
    }

    /// Adds the gradient of `sample`'s loss at `params` into `out`.
    pub(crate) fn sample_grad_into(
        &self,
        params: &ParamVector<S>,
        sample: &Sample<S>,
        out: &mut [S],
    ) -> Result<()> {
        if out.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: out.len() });
        }
        for v in out.iter_mut() {
            *v = S::zero();
        }
        let x = params.values();
        match self {
            LossModel::QuadraticConsensus { center } => {
                for (o, ((&xi, &ci), &fi)) in
                    out.iter_mut().zip(x.iter().zip(center.values()).zip(&sample.features))
                {
                    *o = xi - (ci + fi);
                }
            }
            LossModel::SoftmaxRegression { input_dim, num_classes } => {
                let logits = softmax_logits(x, &sample.features, *input_dim, *num_classes);
                let probs = softmax_probs(&logits);
                let (w_grad, b_grad) = out.split_at_mut(input_dim * num_classes);
                for c in 0..*num_classes {
                    let err = probs[c] - indicator::<S>(c == sample.label);
                    for (j, &fj) in sample.features.iter().enumerate() {
                        w_grad[c * input_dim + j] = err * fj;
                    }
                    b_grad[c] = err;
                }
            }
            LossModel::Mlp1 { input_dim, hidden, num_classes } => {
                let (activations, logits) = mlp_forward(x, &sample.features, *input_dim, *hidden, *num_classes);
                let probs = softmax_probs(&logits);
                let (p, h, k) = (*input_dim, *hidden, *num_classes);
                let w2 = &x[h * (p + 1)..h * (p + 1) + k * h];
                let (first, second) = out.split_at_mut(h * (p + 1));
                let (w1_grad, b1_grad) = first.split_at_mut(h * p);
                let (w2_grad, b2_grad) = second.split_at_mut(k * h);
                let mut hidden_err = vec![S::zero(); h];
                for c in 0..k {
                    let err = probs[c] - indicator::<S>(c == sample.label);
                    for i in 0..h {
                        w2_grad[c * h + i] = err * activations[i];
                        hidden_err[i] += err * w2[c * h + i];
                    }
                    b2_grad[c] = err;
                }
                for i in 0..h {
                    let pre = hidden_err[i] * (S::one() - activations[i] * activations[i]);
                    for (j, &fj) in sample.features.iter().enumerate() {
                        w1_grad[i * p + j] = pre * fj;
                    }
                    b1_grad[i] = pre;
                }
            }
        }
        Ok(())
    }

    /// Mean loss over the dataset.
    pub fn loss(&self, params: &ParamVector<S>, data: &LabeledDataset<S>) -> Result<S> {
        self.check_args(params, data)?;
        let mut losses: Vec<S> = data.iter().map(|s| self.sample_loss(params, s)).collect();
        let loss = canonical_mean(&mut losses);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite { context: "loss".into() })
        }
    }

    fn grad_over(&self, params: &ParamVector<S>, data: &LabeledDataset<S>, indices: &[usize]) -> Result<ParamVector<S>> {
        let d = self.param_dim();
        let m = indices.len();
        // transposed layout: contributions to coordinate j are contiguous,
        // so each coordinate can be reduced canonically
        let mut cols = vec![S::zero(); d * m];
        let mut g = vec![S::zero(); d];
        for (i, &idx) in indices.iter().enumerate() {
            self.sample_grad_into(params, data.get(idx), &mut g)?;
            for (j, &gj) in g.iter().enumerate() {
                cols[j * m + i] = gj;
            }
        }
        let mut out = Vec::with_capacity(d);
        for j in 0..d {
            out.push(canonical_mean(&mut cols[j * m..(j + 1) * m]));
        }
        let grad = ParamVector::new(out);
        grad.check_finite("gradient")?;
        Ok(grad)
    }

    /// Exact gradient of the mean loss.
    pub fn full_grad(&self, params: &ParamVector<S>, data: &LabeledDataset<S>) -> Result<GradEstimate<S>> {
        self.check_args(params, data)?;
        let indices: Vec<usize> = (0..data.len()).collect();
        let grad = self.grad_over(params, data, &indices)?;
        Ok(GradEstimate { grad, batch_indices: indices, is_exact: true })
    }

    /// Mean gradient over a uniform without-replacement batch drawn from
    /// `rng`. With `batch_size == data.len()` this is exactly [`full_grad`].
    pub fn stochastic_grad(
        &self,
        params: &ParamVector<S>,
        data: &LabeledDataset<S>,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<GradEstimate<S>> {
        self.check_args(params, data)?;
        if batch_size == 0 || batch_size > data.len() {
            return Err(Error::BatchSize { batch: batch_size, available: data.len() });
        }
        let mut indices = rand::seq::index::sample(rng, data.len(), batch_size).into_vec();
        indices.sort_unstable();
        let grad = self.grad_over(params, data, &indices)?;
        let is_exact = batch_size == data.len();
        Ok(GradEstimate { grad, batch_indices: indices, is_exact })
    }

    /// Compares the analytic gradient against central finite differences and
    /// returns the worst relative coordinate error.
    pub fn finite_diff_check(
        &self,
        params: &ParamVector<S>,
        data: &LabeledDataset<S>,
        step: f64,
    ) -> Result<f64> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid_config("step", "must be finite and positive"));
        }
        let analytic = self.full_grad(params, data)?.grad;
        let mut worst = 0.0f64;
        let mut probe = params.clone();
        for j in 0..params.dim() {
            let xj = params.values()[j];
            probe.values_mut()[j] = xj + S::from_f64(step);
            let up = self.loss(&probe, data)?.as_f64();
            probe.values_mut()[j] = xj - S::from_f64(step);
            let down = self.loss(&probe, data)?.as_f64();
            probe.values_mut()[j] = xj;
            let fd = (up - down) / (2.0 * step);
            let a = analytic.values()[j].as_f64();
            let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    /// Predicted class, or `None` for the quadratic model.
    pub fn predict(&self, params: &ParamVector<S>, features: &[S]) -> Result<Option<usize>> {
        if params.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: params.dim() });
        }
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), got: features.len() });
        }
        let x = params.values();
        let logits = match self {
            LossModel::QuadraticConsensus { .. } => return Ok(None),
            LossModel::SoftmaxRegression { input_dim, num_classes } => {
                softmax_logits(x, features, *input_dim, *num_classes)
            }
            LossModel::Mlp1 { input_dim, hidden, num_classes } => {
                mlp_forward(x, features, *input_dim, *hidden, *num_classes).1
            }
        };
        let mut best = 0usize;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        Ok(Some(best))
    }

    /// Fraction of correctly classified samples, `None` for the quadratic
    /// model.
    pub fn accuracy(&self, params: &ParamVector<S>, data: &LabeledDataset<S>) -> Result<Option<f64>> {
        self.check_args(params, data)?;
        if self.num_classes().is_none() {
            return Ok(None);
        }
        let mut correct = 0usize;
        for s in data.iter() {
            if self.predict(params, &s.features)? == Some(s.label) {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / data.len() as f64))
    }

    /// Uniform init on `[-0.05, 0.05)`, one draw per coordinate.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector<S> {
        let values = (0..self.param_dim())
            .map(|_| S::from_f64(rng.random_range(-INIT_RANGE..INIT_RANGE)))
            .collect();
        ParamVector::new(values)
    }
}

fn indicator<S: Scalar>(hit: bool) -> S {
    if hit {
        S::one()
    } else {
        S::zero()
    }
}

fn softmax_logits<S: Scalar>(params: &[S], features: &[S], input_dim: usize, num_classes: usize) -> Vec<S> {
    let (w, b) = params.split_at(input_dim * num_classes);
    (0..num_classes)
        .map(|c| {
            let mut z = b[c];
            for (j, &fj) in features.iter().enumerate() {
                z += w[c * input_dim + j] * fj;
            }
            z
        })
        .collect()
}

fn mlp_forward<S: Scalar>(
    params: &[S],
    features: &[S],
    input_dim: usize,
    hidden: usize,
    num_classes: usize,
) -> (Vec<S>, Vec<S>) {
    let w1 = &params[..hidden * input_dim];
    let b1 = &params[hidden * input_dim..hidden * (input_dim + 1)];
    let w2 = &params[hidden * (input_dim + 1)..hidden * (input_dim + 1) + num_classes * hidden];
    let b2 = &params[hidden * (input_dim + 1) + num_classes * hidden..];
    let activations: Vec<S> = (0..hidden)
        .map(|i| {
            let mut z = b1[i];
            for (j, &fj) in features.iter().enumerate() {
                z += w1[i * input_dim + j] * fj;
            }
            z.tanh()
        })
        .collect();
    let logits: Vec<S> = (0..num_classes)
        .map(|c| {
            let mut z = b2[c];
            for (i, &ai) in activations.iter().enumerate() {
                z += w2[c * hidden + i] * ai;
            }
            z
        })
        .collect();
    (activations, logits)
}

/// `logsumexp(logits) - logits[label]`, stable for large logits.
fn cross_entropy<S: Scalar>(logits: &[S], label: usize) -> S {
    debug_assert!(label < logits.len());
    let max = logits.iter().fold(logits[0], |m, &z| if z > m { z } else { m });
    let mut sum = S::zero();
    for &z in logits {
        sum += (z - max).exp();
    }
    max + sum.ln() - logits[label]
}

fn softmax_probs<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().fold(logits[0], |m, &z| if z > m { z } else { m });
    let mut sum = S::zero();
    let mut probs: Vec<S> = logits
        .iter()
        .map(|&z| {
            let e = (z - max).exp();
            sum += e;
            e
        })
        .collect();
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    probs
}
