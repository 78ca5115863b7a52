//! Deterministic simulator and analysis toolkit for federated learning with
//! an additional server-side learning phase.
//!
//! The library is organised around six concerns:
//!
//! - [`model`]: loss models (quadratic consensus, softmax regression, a
//!   one-hidden-layer MLP) over a flat parameter vector, with exact and
//!   mini-batch gradients and a finite-difference checker.
//! - [`data`]: synthetic Gaussian-blob generation, the class-based non-IID
//!   partitioner, server-dataset builders, and CSV ingestion.
//! - [`fedsim`]: the round engine — local SGD, client sampling, aggregation,
//!   the server learning phase, and the three baselines (plain averaging,
//!   data sharing, and the non-incremental variant).
//! - [`metrics`]: per-round diagnostics — objectives, gradient
//!   dissimilarities, client/server drift, rolling accuracy, rise time.
//! - [`theory`]: step-size caps, derived constants, and the descent and
//!   horizon bounds, checkable exactly on the quadratic testbed.
//! - [`config`] / [`harness`] / [`report`]: declarative experiment specs,
//!   trace/summary emission, and cross-run comparison.
//!
//! All simulator state is generic over the floating-point type through
//! [`Scalar`] (implemented for `f32` and `f64`); the theory evaluators are
//! `f64`-only. Runs are bit-reproducible: every random decision draws from
//! a counter-derived stream of the master seed (see [`rng`]), so client
//! updates can run in parallel without affecting the trajectory.

mod accum;
pub mod config;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod param;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete f64 aliases for the generic core types.
pub type ParamVector64 = param::ParamVector<f64>;
pub type LossModel64 = model::LossModel<f64>;
pub type LabeledDataset64 = data::LabeledDataset<f64>;
pub type GradEstimate64 = model::GradEstimate<f64>;
pub type World64 = fedsim::World<f64>;
pub type RunOutput64 = fedsim::RunOutput<f64>;

/// Concrete f32 aliases for the generic core types.
pub type ParamVector32 = param::ParamVector<f32>;
pub type LossModel32 = model::LossModel<f32>;
pub type LabeledDataset32 = data::LabeledDataset<f32>;
