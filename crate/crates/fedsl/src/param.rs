//! Flat parameter vector with the handful of linear-algebra operations the
//! simulator needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Model parameters (or a gradient, or an update direction) as a flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<S: Scalar> {
    values: Vec<S>,
}

impl<S: Scalar> ParamVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        ParamVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector { values: vec![S::zero(); dim] }
    }

    pub fn from_f64_slice(values: &[f64]) -> Self {
        ParamVector { values: values.iter().map(|&v| S::from_f64(v)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }

    /// Errors unless every entry is finite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() })
        }
    }

    /// `self += coeff * other`.
    pub fn add_scaled(&mut self, coeff: S, other: &Self) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += coeff * *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, coeff: S) {
        for a in self.values.iter_mut() {
            *a *= coeff;
        }
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect();
        Ok(ParamVector { values })
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.check_dim(other)?;
        let mut acc = S::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += *a * *b;
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> S {
        let mut acc = S::zero();
        for a in &self.values {
            acc += *a * *a;
        }
        acc
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &Self) -> Result<S> {
        self.check_dim(other)?;
        let mut acc = S::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            let d = *a - *b;
            acc += d * d;
        }
        Ok(acc)
    }

    /// Order-insensitive fingerprint of the exact bit pattern (FNV-1a over
    /// the f64 encoding of each coordinate, in index order).
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for byte in v.as_f64().to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
