//! Order-canonical accumulation.
//!
//! Losses and full gradients are means over samples. Summing floats left to
//! right would make them depend on dataset order, so reductions over samples
//! first sort the addends by value. Any permutation of the same samples then
//! produces bit-identical results.

use crate::scalar::Scalar;

/// Sums `vals` after sorting them in place by value.
pub(crate) fn canonical_sum<S: Scalar>(vals: &mut [S]) -> S {
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite addend"));
    let mut acc = S::zero();
    for v in vals.iter() {
        acc += *v;
    }
    acc
}

/// Mean of `vals` via [`canonical_sum`].
pub(crate) fn canonical_mean<S: Scalar>(vals: &mut [S]) -> S {
    debug_assert!(!vals.is_empty());
    let n = S::from_f64(vals.len() as f64);
    canonical_sum(vals) / n
}
