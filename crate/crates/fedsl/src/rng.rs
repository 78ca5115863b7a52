//! Deterministic random streams.
//!
//! Every random decision in the simulator draws from its own ChaCha12 stream,
//! keyed by (seed, purpose, round, unit). Streams never share state, so
//! clients can run in any order (or in parallel) without changing results,
//! and one algorithm consuming more randomness than another cannot shift a
//! later draw.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Each purpose gets a disjoint id space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// Model initialisation.
    Init,
    /// Per-round client subset selection.
    ClientSampling,
    /// Per-(round, client) local SGD batches.
    Client,
    /// Per-round server SGD batches.
    Server,
    /// Server pre-training batches.
    Pretrain,
    /// Synthetic training data generation.
    DataGen,
    /// Class-pool shuffles during partitioning.
    Partition,
    /// Server dataset construction.
    ServerData,
    /// Held-out test data generation.
    TestGen,
}

impl StreamKind {
    fn id(self) -> u64 {
        match self {
            StreamKind::Init => 1,
            StreamKind::ClientSampling => 2,
            StreamKind::Client => 3,
            StreamKind::Server => 4,
            StreamKind::Pretrain => 5,
            StreamKind::DataGen => 6,
            StreamKind::Partition => 7,
            StreamKind::ServerData => 8,
            StreamKind::TestGen => 9,
        }
    }
}

/// Returns the stream for (`seed`, `kind`, `round`, `unit`).
///
/// `round` must fit in 32 bits and `unit` in 24; both are generous for the
/// scales this simulator targets.
pub fn stream(seed: u64, kind: StreamKind, round: usize, unit: usize) -> ChaCha12Rng {
    debug_assert!(round < (1 << 32));
    debug_assert!(unit < (1 << 24));
    let id = (kind.id() << 56) | ((round as u64) << 24) | (unit as u64);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
