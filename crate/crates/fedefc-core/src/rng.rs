//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run draws from its own ChaCha8 stream, keyed by
//! the master seed plus a purpose tag (and, where applicable, round and client
//! indices). Streams are mutually independent, so consuming one never shifts
//! another: skipping the noise stage (fedavg_clean) leaves initialization,
//! partitioning, and client sampling untouched, and per-(round, client) local
//! streams make results independent of worker count and scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One purpose-keyed stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Global model initialization.
    Init,
    /// Synthetic training-set generation.
    TrainData,
    /// Synthetic test-set generation.
    TestData,
    /// Off-diagonal target selection for the true transition matrix.
    Transition,
    /// Per-sample observed-label draws.
    Noise,
    /// Bernoulli/Dirichlet partition draws.
    Partition,
    /// Client subset selection for round `t`.
    ClientSample { round: u32 },
    /// Batch shuffling for client `client` in round `round`.
    LocalUpdate { round: u32, client: usize },
}

impl Stream {
    fn key(self) -> (u64, u64, u64) {
        match self {
            Stream::Init => (1, 0, 0),
            Stream::TrainData => (2, 0, 0),
            Stream::TestData => (3, 0, 0),
            Stream::Transition => (4, 0, 0),
            Stream::Noise => (5, 0, 0),
            Stream::Partition => (6, 0, 0),
            Stream::ClientSample { round } => (7, u64::from(round), 0),
            Stream::LocalUpdate { round, client } => (8, u64::from(round), client as u64),
        }
    }
}

/// Derives ChaCha8 streams from a single master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    master: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        SeedPlan { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// A fresh generator for the given stream; calling twice with the same
    /// stream yields identical generators.
    pub fn stream(&self, stream: Stream) -> ChaCha8Rng {
        let (tag, a, b) = stream.key();
        let mut h = splitmix64(self.master ^ 0x6665_6465_6663_5247); // "fedefcRG"
        for part in [tag, a, b] {
            h = splitmix64(h ^ splitmix64(part));
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}

/// SplitMix64 finalizer; the standard 64-bit avalanche used to spread
/// structured keys (small tags, round counters) over the full seed space.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
