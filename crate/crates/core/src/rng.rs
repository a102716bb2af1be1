//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a ChaCha8 key
//! derived from `(experiment seed, domain, replication)`. A stream hands out
//! independent substreams by ChaCha stream id, one per scenario or inner
//! path, so the values a path sees never depend on which worker produced it
//! or in what order.
//!
//! Key derivation runs SplitMix64 over the seed, the domain tag and the
//! replication index, producing the four 64-bit words of the 256-bit key.
//! Distinct domains therefore never share key material.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain-separation tags. The numeric values are part of the reproducibility
/// contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Outer = 0x6f75_7465_72,
    PooledInner = 0x706f_6f6c,
    ConditionalInner = 0x636f_6e64,
    Benchmark = 0x6265_6e63,
    Regression = 0x7265_6772,
    Discrete = 0x6469_7363,
    Validation = 0x7661_6c69,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A keyed family of independent random substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: [u8; 32],
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, replication: u64) -> Self {
        let mut state = seed;
        let _ = splitmix64(&mut state);
        state ^= domain as u64;
        let _ = splitmix64(&mut state);
        state ^= replication.wrapping_mul(0xd1b5_4a32_d192_ed03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Stream { key }
    }

    /// Generator for substream `index`.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

/// The seed of one experiment; hands out the streams of each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentSeed(pub u64);

impl ExperimentSeed {
    pub fn stream(&self, domain: Domain, replication: u64) -> Stream {
        Stream::new(self.0, domain, replication)
    }

    pub fn outer(&self, replication: u64) -> Stream {
        self.stream(Domain::Outer, replication)
    }

    pub fn pooled_inner(&self, replication: u64) -> Stream {
        self.stream(Domain::PooledInner, replication)
    }

    pub fn conditional_inner(&self, replication: u64) -> Stream {
        self.stream(Domain::ConditionalInner, replication)
    }

    pub fn regression_inner(&self, replication: u64) -> Stream {
        self.stream(Domain::Regression, replication)
    }

    pub fn benchmark(&self) -> Stream {
        self.stream(Domain::Benchmark, 0)
    }

    pub fn discrete(&self, replication: u64) -> Stream {
        self.stream(Domain::Discrete, replication)
    }
}
