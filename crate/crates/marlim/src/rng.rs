//! Seedable random streams with deterministic substream derivation.
//!
//! Every replication, item and purpose (demand, lead-time, policy sampling)
//! gets its own stream derived from a root seed, so adding one consumer never
//! perturbs the draws of another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; the workhorse for seed mixing.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a root seed with a label path into a single 64-bit value.
pub fn mix(root: u64, labels: &[u64]) -> u64 {
    let mut state = root ^ 0x6a09_e667_f3bc_c908;
    let mut acc = splitmix64(&mut state);
    for &l in labels {
        state ^= l;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// A single-owner random stream. Same seed path, same draws, on any platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            seed,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive an independent stream from a root seed and a label path,
    /// e.g. `RngStream::derive(root, &[replication, item, PURPOSE_DEMAND])`.
    pub fn derive(root: u64, labels: &[u64]) -> Self {
        Self::new(mix(root, labels))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Purpose channels for substream derivation.
pub mod channel {
    pub const DEMAND: u64 = 1;
    pub const LEAD_TIME: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const ENV: u64 = 6;
}
