//! Seeded random streams.
//!
//! All randomness in the crate comes from xoshiro256++ seeded through
//! SplitMix64 (`Xoshiro256PlusPlus::seed_from_u64`). The derived quantities
//! are fixed so ports can reproduce the streams bit for bit:
//!
//! - uniform `f64` in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! - bounded integer in `[0, n)`: high 64 bits of `next_u64 * n` (128-bit)
//! - standard normal: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one
//!   value per pair of uniforms, the sine half is discarded
//! - shuffle: Fisher-Yates from the back, `j = below(i + 1)`
//!
//! Sub-streams are keyed by `derive_seed(seed, tag, index)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub struct Rng(Xoshiro256PlusPlus);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream. `tag` names the consumer (for
/// example `"batches"`), `index` is typically an epoch number.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag keeps the mapping language-neutral.
    let mut tag_hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        tag_hash ^= u64::from(b);
        tag_hash = tag_hash.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ tag_hash) ^ index)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn derived(seed: u64, tag: &str, index: u64) -> Self {
        Self::new(derive_seed(seed, tag, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
