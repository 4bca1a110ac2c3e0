//! Deterministic named random streams.
//!
//! All randomness in the simulator flows through [`stream`]: a ChaCha8
//! generator seeded from `(master_seed, purpose, index)`. Purposes are short
//! static tags ("init", "epoch", "partition-dirichlet", ...) and the index
//! disambiguates per-client or per-round streams. Because each consumer owns
//! an independent stream, training clients in parallel draws exactly the
//! same numbers as training them one by one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte string. Also used for config fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses `(master_seed, purpose, index)` into a single 64-bit seed.
pub fn derive_seed(master_seed: u64, purpose: &str, index: u64) -> u64 {
    let mut s = splitmix64(master_seed);
    s = splitmix64(s ^ fnv1a64(purpose.as_bytes()));
    splitmix64(s ^ index)
}

/// The named random stream for one purpose and index.
pub fn stream(master_seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, purpose, index))
}

/// Fisher-Yates shuffle of `0..n` using the given stream.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
