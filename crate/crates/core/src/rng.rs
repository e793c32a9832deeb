//! Reproducible random streams.
//!
//! Every episode and every mini-batch sample draws from its own ChaCha8
//! stream. The key is derived from the experiment seed and a primary index
//! (replication or episode); the stream id selects the secondary index. Two
//! streams with different coordinates never overlap, and the same
//! coordinates always reproduce the same numbers regardless of the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the stream for coordinates `(seed, primary, secondary)`.
pub fn stream(seed: u64, primary: u64, secondary: u64) -> StreamRng {
    let mut state = seed ^ primary.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(secondary);
    rng
}

/// Mixes a label into a seed so that unrelated experiment stages sharing a
/// user seed do not share streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut state = seed;
    for byte in label.bytes() {
        state ^= u64::from(byte);
        state = splitmix64(&mut state);
    }
    state
}

/// Seed of replication `k` of an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, k: usize) -> u64 {
    use rand::RngCore;
    stream(derive_seed(seed, "replication"), k as u64, 0).next_u64()
}
