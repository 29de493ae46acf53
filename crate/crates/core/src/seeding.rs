//! Deterministic, independent random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a derived stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Noise = 1,
    Encryption = 2,
    Selection = 3,
    Partition = 4,
    Baseline = 5,
    Query = 6,
    Keys = 7,
}

/// ChaCha20 keyed by `(seed, purpose, index)`.
pub fn derive_rng(seed: u64, stream: Stream, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"dppp-rng");
    ChaCha20Rng::from_seed(key)
}

/// Mixes a sub-index into a seed (SplitMix64 finalizer), for nested runs.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
