//! Deterministic random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by a base
//! seed and a label, so adding or reordering unrelated steps never shifts
//! another step's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a label and any number of integer keys into `base`.
pub fn derive(base: u64, label: &str, keys: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &k in keys {
        h = splitmix(h ^ k);
    }
    h
}

pub fn rng(base: u64, label: &str, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, label, keys))
}
