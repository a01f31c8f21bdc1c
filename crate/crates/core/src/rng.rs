//! Named random streams derived from a single seed.
//!
//! Every consumer of randomness asks for a stream by name, so adding a new
//! consumer never perturbs the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive an independent, reproducible RNG for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: u64 = stream(7, "x").random();
        let b: u64 = stream(7, "x").random();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_independent_by_name_and_seed() {
        let a: u64 = stream(7, "x").random();
        let b: u64 = stream(7, "y").random();
        let c: u64 = stream(8, "x").random();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
