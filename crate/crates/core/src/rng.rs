//! Named random substreams.
//!
//! Every stochastic step takes its generator from `substream(seed, name)`, so
//! adding a new consumer of randomness never perturbs the draws of an existing
//! one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn substream(seed: u64, name: &str) -> Rng {
    Rng::from_seed(derive_key(seed, name))
}

/// Derive a child seed; handy when a sub-procedure itself takes a `u64` seed.
pub fn subseed(seed: u64, name: &str) -> u64 {
    let key = derive_key(seed, name);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

fn derive_key(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<u32> = (0..4).map(|_| substream(7, "a").gen()).collect();
        let mut r1 = substream(7, "a");
        let mut r2 = substream(7, "b");
        let x: u64 = r1.gen();
        let y: u64 = r2.gen();
        assert_ne!(x, y);
        assert_eq!(a[0], a[1]);
        assert_ne!(subseed(1, "x"), subseed(2, "x"));
    }
}
