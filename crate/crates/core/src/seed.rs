//! Seed fan-out and the generator used by every stochastic component.
//!
//! All randomness flows through [`SimRng`] (xoshiro256++, 256-bit state),
//! seeded through SplitMix64. Sub-seeds are derived from a master seed and a
//! stream label, so adding a laser never perturbs the streams of the others.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Pseudo-random generator used throughout the crate.
pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the sub-seed for stream `label` from `master`.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    splitmix64(master ^ splitmix64(label.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Builds a generator for `seed`.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
        assert_ne!(derive_seed(43, 0), a);
    }

    #[test]
    fn generator_output_is_pinned() {
        // Reproducibility is part of the external contract: if this changes,
        // every stored scenario output changes with it.
        let mut rng = rng_from_seed(7);
        let first = rng.next_u64();
        let mut again = rng_from_seed(7);
        assert_eq!(first, again.next_u64());
        assert_eq!(splitmix64(0), 0);
        assert_eq!(splitmix64(1), 0x5692_161D_100B_05E5);
    }
}
