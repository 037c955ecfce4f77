//! Deterministic seeding helpers.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! `u64` derived by mixing a base seed with stream coordinates (sample index,
//! epoch, view, ...). Results therefore depend only on those coordinates and
//! never on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Combine a base seed with stream coordinates into a new seed.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> DetRng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng_from(7, &[1, 2]).gen();
        let b: u64 = rng_from(7, &[1, 2]).gen();
        let c: u64 = rng_from(7, &[2, 1]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
