//! Reproducible seed derivation.
//!
//! Every random stream in the crate is keyed by `(master, index, purpose)`.
//! The child seed is a splitmix64-style avalanche of the three inputs, so
//! streams do not depend on scheduling order and any single trajectory can be
//! replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_A: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;

/// Which stream a seed feeds. The tag values are part of the reproducibility
/// contract and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Trajectory,
    InitialData,
    Oracle,
    Coupling,
    Synthetic,
    Resample,
}

impl Purpose {
    pub fn tag(self) -> u64 {
        match self {
            Purpose::Trajectory => 0x7472_616a,
            Purpose::InitialData => 0x696e_6974,
            Purpose::Oracle => 0x6f72_636c,
            Purpose::Coupling => 0x636f_7570,
            Purpose::Synthetic => 0x7379_6e74,
            Purpose::Resample => 0x7273_6d70,
        }
    }
}

/// splitmix64 finaliser.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(MIX_A);
    x = (x ^ (x >> 27)).wrapping_mul(MIX_B);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, index: u64, purpose: Purpose) -> u64 {
    let keyed = mix64(master.wrapping_add(GOLDEN).wrapping_add(mix64(purpose.tag())));
    mix64(keyed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fill_normals<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}

pub fn normals<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_normals(rng, &mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seeds_are_distinct_across_indices_and_purposes() {
        let mut seen = HashSet::new();
        for p in [Purpose::Trajectory, Purpose::Oracle, Purpose::Coupling] {
            for i in 0..1000 {
                assert!(seen.insert(derive_seed(42, i, p)));
            }
        }
        assert_ne!(derive_seed(1, 0, Purpose::Trajectory), derive_seed(2, 0, Purpose::Trajectory));
    }

    #[test]
    fn streams_replay() {
        let a = normals(&mut rng_from_seed(derive_seed(7, 3, Purpose::Trajectory)), 16);
        let b = normals(&mut rng_from_seed(derive_seed(7, 3, Purpose::Trajectory)), 16);
        assert_eq!(a, b);
    }
}
