//! Seeded, splittable random streams.
//!
//! Every trajectory draws from its own ChaCha stream whose seed is derived
//! from the master seed and a path of tags (purpose, iteration, index), so a
//! run produces the same numbers whether rollouts execute serially or in
//! parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    pub const COLLECT: u64 = 1;
    pub const EVAL_ROBOT: u64 = 2;
    pub const EVAL_COLLECTION: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const WISHART: u64 = 6;
    pub const SUPERVISOR_REFERENCE: u64 = 7;
    pub const ORACLE: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in a tree of derived seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(self, tag: u64) -> Self {
        SeedTree {
            seed: splitmix64(self.seed ^ splitmix64(tag)),
        }
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
