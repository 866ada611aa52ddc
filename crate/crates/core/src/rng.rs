//! Seed streams for reproducible experiments.
//!
//! Every random quantity in the toolkit (view pools, batch order, weight
//! init, probe directions) is drawn from a ChaCha keystream whose key is
//! derived from a root seed and a path of labels. ChaCha is counter-based,
//! so a stream's output depends only on its key and position; splitting off
//! a labelled child never disturbs the parent or its siblings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    key: u64,
}

// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
        }
    }

    /// Child stream for a named purpose, e.g. `"views"` or `"batches"`.
    pub fn split(&self, label: &str) -> Self {
        Self {
            key: mix64(self.key ^ mix64(fnv1a(label))),
        }
    }

    /// Child stream for the `i`-th member of a family (direction `i`, batch `i`, ...).
    pub fn index(&self, i: u64) -> Self {
        Self {
            key: mix64(self.key.rotate_left(17) ^ mix64(i.wrapping_add(0xD1B5_4A32_D192_ED03))),
        }
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}
