// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Seed plumbing. Every stochastic routine takes an explicit generator so
//! runs are reproducible from a single master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type QmlaRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> QmlaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based child seed: `splitmix64(master + golden * (index + 1))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed keyed by a label, e.g. a model name inside an instance.
pub fn derive_seed_for(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(master, h)
}
