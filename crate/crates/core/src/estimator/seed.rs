//! Per-trial seed derivation.
//!
//! `instance_key = le_u64(sha256("passuntil/trial-seed/v1" || le(base_seed) || utf8(instance_id))[..8])`
//! and `trial_seed = splitmix64(instance_key + (trial_index + 1) * 0x9E3779B97F4A7C15)`,
//! i.e. the trial index selects a position in a SplitMix64 stream keyed by
//! the instance.

use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"passuntil/trial-seed/v1";
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn instance_key(base_seed: u64, instance_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(base_seed.to_le_bytes());
    h.update(instance_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[inline]
pub fn trial_seed_from_key(key: u64, trial_index: u64) -> u64 {
    crate::oracles::synthetic_mix(key.wrapping_add(trial_index.wrapping_add(1).wrapping_mul(GAMMA)))
}

pub fn trial_seed(base_seed: u64, instance_id: &str, trial_index: u64) -> u64 {
    trial_seed_from_key(instance_key(base_seed, instance_id), trial_index)
}
