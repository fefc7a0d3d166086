//! Splittable seed derivation.
//!
//! One global seed fans out to per-stage, per-user, and per-tree streams.
//! Each stream is identified by a chain of tags, so adding users (or trees)
//! never perturbs the randomness of the others.

/// Stage tags used throughout the pipeline. Values are arbitrary but frozen:
/// changing them changes every derived stream.
pub mod stage {
    pub const SIGNATURE: u64 = 0x01;
    pub const SESSION: u64 = 0x02;
    pub const CHANNEL: u64 = 0x03;
    pub const DRIFT: u64 = 0x04;
    pub const BALANCE: u64 = 0x05;
    pub const FEATSEL: u64 = 0x06;
    pub const TREE: u64 = 0x07;
    pub const PERMUTE: u64 = 0x08;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and one tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag.wrapping_mul(GOLDEN))
}

/// Derive a child seed from `seed` and a chain of tags, applied in order.
pub fn mix_chain(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |acc, &t| mix(acc, t))
}
