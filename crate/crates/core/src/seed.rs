//! Stable child-seed derivation for independent trials.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold `parts` into `master` one word at a time. Independent of platform,
/// thread count and Rust version.
pub fn child_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(master.wrapping_add(GOLDEN)), |acc, &p| {
            mix64(acc ^ mix64(p.wrapping_add(GOLDEN)))
        })
}
