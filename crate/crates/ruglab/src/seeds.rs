//! Deterministic seed derivation so parallel tasks (forest trees, grid cells,
//! per-token generation) draw from independent streams regardless of
//! scheduling order.

/// splitmix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of tags.
///
/// Identical (master, path) pairs always yield the same child; distinct
/// paths yield effectively independent streams.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ 0xD1B5_4A32_D192_ED03);
    for &tag in path {
        s = splitmix64(s ^ splitmix64(tag));
    }
    s
}
