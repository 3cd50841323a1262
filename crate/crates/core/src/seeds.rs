//! Deterministic seed derivation for nested RNG streams.

/// splitmix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a salt.
pub fn mix(base: u64, salt: u64) -> u64 {
    splitmix(base ^ splitmix(salt))
}

/// Derive a seed from a base and a path of indices (epoch, batch, layer, ...).
pub fn mix_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |acc, &p| mix(acc, p))
}
