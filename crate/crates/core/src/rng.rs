//! The one PRNG used everywhere a seed appears: PCG-64 (XSL-RR 128/64 LCG,
//! `rand_pcg::Pcg64`), seeded through `SeedableRng::seed_from_u64`. Each
//! consumer derives its own stream from the user seed so that adding a
//! draw in one stage never shifts another stage's numbers.

use rand::SeedableRng;
pub use rand_pcg::Pcg64;

pub fn seeded(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Deterministic sub-seed for a named stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
