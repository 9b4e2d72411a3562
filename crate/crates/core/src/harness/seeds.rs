//! Counter-based seed derivation.
//!
//! Every replication gets its seeds from its coordinates alone, so results do
//! not depend on scheduling order.

pub const DATA_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 1;
pub const CHAIN_STREAM: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `master` together with a path of counters.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &c| splitmix64(h ^ splitmix64(c)))
}
