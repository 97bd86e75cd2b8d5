//! Seeded random streams.
//!
//! Every record draws from its own stream derived from the run seed and the
//! record id, so results do not depend on processing order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RecordRng = ChaCha8Rng;

/// FNV-1a over the key bytes.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit key for `(seed, domain, id)`.
pub fn derive_key(seed: u64, domain: &str, id: &str) -> u64 {
    let mut bytes = Vec::with_capacity(domain.len() + id.len() + 1);
    bytes.extend_from_slice(domain.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(id.as_bytes());
    splitmix64(seed ^ splitmix64(fnv1a(&bytes)))
}

pub fn record_rng(seed: u64, domain: &str, id: &str) -> RecordRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, domain, id))
}
