//! Seed derivation for reproducible, order-independent replications.
//!
//! Every replication owns a generator keyed by `(master seed, index)`. The
//! ChaCha stream id carries the index, so generators never overlap and the
//! draws of replication `i` do not depend on which thread ran it or when.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ReplicationRng = ChaCha8Rng;

/// Generator for replication `index` under `master`.
pub fn replication_rng(master: u64, index: u64) -> ReplicationRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derive a child master seed, e.g. one per point of a sweep.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5eed)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
