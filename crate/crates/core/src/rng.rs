//! Seed derivation for reproducible, scheduling-independent RNG streams.
//!
//! Every unit of work (episode, trial, training run) draws from its own
//! stream derived from `(master seed, stage label, index)`, so results do not
//! depend on worker count or execution order.

use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label and indices, mixed into the master seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET ^ master.rotate_left(17);
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    for b in index.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Stream RNG for one unit of work.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
