//! Seeded randomness with a pinned generator and pinned derivations.
//!
//! Every randomized procedure in this crate (bootstrap resampling, dataset
//! shuffling) draws from PCG-64 (`rand_pcg::Pcg64`, the 128-bit LCG with
//! XSL-RR output). Sub-generators are derived as
//! `Pcg64::new(seed as u128, stream as u128)`, so a master seed plus a
//! stream index fully determines the draw sequence. Index sampling and
//! shuffling are defined below in terms of raw `next_u64` calls; nothing
//! depends on distribution code that could change underneath us.

use rand_core::Rng;
pub use rand_pcg::Pcg64;

/// Generator for `stream` derived from the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> Pcg64 {
    Pcg64::new(seed as u128, stream as u128)
}

/// Uniform index in `0..n`, defined as `next_u64() mod n`.
///
/// The modulo bias is below 2^-50 for any `n` this crate draws from.
pub fn index(rng: &mut Pcg64, n: usize) -> usize {
    assert!(n > 0, "index range must be non-empty");
    (rng.next_u64() % n as u64) as usize
}

/// Fisher-Yates shuffle: for i from n-1 down to 1, swap i with
/// `next_u64() mod (i + 1)`.
pub fn shuffle<T>(rng: &mut Pcg64, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
