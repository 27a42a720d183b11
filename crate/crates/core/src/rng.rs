//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by a
//! root seed and a tuple of keys (world, generation, block, ...). Work is cut
//! into fixed-size blocks keyed by their position, so results do not depend
//! on how rayon schedules the blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples handled by one substream.
pub const BLOCK: usize = 4096;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `seed` and a key path.
pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let stream = keys
        .iter()
        .fold(0x5851_f42d_4c95_7f2d, |acc, &k| splitmix(acc ^ splitmix(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of blocks covering `n` items.
pub fn n_blocks(n: usize) -> usize {
    n.div_ceil(BLOCK)
}

/// Half-open item range of block `b` out of `n` items.
pub fn block_range(b: usize, n: usize) -> std::ops::Range<usize> {
    b * BLOCK..((b + 1) * BLOCK).min(n)
}
