//! Counter-based random number streams.
//!
//! Every stochastic operation draws from a `(seed, stream)` pair mapped onto
//! a ChaCha8 keystream: the seed selects the key, the stream id selects one
//! of 2^64 independent keystreams, and the block counter advances within the
//! stream. Results are therefore reproducible regardless of evaluation order
//! or thread count, as long as each logical task owns its own stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids are partitioned by purpose so that independent pipeline stages
/// never share a keystream even when they share a pixel index.
pub mod streams {
    /// Twin-beam / coherent-pair sampling for pixel `i`: `PIXEL_SOURCE + 2*i`.
    pub const PIXEL_SOURCE: u64 = 1 << 32;
    /// Detector thinning for pixel `i`: `PIXEL_SOURCE + 2*i + 1`.
    pub const PIXEL_DETECTOR_OFFSET: u64 = 1;
    /// Scratch streams for analysis batches (resolution sweeps etc.).
    pub const ANALYSIS: u64 = 1 << 40;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, stream)`.
///
/// The 64-bit seed is expanded into the 256-bit ChaCha key with SplitMix64;
/// the stream id maps onto the ChaCha stream word.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Source-sampling stream for pixel `index` of a scan.
pub fn pixel_source_stream(index: usize) -> u64 {
    streams::PIXEL_SOURCE + 2 * index as u64
}

/// Detector-thinning stream for pixel `index` of a scan.
pub fn pixel_detector_stream(index: usize) -> u64 {
    pixel_source_stream(index) + streams::PIXEL_DETECTOR_OFFSET
}
