//! Counter-based random streams.
//!
//! Every random draw in the simulator comes from ChaCha8 keyed by the
//! experiment seed, with a 64-bit stream id selecting the consumer (a cache's
//! IRM stream, a group's shot-noise stream, an agent's exploration stream)
//! and the block counter selecting the step. A stream for step `t` can be
//! reconstructed without replaying steps `0..t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream-id namespaces. The low 32 bits carry the cache, group or agent id.
pub mod streams {
    pub const IRM: u64 = 1 << 32;
    pub const SNM_CATALOG: u64 = 2 << 32;
    pub const SNM_SHOT: u64 = 3 << 32;
    pub const EXPLORE: u64 = 4 << 32;
    pub const TIE_BREAK: u64 = 5 << 32;
}

/// Words reserved per step inside one stream.
const WORDS_PER_STEP: u128 = 1 << 32;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expands a 64-bit experiment seed into a ChaCha key.
pub fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A sequential stream for `(seed, stream)`, starting at word 0.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    rng.set_stream(stream);
    rng
}

/// The stream for `(seed, stream)` positioned at the start of `step`.
pub fn step_rng(seed: u64, stream: u64, step: u64) -> StreamRng {
    let mut rng = stream_rng(seed, stream);
    rng.set_word_pos(u128::from(step) * WORDS_PER_STEP);
    rng
}
