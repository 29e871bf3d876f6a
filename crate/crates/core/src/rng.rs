//! Counter-based random streams.
//!
//! Every random draw in a simulation comes from a ChaCha stream addressed by
//! `(master seed, purpose, round, agent, block)`. Streams never share state,
//! so the order in which agents are processed cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Dither,
    Gradient,
    Init,
    Data,
    Sampler,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Dither => 0x6469_7468,
            Purpose::Gradient => 0x6772_6164,
            Purpose::Init => 0x696e_6974,
            Purpose::Data => 0x6461_7461,
            Purpose::Sampler => 0x7361_6d70,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3;
    let mut acc = 0;
    for &w in words {
        state ^= w;
        acc = splitmix64(&mut state);
        state = acc;
    }
    acc
}

/// Factory for independent deterministic streams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `(purpose, round, agent, block)`.
    pub fn stream(&self, purpose: Purpose, round: u64, agent: u64, block: u64) -> ChaCha12Rng {
        let mut state = self.seed ^ purpose.tag().rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(mix(&[purpose.tag(), round, agent, block]));
        rng
    }
}
