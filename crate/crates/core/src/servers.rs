//! Randomness contributed by the two simulated servers.
//!
//! Each server owns a seeded ChaCha generator with two independent streams:
//! one feeding joint noise generation and one feeding in-protocol re-sharing.
//! Keeping the streams apart means a reference mechanism seeded the same way
//! sees exactly the noise words the protocol consumed, whatever else the
//! protocol did in between.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::sharing::RingValue;

const NOISE_STREAM: u64 = 0;
const SHARE_STREAM: u64 = 1;

/// Source of the one-time words each server feeds into a protocol call.
pub trait ServerRandomness {
    /// Words `(z0, z1)` for one joint noise draw.
    fn noise_words(&mut self) -> (RingValue, RingValue);
    /// Words `(z0, z1)` for one in-protocol re-sharing.
    fn share_words(&mut self) -> (RingValue, RingValue);
}

#[derive(Debug, Clone)]
struct ServerRng {
    noise: ChaCha20Rng,
    share: ChaCha20Rng,
}

impl ServerRng {
    fn new(seed: u64, server: u64) -> Self {
        let derived = seed ^ (server + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut noise = ChaCha20Rng::seed_from_u64(derived);
        noise.set_stream(NOISE_STREAM);
        let mut share = ChaCha20Rng::seed_from_u64(derived);
        share.set_stream(SHARE_STREAM);
        Self { noise, share }
    }
}

/// Both servers' generators, derived from a single experiment seed.
#[derive(Debug, Clone)]
pub struct SeededServers {
    servers: [ServerRng; 2],
}

impl SeededServers {
    pub fn new(seed: u64) -> Self {
        Self {
            servers: [ServerRng::new(seed, 0), ServerRng::new(seed, 1)],
        }
    }
}

impl ServerRandomness for SeededServers {
    fn noise_words(&mut self) -> (RingValue, RingValue) {
        let [a, b] = &mut self.servers;
        (RingValue(a.noise.next_u32()), RingValue(b.noise.next_u32()))
    }

    fn share_words(&mut self) -> (RingValue, RingValue) {
        let [a, b] = &mut self.servers;
        (RingValue(a.share.next_u32()), RingValue(b.share.next_u32()))
    }
}

/// Replays fixed words, for traces with pinned randomness.
///
/// Noise words are served from the script in order; share words come from a
/// counter so they never repeat.
#[derive(Debug, Clone, Default)]
pub struct ScriptedServers {
    noise: VecDeque<(RingValue, RingValue)>,
    next_share: u32,
}

impl ScriptedServers {
    pub fn new(noise: impl IntoIterator<Item = (RingValue, RingValue)>) -> Self {
        Self {
            noise: noise.into_iter().collect(),
            next_share: 1,
        }
    }

    pub fn remaining(&self) -> usize {
        self.noise.len()
    }
}

impl ServerRandomness for ScriptedServers {
    fn noise_words(&mut self) -> (RingValue, RingValue) {
        self.noise
            .pop_front()
            .expect("scripted noise words exhausted")
    }

    fn share_words(&mut self) -> (RingValue, RingValue) {
        let z = self.next_share;
        self.next_share += 1;
        (RingValue(z), RingValue(z.rotate_left(16) ^ 0x5A5A_5A5A))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent() {
        let mut a = SeededServers::new(7);
        let mut b = SeededServers::new(7);
        // Drawing share words on one side must not shift its noise stream.
        for _ in 0..5 {
            a.share_words();
        }
        for _ in 0..10 {
            assert_eq!(a.noise_words(), b.noise_words());
        }
    }

    #[test]
    fn servers_differ() {
        let mut s = SeededServers::new(1);
        let (z0, z1) = s.noise_words();
        assert_ne!(z0, z1);
        assert_ne!(SeededServers::new(1).noise_words(), SeededServers::new(2).noise_words());
    }
}
