//! XOR secret sharing over 32-bit words.
//!
//! Values are split into two (or `k`) shares whose XOR recovers the secret.
//! All randomness is supplied by the caller so that every run can be replayed
//! from the per-server seeds.

use std::collections::HashSet;
use std::fmt;
use std::ops::BitXor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("value {0} does not fit in a 32-bit ring element")]
    OutOfRange(u64),
    #[error("server randomness pair ({z0:#010x}, {z1:#010x}) was already consumed in this run")]
    RandomnessReuse { z0: u32, z1: u32 },
    #[error("party {party} contributed {got} random words, need {need}")]
    InsufficientRandomness { party: usize, got: usize, need: usize },
    #[error("k-out-of-k sharing needs at least one party")]
    NoParties,
}

/// An element of the ring of 32-bit words. Addition is XOR.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RingValue(pub u32);

impl RingValue {
    pub const ZERO: RingValue = RingValue(0);

    pub fn word(self) -> u32 {
        self.0
    }

    pub fn msb(self) -> bool {
        self.0 >> 31 == 1
    }
}

impl TryFrom<u64> for RingValue {
    type Error = SharingError;

    fn try_from(v: u64) -> Result<Self, Self::Error> {
        u32::try_from(v)
            .map(RingValue)
            .map_err(|_| SharingError::OutOfRange(v))
    }
}

impl From<u32> for RingValue {
    fn from(v: u32) -> Self {
        RingValue(v)
    }
}

impl BitXor for RingValue {
    type Output = RingValue;

    fn bitxor(self, rhs: RingValue) -> RingValue {
        RingValue(self.0 ^ rhs.0)
    }
}

impl fmt::Debug for RingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

/// The two shares of a secret; `s0` is held by server 0 and `s1` by server 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SharePair {
    pub s0: RingValue,
    pub s1: RingValue,
}

impl SharePair {
    pub fn of(&self, server: usize) -> RingValue {
        match server {
            0 => self.s0,
            _ => self.s1,
        }
    }
}

pub fn share(x: RingValue, randomness: RingValue) -> SharePair {
    SharePair {
        s0: randomness,
        s1: x ^ randomness,
    }
}

pub fn recover(p: SharePair) -> RingValue {
    p.s0 ^ p.s1
}

/// Re-sharing inside the protocol from one word contributed by each server:
/// `s0 = z0 ^ z1`, `s1 = s0 ^ x`. Neither server alone can predict `s0`.
///
/// This is the stateless form; [`ShareSession`] additionally enforces that a
/// contributed pair is consumed only once per run.
pub fn share_in_protocol(x: RingValue, z0: RingValue, z1: RingValue) -> SharePair {
    let s0 = z0 ^ z1;
    SharePair { s0, s1: s0 ^ x }
}

/// Tracks the server-contributed randomness consumed during one protocol run.
#[derive(Debug, Default, Clone)]
pub struct ShareSession {
    consumed: HashSet<(u32, u32)>,
}

impl ShareSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn share_in_protocol(
        &mut self,
        x: RingValue,
        z0: RingValue,
        z1: RingValue,
    ) -> Result<SharePair, SharingError> {
        if !self.consumed.insert((z0.0, z1.0)) {
            return Err(SharingError::RandomnessReuse { z0: z0.0, z1: z1.0 });
        }
        Ok(share_in_protocol(x, z0, z1))
    }

    pub fn consumed(&self) -> usize {
        self.consumed.len()
    }
}

/// k-out-of-k sharing computed inside the protocol.
///
/// `contributions[i]` holds the random words of party `i`; with `k` parties each
/// must supply at least `k - 1` words. The `j`-th mask is the XOR of every
/// party's `j`-th word; the first `k - 1` shares are the masks and the last is
/// the secret XOR all masks.
pub fn share_k(
    x: RingValue,
    contributions: &[Vec<RingValue>],
) -> Result<Vec<RingValue>, SharingError> {
    let k = contributions.len();
    if k == 0 {
        return Err(SharingError::NoParties);
    }
    let need = k - 1;
    for (party, words) in contributions.iter().enumerate() {
        if words.len() < need {
            return Err(SharingError::InsufficientRandomness {
                party,
                got: words.len(),
                need,
            });
        }
    }
    let mut shares = Vec::with_capacity(k);
    let mut last = x;
    for j in 0..need {
        let mask = contributions
            .iter()
            .fold(RingValue::ZERO, |acc, words| acc ^ words[j]);
        last = last ^ mask;
        shares.push(mask);
    }
    shares.push(last);
    Ok(shares)
}

pub fn recover_k(shares: &[RingValue]) -> RingValue {
    shares.iter().fold(RingValue::ZERO, |acc, s| acc ^ *s)
}
