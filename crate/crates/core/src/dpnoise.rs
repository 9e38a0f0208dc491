//! Laplace noise for the synchronization protocols.
//!
//! [`joint_laplace`] is the in-protocol sampler: the two servers each contribute
//! a uniform word, the protocol XORs them, maps the low 31 bits to `r` in (0,1)
//! and uses the top bit as the sign. [`LaplaceOracle`] is a conventional
//! inverse-CDF sampler kept for distribution checks.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::servers::ServerRandomness;
use crate::sharing::RingValue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("sensitivity must be positive and finite, got {0}")]
    Sensitivity(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
}

const LOW31: u32 = 0x7FFF_FFFF;
const ATOMS: f64 = 2_147_483_648.0; // 2^31

/// Sensitivity and privacy parameter of one Laplace draw; the scale is their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    sensitivity: f64,
    epsilon: f64,
}

impl NoiseScale {
    pub fn new(sensitivity: f64, epsilon: f64) -> Result<Self, NoiseError> {
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(NoiseError::Sensitivity(sensitivity));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(NoiseError::Epsilon(epsilon));
        }
        Ok(Self {
            sensitivity,
            epsilon,
        })
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }

    /// Same epsilon, sensitivity multiplied by `k`.
    pub fn times(&self, k: f64) -> Result<Self, NoiseError> {
        Self::new(self.sensitivity * k, self.epsilon)
    }
}

/// Maps the low 31 bits of `z` onto `((z mod 2^31) + 1) / (2^31 + 1)`.
pub fn fixed_point(z: RingValue) -> f64 {
    ((z.0 & LOW31) as f64 + 1.0) / (ATOMS + 1.0)
}

/// Laplace draw from the XOR of both servers' words.
///
/// `noise = scale * ln(r) * sign` with `sign = +1` when the top bit of
/// `z0 ^ z1` is set, so a set top bit gives a non-positive draw.
pub fn joint_laplace(z0: RingValue, z1: RingValue, scale: NoiseScale) -> f64 {
    let z = z0 ^ z1;
    let sign = if z.msb() { 1.0 } else { -1.0 };
    scale.scale() * fixed_point(z).ln() * sign
}

/// Inverse of [`joint_laplace`] up to 31-bit discretization: a combined word
/// whose draw at `scale` is as close as possible to `noise`.
pub fn word_for_noise(noise: f64, scale: NoiseScale) -> RingValue {
    let r = (-noise.abs() / scale.scale()).exp();
    let low = (r * (ATOMS + 1.0) - 1.0).round().clamp(0.0, LOW31 as f64) as u32;
    let msb = if noise <= 0.0 { 1u32 << 31 } else { 0 };
    RingValue(msb | low)
}

/// Inverse CDF of the zero-centred Laplace distribution.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let d = u - 0.5;
    -scale * d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

/// Reference sampler driven by its own seeded generator.
#[derive(Debug, Clone)]
pub struct LaplaceOracle {
    rng: ChaCha20Rng,
}

impl LaplaceOracle {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, scale: NoiseScale) -> f64 {
        // open interval (0, 1)
        let u = loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                break u;
            }
        };
        laplace_inverse_cdf(u, scale.scale())
    }
}

/// Anything that can hand out Laplace draws to a mechanism.
pub trait NoiseSource {
    fn laplace(&mut self, scale: NoiseScale) -> f64;
}

/// Joint noise from server-contributed words.
pub struct JointNoise<'a, R: ServerRandomness>(pub &'a mut R);

impl<R: ServerRandomness> NoiseSource for JointNoise<'_, R> {
    fn laplace(&mut self, scale: NoiseScale) -> f64 {
        let (z0, z1) = self.0.noise_words();
        joint_laplace(z0, z1, scale)
    }
}

impl NoiseSource for LaplaceOracle {
    fn laplace(&mut self, scale: NoiseScale) -> f64 {
        self.sample(scale)
    }
}

/// Every draw is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn laplace(&mut self, _scale: NoiseScale) -> f64 {
        0.0
    }
}

/// Replays given noise values regardless of scale; zero once exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNoise(VecDeque<f64>);

impl ScriptedNoise {
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().collect())
    }
}

impl NoiseSource for ScriptedNoise {
    fn laplace(&mut self, _scale: NoiseScale) -> f64 {
        self.0.pop_front().unwrap_or(0.0)
    }
}
