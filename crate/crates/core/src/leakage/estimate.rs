//! Monte-Carlo estimate of privacy loss between two neighboring streams.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use super::oracles::{LogicalStream, Release};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("streams are not neighbors: they differ in more than one update")]
pub struct NeighborViolation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub trials: usize,
    /// Bins with fewer samples on either side are ignored.
    pub min_bin: u64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            min_bin: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    pub epsilon: f64,
    pub bins_used: usize,
}

/// Quantizes releases to `(t, clamp(round(value)))` pairs.
pub fn quantize(releases: &[Release]) -> Vec<i64> {
    releases
        .iter()
        .flat_map(|r| [r.t as i64, r.value.round().max(0.0) as i64])
        .collect()
}

// Both streams use the same per-trial seeds: each side's samples stay i.i.d.
// and identical streams give identical histograms.
fn trial_seed(base: u64, i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn histogram<M>(mechanism: &M, stream: &LogicalStream, cfg: &EstimatorConfig) -> HashMap<Vec<i64>, u64>
where
    M: Fn(&LogicalStream, u64) -> Vec<i64> + Sync,
{
    (0..cfg.trials as u64)
        .into_par_iter()
        .fold(HashMap::new, |mut h: HashMap<Vec<i64>, u64>, i| {
            *h.entry(mechanism(stream, trial_seed(cfg.seed, i))).or_default() += 1;
            h
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        })
}

/// Runs `mechanism` `trials` times on each stream and returns the largest
/// `|ln(p_a / p_b)|` over output bins populated on both sides by at least
/// `min_bin` samples. The mechanism maps a stream and a seed to a quantized
/// output vector.
pub fn empirical_privacy_loss<M>(
    mechanism: M,
    stream_a: &LogicalStream,
    stream_b: &LogicalStream,
    cfg: &EstimatorConfig,
) -> Result<LossEstimate, NeighborViolation>
where
    M: Fn(&LogicalStream, u64) -> Vec<i64> + Sync,
{
    if !stream_a.is_neighbor(stream_b) {
        return Err(NeighborViolation);
    }
    let ha = histogram(&mechanism, stream_a, cfg);
    let hb = histogram(&mechanism, stream_b, cfg);
    let n = cfg.trials as f64;
    let mut epsilon: f64 = 0.0;
    let mut bins_used = 0;
    for (bin, ca) in &ha {
        let Some(cb) = hb.get(bin) else { continue };
        if *ca < cfg.min_bin || *cb < cfg.min_bin {
            continue;
        }
        bins_used += 1;
        epsilon = epsilon.max(((*ca as f64 / n) / (*cb as f64 / n)).ln().abs());
    }
    Ok(LossEstimate { epsilon, bins_used })
}

/// Total loss of a record that feeds several DP phases: for each record, the
/// sum of `stability * epsilon` over the phases it feeds; the bound is the
/// maximum over records.
pub fn composition_bound(records: &[Vec<(f64, f64)>]) -> f64 {
    records
        .iter()
        .map(|phases| phases.iter().map(|(q, e)| q * e).sum::<f64>())
        .fold(0.0, f64::max)
}
