//! Synchronizing DP-sized batches from the cache into the view.
//!
//! The timer protocol syncs every `T` steps; the threshold protocol syncs when
//! the noisy counter crosses a noisy threshold. Both fetch `max(0, round(c +
//! noise))` rows, real rows first, and reset the counter. A periodic flush
//! moves a fixed number of rows to the view and recycles the rest.

use thiserror::Error;

use crate::dpnoise::{JointNoise, NoiseError, NoiseScale, NoiseSource};
use crate::leakage::transcript::EventKind;
use crate::obliv::{cache_flush, cache_read, obli_sort};
use crate::servers::ServerRandomness;
use crate::sharing::{recover, RingValue, SharePair, SharingError};
use crate::state::ProtocolState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShrinkError {
    #[error("sync interval must be at least 1")]
    ZeroInterval,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("bound needs k >= 4 ln(1/beta) = {need:.3}, got k = {k}")]
pub struct BoundPreconditionError {
    pub k: u64,
    pub need: f64,
}

/// Periodic flush: every `interval` steps move `size` rows to the view and
/// recycle the remainder. An interval of 0 disables flushing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushConfig {
    pub interval: u64,
    pub size: usize,
}

impl FlushConfig {
    pub fn due(&self, t: u64) -> bool {
        self.interval > 0 && t > 0 && t % self.interval == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimerConfig {
    interval: u64,
    scale: NoiseScale,
    pub flush: FlushConfig,
    /// Fault injection: publish the true counter as the batch size.
    pub leak_true_count: bool,
}

impl TimerConfig {
    pub fn new(interval: u64, epsilon: f64, b: u32, flush: FlushConfig) -> Result<Self, ShrinkError> {
        if interval == 0 {
            return Err(ShrinkError::ZeroInterval);
        }
        Ok(Self {
            interval,
            scale: NoiseScale::new(b as f64, epsilon)?,
            flush,
            leak_true_count: false,
        })
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn scale(&self) -> NoiseScale {
        self.scale
    }
}

/// Threshold protocol parameters; the budget is split evenly between the
/// threshold test and the released size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntConfig {
    theta: f64,
    b: f64,
    epsilon: f64,
    pub flush: FlushConfig,
    pub leak_true_count: bool,
}

impl AntConfig {
    pub fn new(theta: f64, epsilon: f64, b: u32, flush: FlushConfig) -> Result<Self, ShrinkError> {
        NoiseScale::new(b as f64, epsilon)?;
        Ok(Self {
            theta,
            b: b as f64,
            epsilon,
            flush,
            leak_true_count: false,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn epsilon1(&self) -> f64 {
        self.epsilon / 2.0
    }

    pub fn epsilon2(&self) -> f64 {
        self.epsilon / 2.0
    }

    /// `2b / eps1`
    pub fn threshold_scale(&self) -> NoiseScale {
        NoiseScale::new(2.0 * self.b, self.epsilon1()).expect("validated")
    }

    /// `4b / eps1`
    pub fn check_scale(&self) -> NoiseScale {
        NoiseScale::new(4.0 * self.b, self.epsilon1()).expect("validated")
    }

    /// `b / eps2`
    pub fn output_scale(&self) -> NoiseScale {
        NoiseScale::new(self.b, self.epsilon2()).expect("validated")
    }
}

/// Noisy threshold held as shares of its 64-bit float pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdShares {
    pub hi: SharePair,
    pub lo: SharePair,
}

impl ThresholdShares {
    pub fn recover(&self) -> f64 {
        let bits = ((recover(self.hi).word() as u64) << 32) | recover(self.lo).word() as u64;
        f64::from_bits(bits)
    }
}

fn share_threshold<R: ServerRandomness>(
    value: f64,
    state: &mut ProtocolState<R>,
) -> Result<ThresholdShares, SharingError> {
    let bits = value.to_bits();
    Ok(ThresholdShares {
        hi: state.share_fresh(RingValue((bits >> 32) as u32))?,
        lo: state.share_fresh(RingValue(bits as u32))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncOutcome {
    pub t: u64,
    /// Recovered counter before the sync.
    pub count: u32,
    /// `count + noise`, before rounding and clamping.
    pub noisy: f64,
    pub size: usize,
    pub real_fetched: usize,
    pub comparisons: u64,
}

/// Rounds to the nearest integer and clamps at zero.
pub fn clamp_size(noisy: f64) -> usize {
    noisy.round().max(0.0) as usize
}

fn sync<R: ServerRandomness>(
    t: u64,
    count: u32,
    noisy: f64,
    size: usize,
    state: &mut ProtocolState<R>,
) -> Result<SyncOutcome, ShrinkError> {
    let comparisons = obli_sort(&mut state.cache);
    let fetched = cache_read(&mut state.cache, size, &mut state.seqs, t);
    let real_fetched = fetched.iter().filter(|r| r.is_view).count();
    state.view.append(t, fetched);
    let shares = state.reshare_counter(0)?;
    state
        .transcript
        .record_both(t, EventKind::SyncBatch, size as u64, Some(shares));
    Ok(SyncOutcome {
        t,
        count,
        noisy,
        size,
        real_fetched,
        comparisons,
    })
}

/// Timer protocol step; a no-op unless `t` is a multiple of the interval.
pub fn sdp_timer_step<R: ServerRandomness>(
    t: u64,
    cfg: &TimerConfig,
    state: &mut ProtocolState<R>,
) -> Result<Option<SyncOutcome>, ShrinkError> {
    if t % cfg.interval != 0 {
        return Ok(None);
    }
    let c = state.counter_value();
    let noise = JointNoise(&mut state.randomness).laplace(cfg.scale);
    let noisy = c as f64 + noise;
    let size = if cfg.leak_true_count {
        c as usize
    } else {
        clamp_size(noisy)
    };
    sync(t, c, noisy, size, state).map(Some)
}

/// Threshold protocol state carried between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AntState {
    pub threshold: ThresholdShares,
}

/// Draws and shares the initial noisy threshold (run at t = 0).
pub fn sdp_ant_init<R: ServerRandomness>(
    cfg: &AntConfig,
    state: &mut ProtocolState<R>,
) -> Result<AntState, ShrinkError> {
    let noisy = cfg.theta + JointNoise(&mut state.randomness).laplace(cfg.threshold_scale());
    Ok(AntState {
        threshold: share_threshold(noisy, state)?,
    })
}

/// Threshold protocol step: compare the noisy counter with the noisy
/// threshold and, on a crossing, sync and refresh the threshold.
pub fn sdp_ant_step<R: ServerRandomness>(
    t: u64,
    cfg: &AntConfig,
    ant: &mut AntState,
    state: &mut ProtocolState<R>,
) -> Result<Option<SyncOutcome>, ShrinkError> {
    let c = state.counter_value();
    let threshold = ant.threshold.recover();
    let check = c as f64 + JointNoise(&mut state.randomness).laplace(cfg.check_scale());
    state
        .transcript
        .record_both(t, EventKind::ThresholdCheck, 0, None);
    if check < threshold {
        return Ok(None);
    }
    let noisy = c as f64 + JointNoise(&mut state.randomness).laplace(cfg.output_scale());
    let size = if cfg.leak_true_count {
        c as usize
    } else {
        clamp_size(noisy)
    };
    let out = sync(t, c, noisy, size, state)?;
    let fresh = cfg.theta + JointNoise(&mut state.randomness).laplace(cfg.threshold_scale());
    ant.threshold = share_threshold(fresh, state)?;
    state
        .transcript
        .record_both(t, EventKind::ShareReceived, 0, None);
    Ok(Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushReport {
    pub t: u64,
    pub size: usize,
    pub real_fetched: usize,
    pub recycled_real: usize,
    pub comparisons: u64,
}

/// Flushes the cache when `t` is a multiple of the flush interval.
pub fn flush_step<R: ServerRandomness>(
    t: u64,
    cfg: &FlushConfig,
    state: &mut ProtocolState<R>,
) -> Result<Option<FlushReport>, ShrinkError> {
    if !cfg.due(t) {
        return Ok(None);
    }
    let out = cache_flush(&mut state.cache, cfg.size, &mut state.seqs, t);
    let real_fetched = out.fetched.iter().filter(|r| r.is_view).count();
    state.view.append(t, out.fetched);
    state.recycled_real += out.recycled_real as u64;
    let shares = state.reshare_counter(0)?;
    state
        .transcript
        .record_both(t, EventKind::FlushBatch, cfg.size as u64, Some(shares));
    Ok(Some(FlushReport {
        t,
        size: cfg.size,
        real_fetched,
        recycled_real: out.recycled_real,
        comparisons: out.comparisons,
    }))
}

/// Deferred-data bound after `k` timer syncs, holding with probability
/// `1 - beta`: `(2b/eps) sqrt(k ln(1/beta))`.
pub fn bound_deferred_timer(b: f64, epsilon: f64, k: u64, beta: f64) -> Result<f64, BoundPreconditionError> {
    let log_inv = (1.0 / beta).ln();
    let need = 4.0 * log_inv;
    if (k as f64) < need {
        return Err(BoundPreconditionError { k, need });
    }
    Ok(2.0 * b / epsilon * (k as f64 * log_inv).sqrt())
}

/// Dummy rows inserted into the view after `k` timer syncs: the deferred bound
/// plus the flush contribution `s k T / f`.
pub fn bound_dummy_timer(
    b: f64,
    epsilon: f64,
    k: u64,
    beta: f64,
    s: f64,
    interval: f64,
    f: f64,
) -> Result<f64, BoundPreconditionError> {
    Ok(bound_deferred_timer(b, epsilon, k, beta)? + s * k as f64 * interval / f)
}

/// Deferred-data bound for the threshold protocol at time `t`: `16 b ln(t) / eps`.
pub fn bound_deferred_ant(b: f64, epsilon: f64, t: f64) -> f64 {
    16.0 * b * t.ln() / epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpnoise::word_for_noise;
    use crate::obliv::{cache_append, SecureTuple};
    use crate::servers::{ScriptedServers, SeededServers};

    fn reals(n: usize, seq0: u64) -> Vec<SecureTuple> {
        (0..n as u64)
            .map(|i| SecureTuple::real(1, vec![0], seq0 + i, 0, vec![seq0 + i]))
            .collect()
    }

    fn dummies(n: usize, seq0: u64) -> Vec<SecureTuple> {
        (0..n as u64).map(|i| SecureTuple::dummy(1, seq0 + i, 0)).collect()
    }

    fn no_flush() -> FlushConfig {
        FlushConfig { interval: 0, size: 0 }
    }

    fn pinned(noise: &[(f64, NoiseScale)]) -> ScriptedServers {
        ScriptedServers::new(noise.iter().map(|(n, s)| (word_for_noise(*n, *s), RingValue(0))))
    }

    fn loaded_state(randomness: ScriptedServers, real: usize, dummy: usize) -> ProtocolState<ScriptedServers> {
        let mut state = ProtocolState::new(1, randomness).unwrap();
        let mut batch = dummies(dummy, 1000);
        batch.extend(reals(real, 0));
        cache_append(&mut state.cache, batch);
        state.reshare_counter(real as u32).unwrap();
        state
    }

    #[test]
    fn timer_off_interval_is_noop() {
        let cfg = TimerConfig::new(10, 1.5, 10, no_flush()).unwrap();
        let mut state = loaded_state(ScriptedServers::new([]), 5, 0);
        let before = state.transcript.len();
        assert_eq!(sdp_timer_step(7, &cfg, &mut state).unwrap(), None);
        assert_eq!(state.transcript.len(), before);
        assert_eq!(state.counter_value(), 5);
        assert!(state.view.is_empty());
    }

    #[test]
    fn timer_pinned_negative_noise() {
        let cfg = TimerConfig::new(10, 1.5, 10, no_flush()).unwrap();
        let mut state = loaded_state(pinned(&[(-4.2, cfg.scale())]), 30, 10);
        let out = sdp_timer_step(10, &cfg, &mut state).unwrap().unwrap();
        assert_eq!(out.count, 30);
        assert!((out.noisy - 25.8).abs() < 1e-6);
        assert_eq!(out.size, 26);
        assert_eq!(state.view.len(), 26);
        assert_eq!(state.view.real_count(), 26);
        assert_eq!(state.counter_value(), 0);
        assert_eq!(state.cache.real_count(), 4);
    }

    #[test]
    fn timer_clamps_at_zero() {
        let cfg = TimerConfig::new(5, 1.5, 10, no_flush()).unwrap();
        let mut state = loaded_state(pinned(&[(-7.9, cfg.scale())]), 2, 3);
        let out = sdp_timer_step(5, &cfg, &mut state).unwrap().unwrap();
        assert_eq!(out.size, 0);
        assert!(state.view.is_empty());
        assert_eq!(state.counter_value(), 0);
        assert_eq!(state.cache.len(), 5);
    }

    #[test]
    fn ant_pinned_trigger() {
        let cfg = AntConfig::new(30.0, 1.5, 10, no_flush()).unwrap();
        let script = pinned(&[
            (2.1, cfg.threshold_scale()),
            (1.3, cfg.check_scale()),
            (-0.4, cfg.output_scale()),
            (0.0, cfg.threshold_scale()),
        ]);
        let mut state = loaded_state(script, 35, 0);
        let mut ant = sdp_ant_init(&cfg, &mut state).unwrap();
        assert!((ant.threshold.recover() - 32.1).abs() < 1e-6);
        let out = sdp_ant_step(1, &cfg, &mut ant, &mut state).unwrap().unwrap();
        assert_eq!(out.count, 35);
        assert_eq!(out.size, 35);
        assert_eq!(state.view.real_count(), 35);
        assert_eq!(state.counter_value(), 0);
        assert!((ant.threshold.recover() - 30.0).abs() < 1e-6);
    }

    #[test]
    fn ant_quiet_stream_never_triggers() {
        let cfg = AntConfig::new(1e6, 1.0, 1, no_flush()).unwrap();
        let mut state = ProtocolState::new(1, SeededServers::new(9)).unwrap();
        let mut ant = sdp_ant_init(&cfg, &mut state).unwrap();
        for t in 1..500 {
            assert!(sdp_ant_step(t, &cfg, &mut ant, &mut state).unwrap().is_none());
        }
        assert!(state.view.is_empty());
    }

    #[test]
    fn threshold_shares_round_trip() {
        let mut state = ProtocolState::new(1, SeededServers::new(2)).unwrap();
        for v in [30.0, -1.25, 1e-9, 123456.789] {
            assert_eq!(share_threshold(v, &mut state).unwrap().recover(), v);
        }
    }

    #[test]
    fn flush_examples() {
        let flush = FlushConfig { interval: 2000, size: 15 };
        let mut state = ProtocolState::new(1, SeededServers::new(1)).unwrap();
        cache_append(&mut state.cache, dummies(40, 100));
        cache_append(&mut state.cache, reals(3, 0));
        assert!(flush_step(1999, &flush, &mut state).unwrap().is_none());
        let rep = flush_step(2000, &flush, &mut state).unwrap().unwrap();
        assert_eq!(state.view.len(), 15);
        assert_eq!(state.view.real_count(), 3);
        assert_eq!(rep.real_fetched, 3);
        assert!(state.cache.is_empty());

        let zero = FlushConfig { interval: 5, size: 0 };
        cache_append(&mut state.cache, reals(2, 50));
        flush_step(5, &zero, &mut state).unwrap();
        assert_eq!(state.view.len(), 15);
        assert!(state.cache.is_empty());
        assert_eq!(state.recycled_real, 2);
        assert_eq!(state.counter_value(), 0);
    }

    #[test]
    fn deferred_bound_values() {
        let a = bound_deferred_timer(10.0, 1.5, 16, 0.05).unwrap();
        // (20 / 1.5) * sqrt(16 ln 20)
        assert!((a - 92.31).abs() < 0.01, "{a}");
        assert!((bound_deferred_timer(20.0, 1.5, 16, 0.05).unwrap() - 2.0 * a).abs() < 1e-9);
        assert!((bound_deferred_timer(10.0, 3.0, 16, 0.05).unwrap() - a / 2.0).abs() < 1e-9);
        let err = bound_deferred_timer(10.0, 1.5, 11, 0.05).unwrap_err();
        assert_eq!(err.k, 11);
    }

    #[test]
    fn dummy_bound_values() {
        let a = bound_deferred_timer(10.0, 1.5, 16, 0.05).unwrap();
        assert_eq!(bound_dummy_timer(10.0, 1.5, 16, 0.05, 0.0, 10.0, 2000.0).unwrap(), a);
        let flush = |f| bound_dummy_timer(10.0, 1.5, 16, 0.05, 15.0, 10.0, f).unwrap() - a;
        assert!((flush(4000.0) - flush(2000.0) / 2.0).abs() < 1e-12);
        assert!((flush(2000.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn ant_bound_values() {
        assert!((bound_deferred_ant(10.0, 1.5, std::f64::consts::E) - 160.0 / 1.5).abs() < 1e-9);
        assert!((bound_deferred_ant(20.0, 1.5, 1000.0) - 1473.6).abs() < 0.1);
        assert!(bound_deferred_ant(1.0, 1.0, 50.0) < bound_deferred_ant(1.0, 1.0, 51.0));
    }
}
