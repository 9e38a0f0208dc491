//! Reference mechanisms that release only what the protocols may reveal.
//!
//! Each mechanism draws noise in the same order as its protocol counterpart,
//! so running both from the same seed yields identical noise.

use serde::{Deserialize, Serialize};

use crate::dpnoise::{JointNoise, NoiseScale, NoiseSource};
use crate::servers::SeededServers;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogicalRecord {
    pub id: u64,
    pub key: u32,
    pub attrs: Vec<u32>,
}

/// Insertion-only stream of logical updates over steps `0..=horizon`.
/// A `None` event marks a step with no arrival.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LogicalStream {
    horizon: u64,
    events: Vec<(u64, Option<LogicalRecord>)>,
}

impl LogicalStream {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            events: Vec::new(),
        }
    }

    /// Builds a stream with `counts[t]` anonymous arrivals at step `t`.
    pub fn from_counts(counts: &[u64]) -> Self {
        let mut s = Self::new(counts.len().saturating_sub(1) as u64);
        let mut id = 0;
        for (t, n) in counts.iter().enumerate() {
            for _ in 0..*n {
                s.push(t as u64, LogicalRecord { id, key: 0, attrs: Vec::new() });
                id += 1;
            }
        }
        s
    }

    /// Appends a record, keeping events ordered by time (stable).
    pub fn push(&mut self, t: u64, record: LogicalRecord) {
        assert!(t <= self.horizon, "record at {t} past horizon {}", self.horizon);
        let at = self.events.partition_point(|(u, _)| *u <= t);
        self.events.insert(at, (t, Some(record)));
    }

    pub fn mark_empty(&mut self, t: u64) {
        let at = self.events.partition_point(|(u, _)| *u <= t);
        self.events.insert(at, (t, None));
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn set_horizon(&mut self, horizon: u64) {
        assert!(self.events.last().is_none_or(|(t, _)| *t <= horizon));
        self.horizon = horizon;
    }

    pub fn events(&self) -> &[(u64, Option<LogicalRecord>)] {
        &self.events
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &LogicalRecord)> {
        self.events.iter().filter_map(|(t, r)| r.as_ref().map(|r| (*t, r)))
    }

    pub fn len(&self) -> usize {
        self.records().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arrivals per step, indexed `0..=horizon`.
    pub fn counts(&self) -> Vec<u64> {
        let mut c = vec![0; self.horizon as usize + 1];
        for (t, _) in self.records() {
            c[t as usize] += 1;
        }
        c
    }

    /// Records grouped per step, indexed `0..=horizon`.
    pub fn by_step(&self) -> Vec<Vec<&LogicalRecord>> {
        let mut steps = vec![Vec::new(); self.horizon as usize + 1];
        for (t, r) in self.records() {
            steps[t as usize].push(r);
        }
        steps
    }

    pub fn with_record(&self, t: u64, record: LogicalRecord) -> Self {
        let mut s = self.clone();
        s.push(t, record);
        s
    }

    pub fn without_record(&self, id: u64) -> Self {
        let mut s = self.clone();
        if let Some(i) = s
            .events
            .iter()
            .position(|(_, r)| r.as_ref().is_some_and(|r| r.id == id))
        {
            s.events.remove(i);
        }
        s
    }

    /// Every record repeated `q` times, modelling a transformation in which
    /// each update contributes `q` rows.
    pub fn replicate(&self, q: u64) -> Self {
        let mut s = Self::new(self.horizon);
        for (t, r) in self.records() {
            for j in 0..q {
                s.push(
                    t,
                    LogicalRecord {
                        id: r.id * q + j,
                        ..r.clone()
                    },
                );
            }
        }
        s
    }

    /// True when the streams are equal or differ by one added or removed record.
    pub fn is_neighbor(&self, other: &Self) -> bool {
        if self.horizon != other.horizon {
            return false;
        }
        let mut a: Vec<(u64, &LogicalRecord)> = self.records().collect();
        let mut b: Vec<(u64, &LogicalRecord)> = other.records().collect();
        if a.len() < b.len() {
            std::mem::swap(&mut a, &mut b);
        }
        match a.len() - b.len() {
            0 => {
                a.sort();
                b.sort();
                a == b
            }
            1 => {
                a.sort();
                b.sort();
                let mut skipped = false;
                let mut j = 0;
                for x in &a {
                    if j < b.len() && *x == b[j] {
                        j += 1;
                    } else if !skipped {
                        skipped = true;
                    } else {
                        return false;
                    }
                }
                j == b.len()
            }
            _ => false,
        }
    }
}

/// A released value at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub t: u64,
    pub value: f64,
}

fn flush_due(flush_interval: u64, t: u64) -> bool {
    flush_interval > 0 && t > 0 && t % flush_interval == 0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimerOracle {
    pub interval: u64,
    pub b: f64,
    pub epsilon: f64,
    /// Counting restarts after each flush; 0 disables.
    pub flush_interval: u64,
}

/// Timer mechanism: at each multiple of the interval, the count of arrivals
/// since the previous release (or flush) plus `Lap(b/eps)`. Arrivals at step 0
/// fall into the first window. Other steps release nothing.
pub fn m_timer_with(stream: &LogicalStream, cfg: &TimerOracle, noise: &mut impl NoiseSource) -> Vec<Release> {
    let scale = NoiseScale::new(cfg.b, cfg.epsilon).expect("timer oracle scale");
    let counts = stream.counts();
    let mut acc = counts[0];
    let mut out = Vec::new();
    for t in 1..=stream.horizon() {
        acc += counts[t as usize];
        if t % cfg.interval == 0 {
            let value = acc as f64 + noise.laplace(scale);
            out.push(Release { t, value });
            acc = 0;
        }
        if flush_due(cfg.flush_interval, t) {
            acc = 0;
        }
    }
    out
}

pub fn m_timer(stream: &LogicalStream, cfg: &TimerOracle, seed: u64) -> Vec<Release> {
    let mut servers = SeededServers::new(seed);
    m_timer_with(stream, cfg, &mut JointNoise(&mut servers))
}

/// Scale of the released value in the threshold mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AntOutputScale {
    /// `2b/eps`, what the threshold protocol actually adds.
    #[default]
    Protocol,
    /// `4b/eps`, the value used in the privacy argument.
    Proof,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntOracle {
    pub theta: f64,
    pub b: f64,
    pub epsilon: f64,
    pub output: AntOutputScale,
    pub flush_interval: u64,
}

impl AntOracle {
    fn threshold_scale(&self) -> NoiseScale {
        NoiseScale::new(4.0 * self.b, self.epsilon).expect("threshold scale")
    }

    fn check_scale(&self) -> NoiseScale {
        NoiseScale::new(8.0 * self.b, self.epsilon).expect("check scale")
    }

    fn output_scale(&self) -> NoiseScale {
        let k = match self.output {
            AntOutputScale::Protocol => 2.0,
            AntOutputScale::Proof => 4.0,
        };
        NoiseScale::new(k * self.b, self.epsilon).expect("output scale")
    }
}

/// Above-noisy-threshold mechanism over counts since the last release:
/// `theta~ = theta + Lap(4b/eps)`, each step compares `c + Lap(8b/eps)` with
/// it and on a crossing releases `c + Lap(out)`, then redraws the threshold.
pub fn m_ant_with(stream: &LogicalStream, cfg: &AntOracle, noise: &mut impl NoiseSource) -> Vec<Release> {
    let counts = stream.counts();
    let mut threshold = cfg.theta + noise.laplace(cfg.threshold_scale());
    let mut acc = counts[0];
    let mut out = Vec::new();
    for t in 1..=stream.horizon() {
        acc += counts[t as usize];
        let check = acc as f64 + noise.laplace(cfg.check_scale());
        if check >= threshold {
            let value = acc as f64 + noise.laplace(cfg.output_scale());
            out.push(Release { t, value });
            threshold = cfg.theta + noise.laplace(cfg.threshold_scale());
            acc = 0;
        }
        if flush_due(cfg.flush_interval, t) {
            acc = 0;
        }
    }
    out
}

pub fn m_ant(stream: &LogicalStream, cfg: &AntOracle, seed: u64) -> Vec<Release> {
    let mut servers = SeededServers::new(seed);
    m_ant_with(stream, cfg, &mut JointNoise(&mut servers))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NantConfig {
    pub epsilon: f64,
    pub theta: f64,
    pub delta_f: f64,
}

/// Numeric above-noisy-threshold: one pass over the steps after `after`
/// (from step 0 inclusive when `None`), stopping at the first crossing.
/// Budget split evenly: threshold `Lap(2df/eps1)`, per-step `Lap(4df/eps1)`,
/// release `Lap(2df/eps2)`.
pub fn nant_with(
    stream: &LogicalStream,
    after: Option<u64>,
    cfg: &NantConfig,
    noise: &mut impl NoiseSource,
) -> Option<Release> {
    let eps1 = cfg.epsilon / 2.0;
    let eps2 = cfg.epsilon / 2.0;
    let theta_scale = NoiseScale::new(2.0 * cfg.delta_f, eps1).expect("nant threshold scale");
    let check_scale = NoiseScale::new(4.0 * cfg.delta_f, eps1).expect("nant check scale");
    let out_scale = NoiseScale::new(2.0 * cfg.delta_f, eps2).expect("nant output scale");
    let counts = stream.counts();
    let threshold = cfg.theta + noise.laplace(theta_scale);
    let (mut c, first) = match after {
        None => (counts[0], 1),
        Some(a) => (0, a + 1),
    };
    for t in first..=stream.horizon() {
        c += counts[t as usize];
        if c as f64 + noise.laplace(check_scale) >= threshold {
            let value = c as f64 + noise.laplace(out_scale);
            return Some(Release { t, value });
        }
    }
    None
}

pub fn nant(stream: &LogicalStream, cfg: &NantConfig, seed: u64) -> Option<Release> {
    let mut servers = SeededServers::new(seed);
    nant_with(stream, None, cfg, &mut JointNoise(&mut servers))
}
