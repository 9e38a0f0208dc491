//! Step-by-step simulation of one protocol over one workload.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Protocol};
use super::metrics::MetricsRecord;
use super::streams::{
    client_batches, load_stream, stream_width, synth_stream, true_counts, DataError, SynthParams,
};
use crate::leakage::audit::{transcript_audit, AuditReport, AuditSpec};
use crate::leakage::oracles::LogicalStream;
use crate::leakage::transcript::{EventKind, Transcript};
use crate::obliv::{cache_read, network_size, SecureTuple, SeqAllocator};
use crate::servers::{SeededServers, ServerRandomness};
use crate::sharing::SharingError;
use crate::shrink::{
    clamp_size, flush_step, sdp_ant_init, sdp_ant_step, sdp_timer_step, AntConfig, AntState, FlushConfig,
    FlushReport, ShrinkError, SyncOutcome, TimerConfig,
};
use crate::state::ProtocolState;
use crate::transform::{Operator, OwnerBatches, TransformConfig, TransformError, Transformer};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Shrink(#[from] ShrinkError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

/// The plaintext input streams. `right` is empty for the filter.
#[derive(Debug, Clone)]
pub struct Workload {
    pub left: LogicalStream,
    pub right: LogicalStream,
}

fn restrict(stream: &LogicalStream, horizon: u64) -> LogicalStream {
    let mut out = LogicalStream::new(horizon);
    for (t, r) in stream.records().filter(|(t, _)| *t <= horizon) {
        out.push(t, r.clone());
    }
    out
}

impl Workload {
    /// Loads the configured files, or synthesizes data from the profile.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        let (left, right) = match &cfg.left_stream {
            Some(path) => {
                let left = load_stream(path)?;
                let right = match &cfg.right_stream {
                    Some(p) => load_stream(p)?,
                    None => LogicalStream::new(0),
                };
                (left, right)
            }
            None => {
                let params = SynthParams {
                    batch_size: cfg.batch_size,
                    multiplicity: cfg.multiplicity,
                    max_gap: cfg.max_gap,
                };
                synth_stream(cfg.profile, cfg.seed, cfg.horizon, &params)
            }
        };
        let right = if cfg.operator == Operator::Filter {
            LogicalStream::new(cfg.horizon)
        } else {
            restrict(&right, cfg.horizon)
        };
        Ok(Self {
            left: restrict(&left, cfg.horizon),
            right,
        })
    }

    pub fn true_counts(&self, cfg: &ExperimentConfig) -> Vec<u64> {
        true_counts(
            &self.left,
            &self.right,
            cfg.operator,
            cfg.effective_join_window(),
            cfg.filter_bound,
            cfg.horizon,
        )
    }
}

enum Shrinker {
    Timer(TimerConfig),
    Ant(AntConfig, Option<AntState>),
    Ep,
    Otm,
    Nm,
}

/// One run, advanced a step at a time.
pub struct Simulation<R: ServerRandomness> {
    cfg: ExperimentConfig,
    trial: u64,
    tcfg: TransformConfig,
    flush: FlushConfig,
    shrinker: Shrinker,
    transformer: Transformer,
    state: ProtocolState<R>,
    left_batches: Vec<Vec<SecureTuple>>,
    right_batches: Vec<Vec<SecureTuple>>,
    truth: Vec<u64>,
    next_t: u64,
    syncs: Vec<SyncOutcome>,
    flushes: Vec<FlushReport>,
    deferred_after_sync: Vec<u64>,
    produced: Vec<u64>,
    // costs since the previous query
    transform_cost: u64,
    shrink_cost: u64,
    volume: u64,
    volume_seen: usize,
    metrics: Vec<MetricsRecord>,
}

impl Simulation<SeededServers> {
    /// Servers seeded from `cfg.seed`.
    pub fn seeded(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        let workload = Workload::from_config(cfg)?;
        Self::new(cfg, &workload, SeededServers::new(cfg.seed))
    }
}

impl<R: ServerRandomness> Simulation<R> {
    pub fn new(cfg: &ExperimentConfig, workload: &Workload, randomness: R) -> Result<Self, RunError> {
        cfg.validate()?;
        let tcfg = cfg.transform_config()?;
        let shrinker = match cfg.protocol {
            Protocol::DpTimer => Shrinker::Timer(cfg.timer_config()?),
            Protocol::DpAnt => Shrinker::Ant(cfg.ant_config()?, None),
            Protocol::Ep => Shrinker::Ep,
            Protocol::Otm => Shrinker::Otm,
            Protocol::Nm => Shrinker::Nm,
        };
        let wl = stream_width(&workload.left);
        let wr = stream_width(&workload.right);
        let mut owner_seqs = SeqAllocator::new();
        let left_batches = client_batches(&workload.left, cfg.batch_size, wl, cfg.horizon, &mut owner_seqs)?;
        let (right_batches, width) = if cfg.operator == Operator::Filter {
            (Vec::new(), wl)
        } else {
            let rb = client_batches(&workload.right, cfg.batch_size, wr, cfg.horizon, &mut owner_seqs)?;
            (rb, wl + wr)
        };
        Ok(Self {
            cfg: cfg.clone(),
            trial: 0,
            tcfg,
            flush: cfg.flush_config(),
            shrinker,
            transformer: Transformer::new(tcfg)?,
            state: ProtocolState::new(width, randomness)?,
            left_batches,
            right_batches,
            truth: workload.true_counts(cfg),
            next_t: 0,
            syncs: Vec::new(),
            flushes: Vec::new(),
            deferred_after_sync: Vec::new(),
            produced: Vec::new(),
            transform_cost: 0,
            shrink_cost: 0,
            volume: 0,
            volume_seen: 0,
            metrics: Vec::new(),
        })
    }

    pub fn with_trial(mut self, trial: u64) -> Self {
        self.trial = trial;
        self
    }

    pub fn state(&self) -> &ProtocolState<R> {
        &self.state
    }

    pub fn transformer(&self) -> &Transformer {
        &self.transformer
    }

    pub fn syncs(&self) -> &[SyncOutcome] {
        &self.syncs
    }

    pub fn flushes(&self) -> &[FlushReport] {
        &self.flushes
    }

    /// Real rows produced by the transform at each completed step.
    pub fn produced(&self) -> &[u64] {
        &self.produced
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn is_done(&self) -> bool {
        self.next_t > self.cfg.horizon
    }

    fn produced_total(&self) -> u64 {
        self.produced.iter().sum()
    }

    /// Real rows produced but neither in the view nor recycled.
    fn deferred(&self) -> u64 {
        self.produced_total() - self.state.view.real_count() as u64 - self.state.recycled_real
    }

    /// Moves the whole cache to the view in one batch.
    fn sync_all(&mut self, t: u64) -> Result<(), RunError> {
        let n = self.state.cache.len();
        let fetched = cache_read(&mut self.state.cache, n, &mut self.state.seqs, t);
        let real = fetched.iter().filter(|r| r.is_view).count();
        self.state.view.append(t, fetched);
        let count = self.state.counter_value();
        let shares = self.state.reshare_counter(0)?;
        self.state
            .transcript
            .record_both(t, EventKind::SyncBatch, n as u64, Some(shares));
        self.shrink_cost += n as u64;
        self.syncs.push(SyncOutcome {
            t,
            count,
            noisy: n as f64,
            size: n,
            real_fetched: real,
            comparisons: 0,
        });
        Ok(())
    }

    fn record_sync(&mut self, out: Option<SyncOutcome>) {
        if let Some(o) = out {
            self.shrink_cost += o.comparisons + o.size as u64;
            self.syncs.push(o);
            self.deferred_after_sync.push(self.deferred());
        }
    }

    /// Runs step `next_t`; returns it, or `None` past the horizon.
    pub fn step(&mut self) -> Result<Option<u64>, RunError> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.next_t;
        let left = std::mem::take(&mut self.left_batches[t as usize]);
        let right = self
            .right_batches
            .get_mut(t as usize)
            .map(std::mem::take)
            .unwrap_or_default();
        if let Shrinker::Nm = self.shrinker {
            for size in [left.len(), right.len()].into_iter().filter(|s| *s > 0) {
                self.state
                    .transcript
                    .record_both(t, EventKind::OwnerUpload, size as u64, None);
            }
            self.produced.push(0);
        } else {
            let report = self
                .transformer
                .transform_step(t, OwnerBatches { left, right }, &mut self.state)?;
            self.transform_cost += report.comparisons + report.padded as u64;
            self.produced.push(report.real);
        }

        let mut shrinker = std::mem::replace(&mut self.shrinker, Shrinker::Nm);
        let shrunk = self.shrink(t, &mut shrinker);
        self.shrinker = shrinker;
        shrunk?;

        if t > 0 && t % self.cfg.query_interval == 0 {
            self.record_metrics(t);
        }
        self.next_t += 1;
        Ok(Some(t))
    }

    fn shrink(&mut self, t: u64, shrinker: &mut Shrinker) -> Result<(), RunError> {
        match shrinker {
            Shrinker::Timer(tc) if t > 0 => {
                let out = sdp_timer_step(t, tc, &mut self.state)?;
                self.record_sync(out);
                self.run_flush(t)?;
            }
            Shrinker::Ant(ac, ant) => match ant {
                None => *ant = Some(sdp_ant_init(ac, &mut self.state)?),
                Some(a) => {
                    let out = sdp_ant_step(t, ac, a, &mut self.state)?;
                    self.record_sync(out);
                    self.run_flush(t)?;
                }
            },
            Shrinker::Ep => self.sync_all(t)?,
            Shrinker::Otm if t == 0 => self.sync_all(t)?,
            Shrinker::Otm => {
                // never synchronized again; the servers may drop it
                let n = self.state.cache.len();
                cache_read(&mut self.state.cache, n, &mut self.state.seqs, t);
            }
            _ => {}
        }
        Ok(())
    }

    fn run_flush(&mut self, t: u64) -> Result<(), RunError> {
        if let Some(f) = flush_step(t, &self.flush, &mut self.state)? {
            self.shrink_cost += f.comparisons + f.size as u64;
            self.flushes.push(f);
        }
        Ok(())
    }

    fn record_metrics(&mut self, t: u64) {
        for e in &self.state.transcript.events()[self.volume_seen..] {
            self.volume += e.size;
        }
        self.volume_seen = self.state.transcript.len();
        let truth = self.truth[t as usize];
        let view_total = self.state.view.len() as u64;
        let view_real = self.state.view.real_count() as u64;
        let deferred = self.deferred();
        let (answer, query_cost) = match self.shrinker {
            Shrinker::Nm => {
                let streams = if self.cfg.operator == Operator::Filter { 1 } else { 2 };
                let n = (t as usize + 1) * self.cfg.batch_size * streams;
                (truth, network_size(n) + n as u64)
            }
            _ if self.cfg.scan_cache => (
                view_real + deferred,
                view_total + self.state.cache.len() as u64,
            ),
            _ => (view_real, view_total),
        };
        let l1 = truth.abs_diff(answer) as f64;
        self.metrics.push(MetricsRecord {
            trial: self.trial,
            time: t,
            true_count: truth,
            answer,
            l1_error: l1,
            relative_error: l1 / truth.max(1) as f64,
            view_rows_total: view_total,
            view_rows_real: view_real,
            deferred_real: deferred,
            discarded_by_truncation: truth.saturating_sub(self.produced_total()),
            recycled_real: self.state.recycled_real,
            transform_cost: self.transform_cost,
            shrink_cost: self.shrink_cost,
            query_cost,
            cost_proxy: self.transform_cost + self.shrink_cost + query_cost,
            transcript_events: self.volume_seen as u64,
            transcript_volume: self.volume,
        });
        self.transform_cost = 0;
        self.shrink_cost = 0;
    }

    pub fn run_to_end(&mut self) -> Result<(), RunError> {
        while self.step()?.is_some() {}
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            trial: self.trial,
            config: self.cfg,
            transform: self.tcfg,
            metrics: self.metrics,
            transcript: self.state.transcript,
            syncs: self.syncs,
            flushes: self.flushes,
            deferred_after_sync: self.deferred_after_sync,
            produced: self.produced,
            true_counts: self.truth,
            view_rows: self.state.view.rows().to_vec(),
        }
    }
}

/// Real synchronized rows satisfying `pred`.
pub fn query_count(rows: &[SecureTuple], pred: impl Fn(&SecureTuple) -> bool) -> u64 {
    rows.iter().filter(|r| r.is_view && pred(r)).count() as u64
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trial: u64,
    pub config: ExperimentConfig,
    pub transform: TransformConfig,
    pub metrics: Vec<MetricsRecord>,
    pub transcript: Transcript,
    pub syncs: Vec<SyncOutcome>,
    pub flushes: Vec<FlushReport>,
    /// Deferred real rows right after each DP sync.
    pub deferred_after_sync: Vec<u64>,
    /// Real rows produced at each step.
    pub produced: Vec<u64>,
    pub true_counts: Vec<u64>,
    pub view_rows: Vec<SecureTuple>,
}

impl RunOutput {
    /// Per-step produced counts as a stream, the input the DP mechanisms see.
    pub fn produced_stream(&self) -> LogicalStream {
        LogicalStream::from_counts(&self.produced)
    }

    /// Sync sizes the public parameters and DP releases allow.
    pub fn expected_sync_sizes(&self) -> BTreeMap<u64, u64> {
        let cfg = &self.config;
        match cfg.protocol {
            Protocol::DpTimer | Protocol::DpAnt => self
                .syncs
                .iter()
                .map(|s| (s.t, clamp_size(s.noisy) as u64))
                .collect(),
            Protocol::Ep => (0..=cfg.horizon)
                .map(|t| (t, self.transform.padded_output_size(t) as u64))
                .collect(),
            Protocol::Otm => BTreeMap::from([(0, self.transform.padded_output_size(0) as u64)]),
            Protocol::Nm => BTreeMap::new(),
        }
    }
}

pub fn audit_run(run: &RunOutput) -> AuditReport {
    let syncs = run.expected_sync_sizes();
    let tcfg = run.transform;
    let size = move |t: u64| tcfg.padded_output_size(t) as u64;
    transcript_audit(
        &run.transcript,
        &AuditSpec {
            owner_batch: run.config.batch_size as u64,
            transform_size: &size,
            flush_size: run.config.flush_size as u64,
            sync_sizes: &syncs,
        },
    )
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::seeded(cfg)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}

/// Runs `trials` independent trials with seeds `seed, seed + 1, ...`, in
/// parallel, returned in trial order.
pub fn run_trials(cfg: &ExperimentConfig, trials: u64) -> Result<Vec<RunOutput>, RunError> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            let mut sim = Simulation::seeded(&c)?.with_trial(i);
            sim.run_to_end()?;
            Ok(sim.finish())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(protocol: Protocol) -> ExperimentConfig {
        ExperimentConfig {
            protocol,
            horizon: 60,
            interval: 5,
            flush_interval: 30,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn accounting_identity() {
        for p in [Protocol::DpTimer, Protocol::DpAnt, Protocol::Ep, Protocol::Otm] {
            let run = run_experiment(&small(p)).unwrap();
            for m in &run.metrics {
                let produced: u64 = run.produced[..=m.time as usize].iter().sum();
                assert_eq!(m.view_rows_real + m.deferred_real + m.recycled_real, produced, "{p}");
                assert_eq!(m.l1_error, m.true_count.abs_diff(m.answer) as f64);
            }
        }
    }

    #[test]
    fn view_answer_matches_query_count() {
        let run = run_experiment(&small(Protocol::DpTimer)).unwrap();
        let last = run.metrics.last().unwrap();
        assert_eq!(query_count(&run.view_rows, |_| true), last.answer);
        assert_eq!(query_count(&[], |_| true), 0);
    }

    #[test]
    fn ep_has_no_deferred_data() {
        let run = run_experiment(&small(Protocol::Ep)).unwrap();
        assert!(run.metrics.iter().all(|m| m.deferred_real == 0));
        assert!(audit_run(&run).passed());
    }

    #[test]
    fn nm_is_exact() {
        let run = run_experiment(&small(Protocol::Nm)).unwrap();
        assert!(run.metrics.iter().all(|m| m.l1_error == 0.0));
        assert!(audit_run(&run).passed());
    }

    #[test]
    fn dp_runs_pass_audit() {
        for p in [Protocol::DpTimer, Protocol::DpAnt] {
            let run = run_experiment(&small(p)).unwrap();
            assert!(!run.syncs.is_empty());
            assert!(audit_run(&run).passed(), "{}", audit_run(&run));
        }
    }

    #[test]
    fn trials_are_ordered_and_seeded() {
        let runs = run_trials(&small(Protocol::DpTimer), 3).unwrap();
        assert_eq!(runs.iter().map(|r| r.trial).collect::<Vec<_>>(), vec![0, 1, 2]);
        let again = run_experiment(&ExperimentConfig { seed: 5, ..small(Protocol::DpTimer) }).unwrap();
        assert_eq!(again.metrics.iter().map(|m| m.answer).collect::<Vec<_>>(),
                   runs[1].metrics.iter().map(|m| m.answer).collect::<Vec<_>>());
    }
}
