//! Turning owner uploads into padded, truncated view entries.
//!
//! Every operator produces an output whose length depends only on input sizes
//! and the truncation bound. Each real input record has a per-invocation cap
//! of `min(omega, remaining budget)` rows; joins beyond a cap become dummies.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leakage::transcript::EventKind;
use crate::obliv::{cache_append, network_size, network_sort, SecureTuple, SeqAllocator};
use crate::servers::ServerRandomness;
use crate::sharing::SharingError;
use crate::state::ProtocolState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("truncation bound omega must be at least 1")]
    ZeroOmega,
    #[error("truncation bound omega={omega} exceeds lifetime budget b={b}")]
    OmegaAboveBudget { omega: u32, b: u32 },
    #[error("owner batch has {got} tuples, expected {expected}")]
    BatchSize { got: usize, expected: usize },
    #[error("join window {window} does not fit the retention window of {retention} invocations")]
    JoinWindow { window: u64, retention: u64 },
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChargePolicy {
    /// Each invocation a record takes part in costs `min(omega, remaining)`.
    #[default]
    PerInvocationOmega,
    /// Each produced join costs one unit per participating record.
    PerOutputRow,
}

impl FromStr for ChargePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "perinvocationomega" | "per_invocation_omega" | "per-invocation" => {
                Ok(Self::PerInvocationOmega)
            }
            "peroutputrow" | "per_output_row" | "per-output-row" => Ok(Self::PerOutputRow),
            _ => Err(format!("unknown charge policy `{s}`")),
        }
    }
}

impl fmt::Display for ChargePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerInvocationOmega => "per_invocation_omega",
            Self::PerOutputRow => "per_output_row",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationConfig {
    omega: u32,
    b: u32,
    charge_policy: ChargePolicy,
}

impl TruncationConfig {
    pub fn new(omega: u32, b: u32, charge_policy: ChargePolicy) -> Result<Self, TransformError> {
        if omega == 0 {
            return Err(TransformError::ZeroOmega);
        }
        if omega > b {
            return Err(TransformError::OmegaAboveBudget { omega, b });
        }
        Ok(Self {
            omega,
            b,
            charge_policy,
        })
    }

    pub fn omega(&self) -> u32 {
        self.omega
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn charge_policy(&self) -> ChargePolicy {
        self.charge_policy
    }

    /// Invocations an upload stays available to joins: `ceil(b / omega)`.
    pub fn retention_window(&self) -> u64 {
        self.b.div_ceil(self.omega) as u64
    }

    pub fn cap(&self, remaining: u32) -> u32 {
        self.omega.min(remaining)
    }
}

/// Remaining lifetime budget per owner record.
#[derive(Debug, Clone, Default)]
pub struct BudgetLedger {
    initial: u32,
    remaining: HashMap<u64, u32>,
}

impl BudgetLedger {
    pub fn new(b: u32) -> Self {
        Self {
            initial: b,
            remaining: HashMap::new(),
        }
    }

    pub fn register(&mut self, id: u64) {
        self.remaining.entry(id).or_insert(self.initial);
    }

    /// Unknown records have no budget.
    pub fn remaining(&self, id: u64) -> u32 {
        self.remaining.get(&id).copied().unwrap_or(0)
    }

    pub fn is_retired(&self, id: u64) -> bool {
        self.remaining(id) == 0
    }

    /// Panics on underflow: charging more than remains is a contract violation.
    pub fn charge(&mut self, id: u64, amount: u32) {
        let left = self
            .remaining
            .get_mut(&id)
            .unwrap_or_else(|| panic!("charge for unregistered record {id}"));
        assert!(*left >= amount, "budget underflow for record {id}: {left} < {amount}");
        *left -= amount;
    }

    pub fn len(&self) -> usize {
        self.remaining.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining.is_empty()
    }
}

/// Padded operator output plus the joins each record took part in.
#[derive(Debug, Clone, Default)]
pub struct OperatorOutput {
    pub rows: Vec<SecureTuple>,
    pub comparisons: u64,
    pub usage: HashMap<u64, u32>,
}

impl OperatorOutput {
    pub fn real_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_view).count()
    }
}

fn record_id(t: &SecureTuple) -> Option<u64> {
    if t.is_view {
        t.sources.first().copied()
    } else {
        None
    }
}

fn caps_for<'a>(
    inputs: impl Iterator<Item = &'a SecureTuple>,
    cfg: &TruncationConfig,
    ledger: &BudgetLedger,
) -> HashMap<u64, u32> {
    inputs
        .filter_map(record_id)
        .map(|id| (id, cfg.cap(ledger.remaining(id))))
        .collect()
}

fn join_row(l: &SecureTuple, r: &SecureTuple, seq: u64, t: u64) -> SecureTuple {
    let mut attrs = l.attrs.clone();
    attrs.extend_from_slice(&r.attrs);
    SecureTuple::real(l.key, attrs, seq, t, vec![l.sources[0], r.sources[0]])
}

/// Marks rows satisfying `predicate` as view entries; the output has one row
/// per input row.
pub fn trans_truncate_filter(
    batch: &[SecureTuple],
    predicate: impl Fn(&SecureTuple) -> bool,
    seqs: &mut SeqAllocator,
    t: u64,
) -> Vec<SecureTuple> {
    batch
        .iter()
        .map(|row| {
            let keep = row.is_view && predicate(row);
            SecureTuple {
                key: row.key,
                attrs: row.attrs.clone(),
                is_view: keep,
                seq: seqs.next_seq(),
                timestamp: t,
                sources: if keep { row.sources.clone() } else { Vec::new() },
            }
        })
        .collect()
}

/// Truncated sort-merge join.
///
/// The union of both inputs is sorted obliviously by `(key, table, position)`
/// with `t1` rows ahead of `t2` rows on equal keys. Scanning a `t2` row joins it
/// greedily with the preceding same-key `t1` rows that still have capacity.
/// Every scanned row emits exactly `omega` slots.
pub fn trans_truncate_smj(
    t1: &[SecureTuple],
    t2: &[SecureTuple],
    cfg: &TruncationConfig,
    ledger: &BudgetLedger,
    joinable: impl Fn(&SecureTuple, &SecureTuple) -> bool,
    seqs: &mut SeqAllocator,
    t: u64,
) -> OperatorOutput {
    let omega = cfg.omega() as usize;
    let width = t1.first().map_or(0, |r| r.attrs.len()) + t2.first().map_or(0, |r| r.attrs.len());
    let mut caps = caps_for(t1.iter().chain(t2), cfg, ledger);
    let mut usage: HashMap<u64, u32> = HashMap::new();

    let mut merged: Vec<(u8, u32, &SecureTuple)> = t1
        .iter()
        .enumerate()
        .map(|(i, r)| (0u8, i as u32, r))
        .chain(t2.iter().enumerate().map(|(i, r)| (1u8, i as u32, r)))
        .collect();
    let comparisons = network_sort(&mut merged, |(side, pos, r)| {
        ((r.key as u128) << 33) | ((*side as u128) << 32) | *pos as u128
    });

    let mut rows = Vec::with_capacity(merged.len() * omega);
    let mut group_key = None;
    let mut group: Vec<&SecureTuple> = Vec::new();
    for (side, _, row) in merged {
        if group_key != Some(row.key) {
            group_key = Some(row.key);
            group.clear();
        }
        let mut emitted = 0;
        if side == 0 {
            group.push(row);
        } else if let Some(rid) = record_id(row) {
            for l in &group {
                if emitted == omega || caps[&rid] == 0 {
                    break;
                }
                let Some(lid) = record_id(l) else { continue };
                if caps[&lid] == 0 || !joinable(l, row) {
                    continue;
                }
                *caps.get_mut(&lid).unwrap() -= 1;
                *caps.get_mut(&rid).unwrap() -= 1;
                *usage.entry(lid).or_default() += 1;
                *usage.entry(rid).or_default() += 1;
                rows.push(join_row(l, row, seqs.next_seq(), t));
                emitted += 1;
            }
        }
        rows.extend((emitted..omega).map(|_| SecureTuple::dummy(width, seqs.next_seq(), t)));
    }
    OperatorOutput {
        rows,
        comparisons,
        usage,
    }
}

/// Truncated nested-loop join.
///
/// For each outer row the inner scan emits a real join when keys match and
/// both rows still have capacity, consuming one unit from each; the
/// intermediate of `|inner|` slots is sorted real-first and cut to `omega`.
pub fn trans_truncate_nlj(
    outer: &[SecureTuple],
    inner: &[SecureTuple],
    cfg: &TruncationConfig,
    ledger: &BudgetLedger,
    joinable: impl Fn(&SecureTuple, &SecureTuple) -> bool,
    seqs: &mut SeqAllocator,
    t: u64,
) -> OperatorOutput {
    let omega = cfg.omega() as usize;
    let width =
        outer.first().map_or(0, |r| r.attrs.len()) + inner.first().map_or(0, |r| r.attrs.len());
    let mut caps = caps_for(outer.iter().chain(inner), cfg, ledger);
    let mut usage: HashMap<u64, u32> = HashMap::new();
    let mut rows = Vec::with_capacity(outer.len() * omega);
    let mut comparisons = 0;

    for o in outer {
        let oid = record_id(o);
        let mut scratch: Vec<SecureTuple> = inner
            .iter()
            .map(|i| {
                let seq = seqs.next_seq();
                match (oid, record_id(i)) {
                    (Some(a), Some(b)) if caps[&a] > 0 && caps[&b] > 0 && joinable(o, i) => {
                        *caps.get_mut(&a).unwrap() -= 1;
                        *caps.get_mut(&b).unwrap() -= 1;
                        *usage.entry(a).or_default() += 1;
                        *usage.entry(b).or_default() += 1;
                        join_row(o, i, seq, t)
                    }
                    _ => SecureTuple::dummy(width, seq, t),
                }
            })
            .collect();
        comparisons += network_sort(&mut scratch, |r| ((!r.is_view as u128) << 64) | r.seq as u128);
        scratch.truncate(omega);
        while scratch.len() < omega {
            scratch.push(SecureTuple::dummy(width, seqs.next_seq(), t));
        }
        rows.extend(scratch);
    }
    OperatorOutput {
        rows,
        comparisons,
        usage,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Operator {
    Filter,
    #[default]
    Smj,
    Nlj,
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filter" => Ok(Self::Filter),
            "smj" | "sort_merge_join" => Ok(Self::Smj),
            "nlj" | "nested_loop_join" => Ok(Self::Nlj),
            _ => Err(format!("unknown operator `{s}`")),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Filter => "filter",
            Self::Smj => "smj",
            Self::Nlj => "nlj",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConfig {
    pub operator: Operator,
    pub truncation: TruncationConfig,
    /// Joins require `0 <= t_right - t_left <= join_window`.
    pub join_window: u64,
    /// Filter keeps rows whose first attribute is below this bound.
    pub filter_bound: u32,
    /// Owner batch size per step.
    pub batch_size: usize,
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), TransformError> {
        let retention = self.truncation.retention_window();
        if self.operator != Operator::Filter && self.join_window >= retention {
            return Err(TransformError::JoinWindow {
                window: self.join_window,
                retention,
            });
        }
        Ok(())
    }

    /// Length of the padded output at invocation `t`; a function of public
    /// parameters only.
    pub fn padded_output_size(&self, t: u64) -> usize {
        let omega = self.truncation.omega() as usize;
        let retained = (t + 1).min(self.truncation.retention_window()) as usize * self.batch_size;
        match self.operator {
            Operator::Filter => self.batch_size,
            Operator::Smj => omega * 2 * retained,
            Operator::Nlj => omega * retained,
        }
    }

    /// Comparator count of the operator at invocation `t`.
    pub fn operator_comparisons(&self, t: u64) -> u64 {
        let retained = (t + 1).min(self.truncation.retention_window()) as usize * self.batch_size;
        match self.operator {
            Operator::Filter => 0,
            Operator::Smj => network_size(2 * retained),
            Operator::Nlj => retained as u64 * network_size(retained),
        }
    }
}

/// Fixed-size uploads of one step. `right` is empty for the filter.
#[derive(Debug, Clone, Default)]
pub struct OwnerBatches {
    pub left: Vec<SecureTuple>,
    pub right: Vec<SecureTuple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformReport {
    pub real: u64,
    pub padded: usize,
    pub comparisons: u64,
}

/// Runs the configured operator each step and keeps the retained uploads and
/// the budget ledger.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: TransformConfig,
    ledger: BudgetLedger,
    left: VecDeque<Vec<SecureTuple>>,
    right: VecDeque<Vec<SecureTuple>>,
    produced_real: u64,
}

impl Transformer {
    pub fn new(cfg: TransformConfig) -> Result<Self, TransformError> {
        cfg.validate()?;
        Ok(Self {
            ledger: BudgetLedger::new(cfg.truncation.b()),
            cfg,
            left: VecDeque::new(),
            right: VecDeque::new(),
            produced_real: 0,
        })
    }

    pub fn config(&self) -> &TransformConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    /// Real rows produced over the whole run.
    pub fn produced_real(&self) -> u64 {
        self.produced_real
    }

    fn check_batch(&self, batch: &[SecureTuple]) -> Result<(), TransformError> {
        if batch.len() != self.cfg.batch_size {
            return Err(TransformError::BatchSize {
                got: batch.len(),
                expected: self.cfg.batch_size,
            });
        }
        Ok(())
    }

    /// Produces the padded delta for step `t`, without touching shared state.
    pub fn produce(
        &mut self,
        t: u64,
        batches: OwnerBatches,
        seqs: &mut SeqAllocator,
    ) -> Result<OperatorOutput, TransformError> {
        self.check_batch(&batches.left)?;
        if self.cfg.operator != Operator::Filter {
            self.check_batch(&batches.right)?;
        }
        for id in batches.left.iter().chain(&batches.right).filter_map(record_id) {
            self.ledger.register(id);
        }
        let cfg = self.cfg;
        let trunc = cfg.truncation;
        let out = match cfg.operator {
            Operator::Filter => {
                let bound = cfg.filter_bound;
                let rows = trans_truncate_filter(
                    &batches.left,
                    |r| r.attrs.first().is_some_and(|a| *a < bound),
                    seqs,
                    t,
                );
                let usage = rows
                    .iter()
                    .filter_map(record_id)
                    .map(|id| (id, 1))
                    .collect();
                OperatorOutput {
                    rows,
                    comparisons: 0,
                    usage,
                }
            }
            Operator::Smj | Operator::Nlj => {
                let window = trunc.retention_window() as usize;
                self.left.push_back(batches.left);
                self.right.push_back(batches.right);
                while self.left.len() > window {
                    self.left.pop_front();
                    self.right.pop_front();
                }
                let t1: Vec<SecureTuple> = self.left.iter().flatten().cloned().collect();
                let t2: Vec<SecureTuple> = self.right.iter().flatten().cloned().collect();
                let jw = cfg.join_window;
                let joinable = |l: &SecureTuple, r: &SecureTuple| {
                    l.key == r.key
                        && (l.timestamp == t || r.timestamp == t)
                        && r.timestamp >= l.timestamp
                        && r.timestamp - l.timestamp <= jw
                };
                if cfg.operator == Operator::Smj {
                    trans_truncate_smj(&t1, &t2, &trunc, &self.ledger, joinable, seqs, t)
                } else {
                    trans_truncate_nlj(&t1, &t2, &trunc, &self.ledger, joinable, seqs, t)
                }
            }
        };
        self.charge(t, &out);
        self.produced_real += out.real_count() as u64;
        Ok(out)
    }

    fn charge(&mut self, t: u64, out: &OperatorOutput) {
        let trunc = self.cfg.truncation;
        match trunc.charge_policy() {
            ChargePolicy::PerOutputRow => {
                for (id, used) in &out.usage {
                    self.ledger.charge(*id, *used);
                }
            }
            ChargePolicy::PerInvocationOmega => {
                let participants: Vec<u64> = match self.cfg.operator {
                    Operator::Filter => out.usage.keys().copied().collect(),
                    _ => self
                        .left
                        .iter()
                        .chain(&self.right)
                        .flatten()
                        .filter_map(record_id)
                        .collect(),
                };
                for id in participants {
                    let amount = trunc.cap(self.ledger.remaining(id));
                    self.ledger.charge(id, amount);
                }
            }
        }
        debug_assert!(out.rows.iter().all(|r| r.timestamp == t));
    }

    /// One step: produce the delta, fold its real count into the shared
    /// counter under fresh shares, append it to the cache and log what the
    /// servers observe.
    pub fn transform_step<R: ServerRandomness>(
        &mut self,
        t: u64,
        batches: OwnerBatches,
        state: &mut ProtocolState<R>,
    ) -> Result<TransformReport, TransformError> {
        let uploads = [batches.left.len(), batches.right.len()];
        let out = self.produce(t, batches, &mut state.seqs)?;
        for size in uploads.into_iter().filter(|s| *s > 0) {
            state
                .transcript
                .record_both(t, EventKind::OwnerUpload, size as u64, None);
        }
        let real = out.real_count() as u64;
        let c = state.counter_value() as u64 + real;
        let c = u32::try_from(c).map_err(|_| SharingError::OutOfRange(c))?;
        let shares = state.reshare_counter(c)?;
        let padded = out.rows.len();
        cache_append(&mut state.cache, out.rows);
        state
            .transcript
            .record_both(t, EventKind::TransformOutput, padded as u64, Some(shares));
        Ok(TransformReport {
            real,
            padded,
            comparisons: out.comparisons,
        })
    }
}
