//! Stream ingestion, synthetic workloads and owner-side batching.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::config::Profile;
use crate::leakage::oracles::{LogicalRecord, LogicalStream};
use crate::obliv::{SecureTuple, SeqAllocator};
use crate::transform::Operator;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("step {t}: {arrivals} arrivals exceed the owner batch size {capacity}")]
    CapacityExceeded { t: u64, arrivals: usize, capacity: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(line: u64, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses `t,key,attr...` CSV text. Records are stable-sorted by `t`; the
/// horizon is the largest `t` seen.
pub fn parse_stream(text: &str) -> Result<LogicalStream, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "t" || &header[1] != "key" {
        return Err(parse_err(1, "header must start with `t,key`"));
    }
    let mut rows: Vec<(u64, LogicalRecord)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(i as u64 + 2, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        let field = |j: usize| -> Result<u64, DataError> {
            rec[j]
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("field `{}` is not a non-negative integer", &rec[j])))
        };
        let t = field(0)?;
        let key = u32::try_from(field(1)?).map_err(|_| parse_err(line, "key exceeds 32 bits"))?;
        let attrs = (2..rec.len())
            .map(|j| field(j).and_then(|v| u32::try_from(v).map_err(|_| parse_err(line, "attribute exceeds 32 bits"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((t, LogicalRecord { id: i as u64, key, attrs }));
    }
    rows.sort_by_key(|(t, _)| *t);
    let mut stream = LogicalStream::new(rows.last().map_or(0, |(t, _)| *t));
    for (t, r) in rows {
        stream.push(t, r);
    }
    Ok(stream)
}

pub fn load_stream(path: &Path) -> Result<LogicalStream, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_stream(&text)
}

/// Pads one step's arrivals to exactly `capacity` tuples.
pub fn client_batch(
    arrivals: &[&LogicalRecord],
    capacity: usize,
    width: usize,
    t: u64,
    seqs: &mut SeqAllocator,
) -> Result<Vec<SecureTuple>, DataError> {
    if arrivals.len() > capacity {
        return Err(DataError::CapacityExceeded {
            t,
            arrivals: arrivals.len(),
            capacity,
        });
    }
    let mut batch = Vec::with_capacity(capacity);
    for r in arrivals {
        let seq = seqs.next_seq();
        let mut attrs = r.attrs.clone();
        attrs.resize(width, 0);
        batch.push(SecureTuple::real(r.key, attrs, seq, t, vec![seq]));
    }
    while batch.len() < capacity {
        batch.push(SecureTuple::dummy(width, seqs.next_seq(), t));
    }
    Ok(batch)
}

/// Attribute count of the widest record.
pub fn stream_width(stream: &LogicalStream) -> usize {
    stream.records().map(|(_, r)| r.attrs.len()).max().unwrap_or(0)
}

/// Padded owner batches for steps `0..=horizon`. Owners of different streams
/// share `seqs` so record ids stay unique.
pub fn client_batches(
    stream: &LogicalStream,
    capacity: usize,
    width: usize,
    horizon: u64,
    seqs: &mut SeqAllocator,
) -> Result<Vec<Vec<SecureTuple>>, DataError> {
    let steps = stream.by_step();
    (0..=horizon)
        .map(|t| {
            let arrivals = steps.get(t as usize).map_or(&[][..], |v| &v[..]);
            client_batch(arrivals, capacity, width, t, seqs)
        })
        .collect()
}

/// Parameters of the synthetic join workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub batch_size: usize,
    pub multiplicity: u32,
    pub max_gap: u64,
}

const GROUP_SLOTS: usize = 6;

/// Paired join streams built from match groups: one left record and
/// `multiplicity` right records sharing a fresh key, each right record
/// arriving `0..=max_gap` steps after the left one. Group counts per step are
/// binomial with mean `rate / multiplicity`, so expected matches per step
/// follow the profile. Right records that would overflow a step's batch move
/// to the next step inside the gap window or are dropped. Arrivals start at
/// step 1.
pub fn synth_stream(
    profile: Profile,
    seed: u64,
    horizon: u64,
    params: &SynthParams,
) -> (LogicalStream, LogicalStream) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5EED_DA7A_0000_0001);
    let slots = GROUP_SLOTS.min(params.batch_size);
    let m = params.multiplicity.max(1) as f64;
    let p = (profile.match_rate() / (slots as f64 * m)).min(1.0);
    let mut left = LogicalStream::new(horizon);
    let mut right = LogicalStream::new(horizon);
    let mut right_load: HashMap<u64, usize> = HashMap::new();
    let mut key = 0u32;
    let mut right_id = 0u64;
    for t in 1..=horizon {
        let groups = (0..slots).filter(|_| rng.random_bool(p)).count();
        for _ in 0..groups {
            key += 1;
            left.push(
                t,
                LogicalRecord {
                    id: key as u64,
                    key,
                    attrs: vec![rng.random_range(0..100)],
                },
            );
            for _ in 0..params.multiplicity {
                let gap = rng.random_range(0..=params.max_gap);
                let attr = rng.random_range(0..100);
                let mut at = t + gap;
                while at <= horizon && at <= t + params.max_gap {
                    let load = right_load.entry(at).or_default();
                    if *load < params.batch_size {
                        *load += 1;
                        right.push(
                            at,
                            LogicalRecord {
                                id: right_id,
                                key,
                                attrs: vec![attr],
                            },
                        );
                        right_id += 1;
                        break;
                    }
                    at += 1;
                }
            }
        }
    }
    (left, right)
}

/// Left records passing the filter `attrs[0] < bound`.
pub fn filtered_stream(left: &LogicalStream, bound: u32) -> LogicalStream {
    let mut out = LogicalStream::new(left.horizon());
    for (t, r) in left.records() {
        if r.attrs.first().is_some_and(|a| *a < bound) {
            out.push(t, r.clone());
        }
    }
    out
}

/// Exact answer of the registered count query for every step `0..=horizon`,
/// computed on the plaintext streams without truncation.
pub fn true_counts(
    left: &LogicalStream,
    right: &LogicalStream,
    operator: Operator,
    join_window: u64,
    filter_bound: u32,
    horizon: u64,
) -> Vec<u64> {
    let mut per_step = vec![0u64; horizon as usize + 1];
    match operator {
        Operator::Filter => {
            for (t, _) in filtered_stream(left, filter_bound).records() {
                if t <= horizon {
                    per_step[t as usize] += 1;
                }
            }
        }
        Operator::Smj | Operator::Nlj => {
            let mut by_key: HashMap<u32, Vec<u64>> = HashMap::new();
            for (t, l) in left.records() {
                by_key.entry(l.key).or_default().push(t);
            }
            for (tr, r) in right.records() {
                if tr > horizon {
                    continue;
                }
                let n = by_key.get(&r.key).map_or(0, |ts| {
                    ts.iter()
                        .filter(|tl| **tl <= tr && tr - **tl <= join_window)
                        .count()
                });
                per_step[tr as usize] += n as u64;
            }
        }
    }
    let mut acc = 0;
    for c in per_step.iter_mut() {
        acc += *c;
        *c = acc;
    }
    per_step
}

/// The count at step `t`; see [`true_counts`].
pub fn true_count(
    left: &LogicalStream,
    right: &LogicalStream,
    operator: Operator,
    join_window: u64,
    filter_bound: u32,
    t: u64,
) -> u64 {
    true_counts(left, right, operator, join_window, filter_bound, t)[t as usize]
}
