//! Per-query metrics and their JSON-lines encoding.

use serde::{Deserialize, Serialize};

/// One row per (trial, query time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub trial: u64,
    pub time: u64,
    pub true_count: u64,
    pub answer: u64,
    pub l1_error: f64,
    pub relative_error: f64,
    pub view_rows_total: u64,
    pub view_rows_real: u64,
    /// Real rows produced but still waiting in the cache.
    pub deferred_real: u64,
    /// True results the truncated operators never produced.
    pub discarded_by_truncation: u64,
    /// Real rows dropped by flushes so far.
    pub recycled_real: u64,
    /// Compare-exchanges plus rows written since the previous query.
    pub transform_cost: u64,
    pub shrink_cost: u64,
    pub query_cost: u64,
    /// `transform_cost + shrink_cost + query_cost`.
    pub cost_proxy: u64,
    /// Events and total size observed by both servers so far.
    pub transcript_events: u64,
    pub transcript_volume: u64,
}

pub fn to_json_lines(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_json_lines(text: &str) -> Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Averages over a set of records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub records: usize,
    pub mean_l1: f64,
    pub max_l1: f64,
    pub mean_relative: f64,
    pub mean_deferred: f64,
    pub mean_query_cost: f64,
    pub mean_cost: f64,
    pub final_view_rows: f64,
    pub final_dummy_rows: f64,
}

pub fn summarize(records: &[MetricsRecord]) -> Summary {
    if records.is_empty() {
        return Summary::default();
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    // last record of each trial
    let mut finals: std::collections::BTreeMap<u64, &MetricsRecord> = Default::default();
    for r in records {
        let e = finals.entry(r.trial).or_insert(r);
        if r.time >= e.time {
            *e = r;
        }
    }
    let k = finals.len() as f64;
    Summary {
        records: records.len(),
        mean_l1: mean(&|r| r.l1_error),
        max_l1: records.iter().map(|r| r.l1_error).fold(0.0, f64::max),
        mean_relative: mean(&|r| r.relative_error),
        mean_deferred: mean(&|r| r.deferred_real as f64),
        mean_query_cost: mean(&|r| r.query_cost as f64),
        mean_cost: mean(&|r| r.cost_proxy as f64),
        final_view_rows: finals.values().map(|r| r.view_rows_total as f64).sum::<f64>() / k,
        final_dummy_rows: finals
            .values()
            .map(|r| (r.view_rows_total - r.view_rows_real) as f64)
            .sum::<f64>()
            / k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: u64, time: u64, l1: f64) -> MetricsRecord {
        MetricsRecord {
            trial,
            time,
            true_count: 10,
            answer: 10 - l1 as u64,
            l1_error: l1,
            relative_error: l1 / 10.0,
            view_rows_total: time * 2,
            view_rows_real: time,
            deferred_real: 1,
            discarded_by_truncation: 0,
            recycled_real: 0,
            transform_cost: 5,
            shrink_cost: 6,
            query_cost: 7,
            cost_proxy: 18,
            transcript_events: 4,
            transcript_volume: 40,
        }
    }

    #[test]
    fn json_lines_round_trip() {
        let rs = vec![record(0, 1, 2.0), record(1, 3, 0.0)];
        let text = to_json_lines(&rs);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_json_lines(&text).unwrap(), rs);
        assert!(parse_json_lines("{").is_err());
    }

    #[test]
    fn summary_uses_last_record_per_trial() {
        let s = summarize(&[record(0, 1, 2.0), record(0, 4, 4.0), record(1, 2, 0.0)]);
        assert_eq!(s.records, 3);
        assert_eq!(s.mean_l1, 2.0);
        assert_eq!(s.max_l1, 4.0);
        assert_eq!(s.final_view_rows, 6.0);
        assert_eq!(s.final_dummy_rows, 3.0);
    }
}
