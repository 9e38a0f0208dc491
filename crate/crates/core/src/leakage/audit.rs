//! Checks that every size a server observed is either fixed by public
//! parameters or equal to an allowed DP release.

use std::collections::BTreeMap;
use std::fmt;

use super::transcript::{EventKind, Transcript, TranscriptEvent};

/// Sizes the audit accepts.
pub struct AuditSpec<'a> {
    pub owner_batch: u64,
    /// Padded transform output size at step `t`.
    pub transform_size: &'a dyn Fn(u64) -> u64,
    pub flush_size: u64,
    /// Allowed sync sizes by time: released DP values after clamping, or
    /// config-determined sizes for non-private baselines.
    pub sync_sizes: &'a BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub event: Option<TranscriptEvent>,
    pub expected: Option<u64>,
    pub reason: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.event {
            Some(e) => write!(
                f,
                "violation t={} server={} kind={:?} size={} expected={} reason={}",
                e.time,
                e.server,
                e.kind,
                e.size,
                self.expected.map_or("none".to_string(), |x| x.to_string()),
                self.reason
            ),
            None => write!(
                f,
                "violation expected={} reason={}",
                self.expected.map_or("none".to_string(), |x| x.to_string()),
                self.reason
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return writeln!(f, "audit passed: {} events", self.checked);
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn transcript_audit(transcript: &Transcript, spec: &AuditSpec<'_>) -> AuditReport {
    let mut report = AuditReport::default();
    let mut seen_syncs: BTreeMap<u64, u8> = BTreeMap::new();
    for e in transcript.events() {
        report.checked += 1;
        let (expected, reason) = match e.kind {
            EventKind::OwnerUpload => (Some(spec.owner_batch), "owner batch size differs from public batch size"),
            EventKind::TransformOutput => (Some((spec.transform_size)(e.time)), "transform output not padded to public size"),
            EventKind::FlushBatch => (Some(spec.flush_size), "flush size differs from public flush size"),
            EventKind::ThresholdCheck | EventKind::ShareReceived => (Some(0), "marker event carries a size"),
            EventKind::SyncBatch => {
                *seen_syncs.entry(e.time).or_default() |= 1 << e.server;
                (spec.sync_sizes.get(&e.time).copied(), "sync size does not match an allowed release")
            }
        };
        if expected != Some(e.size) {
            report.violations.push(Violation {
                event: Some(*e),
                expected,
                reason,
            });
        }
    }
    for (t, size) in spec.sync_sizes {
        if seen_syncs.get(t) != Some(&0b11) {
            report.violations.push(Violation {
                event: None,
                expected: Some(*size),
                reason: "release without a matching sync at both servers",
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::SharePair;

    fn spec_with<'a>(syncs: &'a BTreeMap<u64, u64>, ts: &'a dyn Fn(u64) -> u64) -> AuditSpec<'a> {
        AuditSpec {
            owner_batch: 4,
            transform_size: ts,
            flush_size: 3,
            sync_sizes: syncs,
        }
    }

    #[test]
    fn clean_transcript_passes() {
        let mut tr = Transcript::new();
        tr.record_both(0, EventKind::OwnerUpload, 4, None);
        tr.record_both(0, EventKind::TransformOutput, 8, Some(SharePair::default()));
        tr.record_both(1, EventKind::SyncBatch, 5, None);
        tr.record_both(2, EventKind::FlushBatch, 3, None);
        let syncs = BTreeMap::from([(1, 5)]);
        let ts = |_t: u64| 8;
        let report = transcript_audit(&tr, &spec_with(&syncs, &ts));
        assert!(report.passed(), "{report}");
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn leaked_size_is_reported() {
        let mut tr = Transcript::new();
        tr.record_both(1, EventKind::SyncBatch, 7, None);
        let syncs = BTreeMap::from([(1, 5)]);
        let ts = |_t: u64| 8;
        let report = transcript_audit(&tr, &spec_with(&syncs, &ts));
        assert_eq!(report.violations.len(), 2);
        let line = report.to_string();
        assert!(line.contains("t=1 server=0 kind=SyncBatch size=7 expected=5"), "{line}");
    }

    #[test]
    fn missing_and_unexpected_syncs() {
        let mut tr = Transcript::new();
        tr.record_both(2, EventKind::SyncBatch, 1, None);
        let syncs = BTreeMap::from([(1, 5)]);
        let ts = |_t: u64| 8;
        let report = transcript_audit(&tr, &spec_with(&syncs, &ts));
        // two unexpected events plus one missing release
        assert_eq!(report.violations.len(), 3);
    }
}
