//! What each server observes during a run.

use serde::{Deserialize, Serialize};

use crate::sharing::{RingValue, SharePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    OwnerUpload,
    TransformOutput,
    SyncBatch,
    FlushBatch,
    ShareReceived,
    /// A noisy-threshold comparison happened; carries no size.
    ThresholdCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub time: u64,
    pub server: u8,
    pub kind: EventKind,
    pub size: u64,
    pub share_value: Option<RingValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: TranscriptEvent) {
        self.events.push(event);
    }

    /// Records the same event at both servers, each with its own share.
    pub fn record_both(&mut self, time: u64, kind: EventKind, size: u64, shares: Option<SharePair>) {
        for server in 0..2u8 {
            self.events.push(TranscriptEvent {
                time,
                server,
                kind,
                size,
                share_value: shares.map(|p| p.of(server as usize)),
            });
        }
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn for_server(&self, server: u8) -> impl Iterator<Item = &TranscriptEvent> {
        self.events.iter().filter(move |e| e.server == server)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sum of all event sizes.
    pub fn volume(&self) -> u64 {
        self.events.iter().map(|e| e.size).sum()
    }
}
