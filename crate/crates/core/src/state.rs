//! State jointly held by the two servers over one simulated run.

use crate::leakage::transcript::Transcript;
use crate::obliv::{SecureCache, SecureTuple, SeqAllocator};
use crate::servers::ServerRandomness;
use crate::sharing::{recover, RingValue, SharePair, ShareSession, SharingError};

/// Secret-shared count of real rows cached since the last reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterShares(pub SharePair);

impl CounterShares {
    pub fn recover(&self) -> u32 {
        recover(self.0).word()
    }
}

/// Append-only synchronized view.
#[derive(Debug, Clone, Default)]
pub struct MaterializedView {
    rows: Vec<SecureTuple>,
    batches: Vec<(u64, usize)>,
    real: usize,
}

impl MaterializedView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, t: u64, batch: Vec<SecureTuple>) {
        self.real += batch.iter().filter(|r| r.is_view).count();
        self.batches.push((t, batch.len()));
        self.rows.extend(batch);
    }

    pub fn rows(&self) -> &[SecureTuple] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn real_count(&self) -> usize {
        self.real
    }

    /// `(time, size)` of every appended batch.
    pub fn batches(&self) -> &[(u64, usize)] {
        &self.batches
    }
}

pub struct ProtocolState<R: ServerRandomness> {
    pub cache: SecureCache,
    pub counter: CounterShares,
    pub view: MaterializedView,
    pub seqs: SeqAllocator,
    pub session: ShareSession,
    pub randomness: R,
    pub transcript: Transcript,
    /// Real rows discarded by flushes so far.
    pub recycled_real: u64,
}

impl<R: ServerRandomness> ProtocolState<R> {
    /// Initial state with the counter shared as zero. `width` is the attribute
    /// count of view rows.
    pub fn new(width: usize, randomness: R) -> Result<Self, SharingError> {
        let mut state = Self {
            cache: SecureCache::new(width),
            counter: CounterShares::default(),
            view: MaterializedView::new(),
            seqs: SeqAllocator::new(),
            session: ShareSession::new(),
            randomness,
            transcript: Transcript::new(),
            recycled_real: 0,
        };
        state.reshare_counter(0)?;
        Ok(state)
    }

    pub fn counter_value(&self) -> u32 {
        self.counter.recover()
    }

    /// Stores `c` under fresh shares drawn from the servers.
    pub fn reshare_counter(&mut self, c: u32) -> Result<SharePair, SharingError> {
        let pair = self.share_fresh(RingValue(c))?;
        self.counter = CounterShares(pair);
        Ok(pair)
    }

    pub fn share_fresh(&mut self, x: RingValue) -> Result<SharePair, SharingError> {
        let (z0, z1) = self.randomness.share_words();
        self.session.share_in_protocol(x, z0, z1)
    }
}
