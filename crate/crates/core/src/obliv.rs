//! The padded secure cache and its oblivious operations.
//!
//! Sorting uses Batcher's merge-exchange network, which works for any length
//! and whose compare-exchange schedule depends on the length alone. Entries are
//! sorted through a packed `(key, index)` array so the network only ever moves
//! integers; the tuples are gathered once at the end.

use serde::{Deserialize, Serialize};

/// A view or cache row. Dummies have `is_view == false` and no sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureTuple {
    pub key: u32,
    pub attrs: Vec<u32>,
    pub is_view: bool,
    pub seq: u64,
    pub timestamp: u64,
    /// Owner record ids this row was derived from (empty for dummies).
    pub sources: Vec<u64>,
}

impl SecureTuple {
    pub fn real(key: u32, attrs: Vec<u32>, seq: u64, timestamp: u64, sources: Vec<u64>) -> Self {
        Self {
            key,
            attrs,
            is_view: true,
            seq,
            timestamp,
            sources,
        }
    }

    pub fn dummy(width: usize, seq: u64, timestamp: u64) -> Self {
        Self {
            key: 0,
            attrs: vec![0; width],
            is_view: false,
            seq,
            timestamp,
            sources: Vec::new(),
        }
    }

    pub fn is_dummy(&self) -> bool {
        !self.is_view
    }
}

/// Hands out run-wide unique sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct SeqAllocator {
    next: u64,
}

impl SeqAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.next;
        self.next += 1;
        s
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

#[derive(Debug, Clone, Default)]
pub struct SecureCache {
    entries: Vec<SecureTuple>,
    width: usize,
    /// Length after every append, for transcript sizing.
    history: Vec<usize>,
}

impl SecureCache {
    /// `width` is the attribute count of dummies minted by reads.
    pub fn new(width: usize) -> Self {
        Self {
            entries: Vec::new(),
            width,
            history: Vec::new(),
        }
    }

    pub fn from_entries(entries: Vec<SecureTuple>, width: usize) -> Self {
        Self {
            entries,
            width,
            history: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[SecureTuple] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn real_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_view).count()
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }
}

/// Calls `f(i, j)` for every comparator of the merge-exchange network on `n`
/// inputs, in execution order. After the network, `a[i] <= a[j]` holds for each
/// pair it was applied to last.
pub fn for_each_comparator(n: usize, mut f: impl FnMut(usize, usize)) {
    if n < 2 {
        return;
    }
    let t = usize::BITS - (n - 1).leading_zeros();
    let mut p = 1usize << (t - 1);
    while p > 0 {
        let mut q = 1usize << (t - 1);
        let mut r = 0usize;
        let mut d = p;
        loop {
            for i in 0..n - d {
                if i & p == r {
                    f(i, i + d);
                }
            }
            if q == p {
                break;
            }
            d = q - p;
            q >>= 1;
            r = p;
        }
        p >>= 1;
    }
}

pub fn sorting_network_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for_each_comparator(n, |i, j| pairs.push((i, j)));
    pairs
}

// i in [0, m) with (i & p) == r, for p a power of two and r in {0, p}
fn count_matching(m: usize, p: usize, r: usize) -> usize {
    let period = 2 * p;
    let with_bit = (m / period) * p + (m % period).saturating_sub(p);
    if r == 0 {
        m - with_bit
    } else {
        with_bit
    }
}

/// Comparator count of the network on `n` inputs, without enumerating it.
pub fn network_size(n: usize) -> u64 {
    if n < 2 {
        return 0;
    }
    let t = usize::BITS - (n - 1).leading_zeros();
    let mut total = 0u64;
    let mut p = 1usize << (t - 1);
    while p > 0 {
        let mut q = 1usize << (t - 1);
        let mut r = 0usize;
        let mut d = p;
        loop {
            if d < n {
                total += count_matching(n - d, p, r) as u64;
            }
            if q == p {
                break;
            }
            d = q - p;
            q >>= 1;
            r = p;
        }
        p >>= 1;
    }
    total
}

/// Sorts `items` ascending by `key` through the network, observing each
/// comparator. Keys must fit in 96 bits; ties keep their input order.
/// Returns the number of compare-exchanges.
pub fn network_sort_observed<T>(
    items: &mut Vec<T>,
    key: impl Fn(&T) -> u128,
    mut observe: impl FnMut(usize, usize),
) -> u64 {
    let n = items.len();
    let mut packed: Vec<u128> = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let k = key(item);
            debug_assert!(k >> 96 == 0, "sort key wider than 96 bits");
            (k << 32) | i as u128
        })
        .collect();
    let mut count = 0u64;
    for_each_comparator(n, |i, j| {
        observe(i, j);
        let (a, b) = (packed[i], packed[j]);
        packed[i] = a.min(b);
        packed[j] = a.max(b);
        count += 1;
    });
    let mut slots: Vec<Option<T>> = items.drain(..).map(Some).collect();
    items.extend(
        packed
            .iter()
            .map(|k| slots[(*k as u32) as usize].take().expect("index gathered twice")),
    );
    count
}

pub fn network_sort<T>(items: &mut Vec<T>, key: impl Fn(&T) -> u128) -> u64 {
    network_sort_observed(items, key, |_, _| {})
}

fn view_first_key(t: &SecureTuple) -> u128 {
    ((!t.is_view as u128) << 64) | t.seq as u128
}

pub fn cache_append(cache: &mut SecureCache, batch: Vec<SecureTuple>) {
    cache.entries.extend(batch);
    cache.history.push(cache.entries.len());
}

/// Orders the cache by `(is_view desc, seq asc)`. Returns the comparator count.
///
/// The network is stable, so its output equals a stable sort on the same key;
/// the simulator computes that directly and charges the network's comparator
/// count. [`obli_sort_observed`] executes the network itself.
pub fn obli_sort(cache: &mut SecureCache) -> u64 {
    cache.entries.sort_by_key(view_first_key);
    network_size(cache.entries.len())
}

pub fn obli_sort_observed(cache: &mut SecureCache, observe: impl FnMut(usize, usize)) -> u64 {
    network_sort_observed(&mut cache.entries, view_first_key, observe)
}

/// Takes the first `sz` entries, topping up with fresh dummies when the cache
/// holds fewer. Callers sort first.
pub fn cache_read(
    cache: &mut SecureCache,
    sz: usize,
    seqs: &mut SeqAllocator,
    t: u64,
) -> Vec<SecureTuple> {
    if sz <= cache.entries.len() {
        return cache.entries.drain(..sz).collect();
    }
    let missing = sz - cache.entries.len();
    let mut fetched = std::mem::take(&mut cache.entries);
    fetched.extend((0..missing).map(|_| SecureTuple::dummy(cache.width, seqs.next_seq(), t)));
    fetched
}

/// Result of a flush: the batch bound for the view and what was recycled.
#[derive(Debug, Clone)]
pub struct FlushOutcome {
    pub fetched: Vec<SecureTuple>,
    pub recycled_real: usize,
    pub comparisons: u64,
}

/// Sorts, reads `s` entries and discards everything left.
pub fn cache_flush(
    cache: &mut SecureCache,
    s: usize,
    seqs: &mut SeqAllocator,
    t: u64,
) -> FlushOutcome {
    let comparisons = obli_sort(cache);
    let fetched = cache_read(cache, s, seqs, t);
    let recycled_real = cache.real_count();
    cache.entries.clear();
    FlushOutcome {
        fetched,
        recycled_real,
        comparisons,
    }
}
