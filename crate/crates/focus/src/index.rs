//! Ordered in-memory index from hierarchical keys to row locations.
//!
//! Keys order by `(schema_id, primary_key)` so range scans stay inside one
//! schema's keyspace. Each entry holds its location in a single atomic word,
//! making `get` one wait-free load and `cas_update` the only publication
//! point for new row versions. The map itself is a lock-free skip list.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_skiplist::SkipMap;

use crate::counter::StripedCounter;

use crate::error::{Error, Result};
use crate::schema::HierKey;

/// Where the current version of a row lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// Chain-tail address in the persistent log.
    Log(u64),
    /// Slot in the in-memory cache.
    Cache { page: u32, slot: u32 },
}

const TAG_LOG: u64 = 0x01 << 56;
const TAG_CACHE: u64 = 0x02 << 56;
const PAYLOAD_MASK: u64 = (1 << 56) - 1;
/// Log addresses must fit below this bound so the tag byte stays free.
pub const MAX_LOG_ADDR: u64 = 1 << 56;

impl Location {
    pub fn pack(self) -> u64 {
        match self {
            Location::Log(addr) => {
                debug_assert!(addr < MAX_LOG_ADDR);
                TAG_LOG | addr
            }
            Location::Cache { page, slot } => {
                debug_assert!(slot < (1 << 24));
                TAG_CACHE | ((page as u64) << 24) | slot as u64
            }
        }
    }

    pub fn unpack(word: u64) -> Location {
        if word & TAG_LOG != 0 {
            Location::Log(word & PAYLOAD_MASK)
        } else {
            Location::Cache {
                page: ((word & PAYLOAD_MASK) >> 24) as u32,
                slot: (word & 0xFF_FFFF) as u32,
            }
        }
    }

    pub fn is_cache(&self) -> bool {
        matches!(self, Location::Cache { .. })
    }
}

/// Per-key entry: the packed location plus the consecutive-partial-update
/// counter that drives restore rewrites.
pub struct IndexSlot {
    loc: AtomicU64,
    chain_len: AtomicU32,
}

impl IndexSlot {
    fn new(loc: Location) -> Self {
        IndexSlot {
            loc: AtomicU64::new(loc.pack()),
            chain_len: AtomicU32::new(0),
        }
    }

    pub fn location(&self) -> Location {
        Location::unpack(self.loc.load(Ordering::Acquire))
    }

    /// Single-word compare-and-swap; returns whether the swap happened.
    pub fn cas(&self, expected: Location, new: Location) -> bool {
        self.loc
            .compare_exchange(
                expected.pack(),
                new.pack(),
                Ordering::AcqRel,
                Ordering::Acquire,
            )
            .is_ok()
    }

    /// Unconditional replace; returns the previous location.
    pub fn swap(&self, new: Location) -> Location {
        Location::unpack(self.loc.swap(new.pack(), Ordering::AcqRel))
    }

    pub fn chain_len(&self) -> u32 {
        self.chain_len.load(Ordering::Acquire)
    }

    pub fn bump_chain(&self) -> u32 {
        self.chain_len.fetch_add(1, Ordering::AcqRel) + 1
    }

    pub fn reset_chain(&self) {
        self.chain_len.store(0, Ordering::Release);
    }

    pub fn set_chain(&self, len: u32) {
        self.chain_len.store(len, Ordering::Release);
    }
}

#[derive(Default)]
pub struct GlobalIndex {
    map: SkipMap<HierKey, Arc<IndexSlot>>,
    probes: StripedCounter,
}

impl GlobalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn probe(&self) {
        self.probes.incr();
    }

    /// Number of map probes issued so far. Cache hits and misses alike cost
    /// exactly one probe because the location tag lives in the entry.
    pub fn probe_count(&self) -> u64 {
        self.probes.sum()
    }

    pub fn get(&self, key: &HierKey) -> Option<Location> {
        self.probe();
        self.map.get(key).map(|e| e.value().location())
    }

    /// Returns the entry's slot for follow-up CAS work; one probe.
    pub fn slot(&self, key: &HierKey) -> Option<Arc<IndexSlot>> {
        self.probe();
        self.map.get(key).map(|e| e.value().clone())
    }

    /// Inserts a fresh entry; returns false if the key already exists.
    pub fn insert(&self, key: HierKey, loc: Location) -> bool {
        let slot = Arc::new(IndexSlot::new(loc));
        let entry = self.map.get_or_insert(key, slot.clone());
        Arc::ptr_eq(entry.value(), &slot)
    }

    /// Insert-or-replace; returns the previous location and the slot now
    /// published under the key.
    pub fn upsert(&self, key: &HierKey, loc: Location) -> (Option<Location>, Arc<IndexSlot>) {
        loop {
            if let Some(entry) = self.map.get(key) {
                let slot = entry.value().clone();
                let old = slot.swap(loc);
                return (Some(old), slot);
            }
            let slot = Arc::new(IndexSlot::new(loc));
            let entry = self.map.get_or_insert(key.clone(), slot.clone());
            if Arc::ptr_eq(entry.value(), &slot) {
                return (None, slot);
            }
            // Lost the race to another inserter; retry against its entry.
        }
    }

    /// Compare-and-swap the key's location.
    pub fn cas_update(&self, key: &HierKey, expected: Location, new: Location) -> Result<bool> {
        let entry = self.map.get(key).ok_or(Error::KeyAbsent)?;
        Ok(entry.value().cas(expected, new))
    }

    /// Removes the entry; returns its final location.
    pub fn remove(&self, key: &HierKey) -> Option<Location> {
        let entry = self.map.remove(key)?;
        Some(entry.value().location())
    }

    /// Up to `limit` entries with key >= start, ascending.
    pub fn range_from(&self, start: &HierKey, limit: usize) -> Vec<(HierKey, Location)> {
        self.probe();
        self.map
            .range(start.clone()..)
            .take(limit)
            .map(|e| (e.key().clone(), e.value().location()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter_all(&self) -> Vec<(HierKey, Location)> {
        self.map
            .iter()
            .map(|e| (e.key().clone(), e.value().location()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn key(schema: u32, pk: &[u8]) -> HierKey {
        HierKey::new(schema, pk.to_vec())
    }

    #[test]
    fn location_packing_round_trips() {
        for loc in [
            Location::Log(0),
            Location::Log(123456789),
            Location::Log(MAX_LOG_ADDR - 1),
            Location::Cache { page: 0, slot: 0 },
            Location::Cache {
                page: u32::MAX,
                slot: (1 << 24) - 1,
            },
        ] {
            assert_eq!(Location::unpack(loc.pack()), loc);
        }
    }

    #[test]
    fn get_insert_remove() {
        let idx = GlobalIndex::new();
        let k = key(1, b"a");
        assert_eq!(idx.get(&k), None);
        assert!(idx.insert(k.clone(), Location::Log(10)));
        assert!(!idx.insert(k.clone(), Location::Log(20)));
        assert_eq!(idx.get(&k), Some(Location::Log(10)));
        assert_eq!(idx.remove(&k), Some(Location::Log(10)));
        assert_eq!(idx.remove(&k), None);
        assert_eq!(idx.get(&k), None);
    }

    #[test]
    fn cas_semantics() {
        let idx = GlobalIndex::new();
        let k = key(1, b"a");
        idx.insert(k.clone(), Location::Log(10));
        assert!(idx.cas_update(&k, Location::Log(10), Location::Log(20)).unwrap());
        // Stale expected leaves the location unchanged.
        assert!(!idx.cas_update(&k, Location::Log(10), Location::Log(30)).unwrap());
        assert_eq!(idx.get(&k), Some(Location::Log(20)));
        assert!(matches!(
            idx.cas_update(&key(9, b"zz"), Location::Log(0), Location::Log(1)),
            Err(Error::KeyAbsent)
        ));
    }

    #[test]
    fn range_iteration_in_key_order() {
        let idx = GlobalIndex::new();
        for pk in [1u8, 3, 5] {
            idx.insert(key(0, &[pk]), Location::Log(pk as u64));
        }
        let got = idx.range_from(&key(0, &[2]), 2);
        let pks: Vec<u8> = got.iter().map(|(k, _)| k.primary_key[0]).collect();
        assert_eq!(pks, vec![3, 5]);
        assert!(idx.range_from(&key(0, &[2]), 0).is_empty());
        assert!(idx.range_from(&key(0, &[9]), 5).is_empty());
        // Scans do not cross into another schema when bounded by caller.
        idx.insert(key(1, &[0]), Location::Log(99));
        let spill = idx.range_from(&key(0, &[0]), 10);
        assert_eq!(spill.len(), 4);
        assert_eq!(spill.last().unwrap().0.schema_id, 1);
    }

    #[test]
    fn racing_cas_has_one_winner_per_generation() {
        let idx = Arc::new(GlobalIndex::new());
        let k = key(0, b"hot");
        idx.insert(k.clone(), Location::Log(0));
        let generations = 200usize;
        let threads = 4usize;
        let wins = Arc::new(AtomicUsize::new(0));
        let barrier = Arc::new(std::sync::Barrier::new(threads));
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let idx = idx.clone();
                let k = k.clone();
                let wins = wins.clone();
                let barrier = barrier.clone();
                std::thread::spawn(move || {
                    barrier.wait();
                    for generation in 0..generations {
                        let expected = Location::Log(generation as u64);
                        let proposed = Location::Log((generation + 1) as u64);
                        if idx.cas_update(&k, expected, proposed).unwrap() {
                            wins.fetch_add(1, Ordering::Relaxed);
                        }
                        // Wait until some thread advanced the generation.
                        while idx.get(&k) == Some(expected) {
                            std::hint::spin_loop();
                        }
                        let _ = t;
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(wins.load(Ordering::Relaxed), generations);
        assert_eq!(idx.get(&k), Some(Location::Log(generations as u64)));
    }

    #[test]
    fn concurrent_get_sees_old_or_new_never_torn() {
        let idx = Arc::new(GlobalIndex::new());
        let k = key(0, b"x");
        idx.insert(k.clone(), Location::Log(1));
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let reader = {
            let idx = idx.clone();
            let k = k.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match idx.get(&k) {
                        Some(Location::Log(a)) => assert!(a == 1 || a == 2),
                        other => panic!("unexpected location {other:?}"),
                    }
                }
            })
        };
        for _ in 0..10_000 {
            idx.cas_update(&k, Location::Log(1), Location::Log(2)).unwrap();
            idx.cas_update(&k, Location::Log(2), Location::Log(1)).unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        reader.join().unwrap();
    }
}
