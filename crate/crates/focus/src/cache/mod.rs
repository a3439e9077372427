//! SeaCache: schema-aware in-memory cache integrated with the global index.
//!
//! There is no separate cache directory to probe: the index entry's location
//! tag says whether a row is cached, so a lookup costs exactly the one index
//! probe whether it hits or misses. Rows live in slab pages drawn from a
//! fixed pool; each page belongs to one schema and tracks slot usage in an
//! occupancy bitmap.
//!
//! Admission is probabilistic, driven by the per-schema hit ratio: a schema
//! whose moving-average hit ratio exceeds `hit_threshold` always admits, and
//! below that admits with probability `H / hit_threshold`. Eviction walks
//! schemas from the coldest up and drops rows idle longer than the schema's
//! lifetime `2^-N * H * (1 - RO) * RW`, halting once page usage falls to the
//! configured target.
//!
//! Read-path work is kept off the foreground: hits only enqueue tasks
//! (access refresh, admission, slot writeback) into a bounded lock-free
//! queue drained by the engine's single maintenance worker. Write-path cache
//! maintenance (absorbing a durable update into a cached row, invalidating
//! on variable-length updates) is synchronous so readers always observe
//! acknowledged updates; the log remains the source of truth throughout.

mod page;
mod stats;

pub use page::RowSnapshot;
pub use stats::{admission_allows, lifetime_ms, SchemaStatsView};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crossbeam_queue::ArrayQueue;
use parking_lot::{Mutex, RwLock};

use crate::clock::Clock;
use crate::config::CacheConfig;
use crate::counter::StripedCounter;
use crate::index::{GlobalIndex, Location};
use crate::schema::{FieldValues, HierKey, SchemaDef, MAX_SCHEMAS};
use page::{make_slots, CacheRow, Page, SlotVec};
use stats::SchemaStat;

/// Fixed per-row metadata cost used when sizing slots.
const ROW_OVERHEAD: usize = 48;
/// A hit only queues an access refresh once the stored timestamp is this
/// stale. Eviction lifetimes are seconds-scale, so coarse refresh
/// granularity changes no eviction decision while keeping hit paths from
/// flooding the task queue.
const REFRESH_IDLE_MS: u64 = 64;
/// Accesses before a schema's hit ratio is considered meaningful; below
/// this the cache admits unconditionally, like a plain LRU would.
const WARM_UP_ACCESSES: u64 = 32;

/// Asynchronous cache maintenance tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheTask {
    /// Refresh a row's last-access timestamp after a hit.
    RefreshAccess { page: u32, slot: u32 },
    /// Admit the row for `key` whose observed chain tail was `tail`.
    Admit { key: HierKey, tail: u64 },
    /// Release a slot whose row became unreachable.
    Writeback { page: u32, slot: u32, key: HierKey },
}

pub enum Lookup {
    Hit(RowSnapshot),
    /// Slot did not hold the expected row (stale location, healed checksum
    /// failure, mid-transition). Caller re-reads the index.
    Gone,
}

pub enum AdmitOutcome {
    Admitted { page: u32, slot: u32 },
    /// Index moved between observation and publication.
    LostRace,
    /// No slot available or row exceeds the slot's variable-area quota.
    Rejected,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub admissions: u64,
    pub evictions: u64,
    pub checksum_failures: u64,
    pub refresh_drops: u64,
}

struct Core {
    /// Page metadata (bitmap, schema binding), indexed by page id.
    pages: Vec<Option<Page>>,
    /// Ids of recycled pages available for reuse.
    free_pages: Vec<u32>,
    /// Hard page budget.
    budget: usize,
    /// Pages currently assigned to a schema.
    active_pages: usize,
    /// Per-schema page lists, in assignment order.
    schema_pages: HashMap<u32, Vec<u32>>,
    /// High-water mark of page ids ever formatted.
    next_fresh: usize,
}

/// Row storage for one page id. Readers take only this lock (shared) plus
/// the slot's own lock; the core mutex never sits on the read path.
struct PageEntry {
    slots: RwLock<Option<SlotVec>>,
}

pub struct SeaCache {
    cfg: CacheConfig,
    clock: Clock,
    index: Arc<GlobalIndex>,
    core: Mutex<Core>,
    page_table: Box<[PageEntry]>,
    stats: Box<[OnceLock<Arc<SchemaStat>>]>,
    queue: ArrayQueue<CacheTask>,
    hits: StripedCounter,
    misses: StripedCounter,
    admissions: AtomicU64,
    evictions: AtomicU64,
    checksum_failures: AtomicU64,
    refresh_drops: StripedCounter,
}

impl SeaCache {
    pub fn new(cfg: CacheConfig, clock: Clock, index: Arc<GlobalIndex>) -> Self {
        let budget = (cfg.capacity_bytes as usize / cfg.page_size).max(1);
        let page_table: Box<[PageEntry]> = (0..budget)
            .map(|_| PageEntry {
                slots: RwLock::new(None),
            })
            .collect();
        SeaCache {
            queue: ArrayQueue::new(cfg.task_queue_len.max(1)),
            cfg,
            clock,
            index,
            core: Mutex::new(Core {
                pages: (0..budget).map(|_| None).collect(),
                free_pages: Vec::new(),
                budget,
                active_pages: 0,
                schema_pages: HashMap::new(),
                next_fresh: 0,
            }),
            page_table,
            stats: (0..MAX_SCHEMAS).map(|_| OnceLock::new()).collect(),
            hits: StripedCounter::new(),
            misses: StripedCounter::new(),
            admissions: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            checksum_failures: AtomicU64::new(0),
            refresh_drops: StripedCounter::new(),
        }
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.sum(),
            misses: self.misses.sum(),
            admissions: self.admissions.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            checksum_failures: self.checksum_failures.load(Ordering::Relaxed),
            refresh_drops: self.refresh_drops.sum(),
        }
    }

    /// Fraction of the page budget currently assigned to schemas.
    pub fn usage(&self) -> f64 {
        let core = self.core.lock();
        core.active_pages as f64 / core.budget as f64
    }

    fn stat(&self, schema_id: u32) -> Arc<SchemaStat> {
        self.stats[schema_id as usize % MAX_SCHEMAS]
            .get_or_init(|| Arc::new(SchemaStat::new()))
            .clone()
    }

    fn known_stats(&self) -> impl Iterator<Item = (u32, &Arc<SchemaStat>)> {
        self.stats
            .iter()
            .enumerate()
            .filter_map(|(id, slot)| slot.get().map(|s| (id as u32, s)))
    }

    pub fn record_hit(&self, schema_id: u32) {
        self.hits.incr();
        self.stat(schema_id).record(true, self.cfg.ema_alpha);
    }

    pub fn record_miss(&self, schema_id: u32) {
        self.misses.incr();
        self.stat(schema_id).record(false, self.cfg.ema_alpha);
    }

    pub fn stats_view(&self, schema_id: u32) -> SchemaStatsView {
        self.stat(schema_id).view(&self.cfg.rw_table)
    }

    /// Admission decision for a just-missed row of `schema_id`. `draw` is a
    /// uniform sample in [0, 1).
    pub fn should_admit(&self, schema_id: u32, draw: f64) -> bool {
        let stat = self.stat(schema_id);
        if stat.accesses() < WARM_UP_ACCESSES {
            return true;
        }
        admission_allows(stat.hit_ratio(), self.cfg.hit_threshold, draw)
    }

    // ---- task queue ----

    /// Queues a task; never blocks. Refresh tasks are droppable; admits fall
    /// back to rejection; writebacks report failure so callers run inline.
    pub fn enqueue_task(&self, task: CacheTask) -> bool {
        let dropped_refresh = matches!(task, CacheTask::RefreshAccess { .. });
        match self.queue.push(task) {
            Ok(()) => true,
            Err(_) => {
                if dropped_refresh {
                    self.refresh_drops.incr();
                }
                false
            }
        }
    }

    pub fn pop_task(&self) -> Option<CacheTask> {
        self.queue.pop()
    }

    pub fn pending_tasks(&self) -> usize {
        self.queue.len()
    }

    // ---- lookup path ----

    /// Resolves a cache location to a row snapshot. Performs no cache
    /// mutation besides enqueuing tasks; a checksum failure heals by
    /// repointing the index at the durable row and scheduling the slot's
    /// release.
    pub fn lookup(&self, page: u32, slot: u32, key: &HierKey) -> Lookup {
        let now = self.clock.now_ms();
        let outcome = self.with_row_read(page, slot, |row| {
            if row.key != *key {
                return None;
            }
            if !row.verify_checksum() {
                return Some(Err(row.plog_tail));
            }
            let idle = now.saturating_sub(row.last_access.load(Ordering::Relaxed));
            Some(Ok((row.snapshot(), idle >= REFRESH_IDLE_MS)))
        });
        match outcome {
            Some(Some(Ok((snapshot, stale)))) => {
                self.record_hit(key.schema_id);
                if stale {
                    self.enqueue_task(CacheTask::RefreshAccess { page, slot });
                }
                Lookup::Hit(snapshot)
            }
            Some(Some(Err(durable_tail))) => {
                // Corrupt row: drop the entry, serve from the log.
                self.checksum_failures.fetch_add(1, Ordering::Relaxed);
                let _ = self.index.cas_update(
                    key,
                    Location::Cache { page, slot },
                    Location::Log(durable_tail),
                );
                if !self.enqueue_task(CacheTask::Writeback {
                    page,
                    slot,
                    key: key.clone(),
                }) {
                    self.free_slot(page, slot, key);
                }
                Lookup::Gone
            }
            _ => Lookup::Gone,
        }
    }

    fn with_row_read<R>(
        &self,
        page: u32,
        slot: u32,
        f: impl FnOnce(&CacheRow) -> R,
    ) -> Option<R> {
        let entry = self.page_table.get(page as usize)?.slots.read();
        let guard = entry.as_ref()?.get(slot as usize)?.read();
        guard.as_ref().map(f)
    }

    /// Runs `f` with exclusive access to the row, provided it is occupied by
    /// `key`. Used by the engine to serialize updates against a cached row.
    pub fn with_row_mut<R>(
        &self,
        page: u32,
        slot: u32,
        key: &HierKey,
        f: impl FnOnce(&mut CacheRow) -> R,
    ) -> Option<R> {
        let entry = self.page_table.get(page as usize)?.slots.read();
        let mut guard = entry.as_ref()?.get(slot as usize)?.write();
        match guard.as_mut() {
            Some(row) if row.key == *key => Some(f(row)),
            _ => None,
        }
    }

    /// Refreshes a row's last-access timestamp (worker task).
    pub fn refresh_access(&self, page: u32, slot: u32) {
        let now = self.clock.now_ms();
        let _ = self.with_row_read(page, slot, |row| {
            row.last_access.store(now, Ordering::Relaxed);
        });
    }

    // ---- admission ----

    /// Stores a fully reconstructed row and publishes it by CAS-ing the
    /// index from the observed log tail to the new cache slot.
    #[allow(clippy::too_many_arguments)]
    pub fn admit(
        &self,
        key: &HierKey,
        schema: &SchemaDef,
        fixed: Vec<u8>,
        vars: FieldValues,
        plog_head: u64,
        plog_tail: u64,
    ) -> AdmitOutcome {
        let var_bytes: usize = vars.iter().map(|(_, v)| v.len()).sum();
        if var_bytes > self.cfg.var_quota {
            return AdmitOutcome::Rejected;
        }
        let Some((page, slot)) = self.claim_slot(schema) else {
            return AdmitOutcome::Rejected;
        };
        let row = CacheRow::new(
            key.clone(),
            schema.schema_id,
            fixed,
            vars,
            plog_head,
            plog_tail,
            self.clock.now_ms(),
        );
        {
            let entry = self.page_table[page as usize].slots.read();
            match entry.as_ref() {
                Some(slots) => *slots[slot as usize].write() = Some(row),
                None => return AdmitOutcome::Rejected,
            }
        }
        let published = self
            .index
            .cas_update(key, Location::Log(plog_tail), Location::Cache { page, slot })
            .unwrap_or(false);
        if !published {
            self.release_slot(page, slot);
            return AdmitOutcome::LostRace;
        }
        self.admissions.fetch_add(1, Ordering::Relaxed);
        self.stat(key.schema_id).add_occupied(1);
        AdmitOutcome::Admitted { page, slot }
    }

    /// Claims the first zero bit in the schema's first non-full page,
    /// assigning a new page from the pool when the list is full.
    fn claim_slot(&self, schema: &SchemaDef) -> Option<(u32, u32)> {
        let slot_size = schema.fixed_region_size as usize + self.cfg.var_quota + ROW_OVERHEAD;
        let slots_per_page = (self.cfg.page_size / slot_size).max(1);
        let mut core = self.core.lock();
        let page_ids = core
            .schema_pages
            .entry(schema.schema_id)
            .or_default()
            .clone();
        for pid in &page_ids {
            if let Some(Some(page)) = core.pages.get_mut(*pid as usize) {
                let (page_schema, page_version, _, _) = page.header();
                if page.is_full()
                    || page_schema != schema.schema_id
                    || page_version != schema.version
                {
                    continue;
                }
                if let Some(slot) = page.claim_first_zero() {
                    return Some((*pid, slot));
                }
            }
        }
        // All pages full: pull a page from the pool.
        let pid = if let Some(pid) = core.free_pages.pop() {
            pid
        } else if core.next_fresh < core.budget {
            core.next_fresh += 1;
            (core.next_fresh - 1) as u32
        } else {
            return None;
        };
        let prev = page_ids.last().copied();
        let page = Page::format(schema.schema_id, schema.version, slots_per_page, prev);
        core.pages[pid as usize] = Some(page);
        core.active_pages += 1;
        core.schema_pages.get_mut(&schema.schema_id).unwrap().push(pid);
        // Install the row storage while still under the core lock; no path
        // acquires the core lock while holding a page or slot lock, so this
        // cannot invert.
        *self.page_table[pid as usize].slots.write() = Some(make_slots(slots_per_page));
        self.stat(schema.schema_id).add_slots(slots_per_page as i64);
        let slot = core.pages[pid as usize]
            .as_mut()
            .unwrap()
            .claim_first_zero()
            .expect("fresh page has a free slot");
        Some((pid, slot))
    }

    /// Clears a claimed slot that never published (admission rollback).
    fn release_slot(&self, page: u32, slot: u32) {
        {
            let entry = self.page_table[page as usize].slots.read();
            match entry.as_ref() {
                Some(slots) => *slots[slot as usize].write() = None,
                None => return,
            }
        }
        self.clear_slot_bit(page, slot);
    }

    fn clear_slot_bit(&self, page: u32, slot: u32) {
        let mut core = self.core.lock();
        let Some(Some(p)) = core.pages.get_mut(page as usize) else {
            return;
        };
        if !p.clear(slot) {
            return;
        }
        let schema_id = p.schema_id;
        let slot_count = p.slot_count() as i64;
        if p.row_count == 0 {
            // Empty page returns to the pool.
            core.pages[page as usize] = None;
            core.active_pages -= 1;
            core.free_pages.push(page);
            if let Some(list) = core.schema_pages.get_mut(&schema_id) {
                list.retain(|id| *id != page);
            }
            *self.page_table[page as usize].slots.write() = None;
            drop(core);
            self.stat(schema_id).add_slots(-slot_count);
        }
    }

    /// Frees a slot after validating it still belongs to `key`.
    pub fn free_slot(&self, page: u32, slot: u32, key: &HierKey) {
        {
            let entry = self.page_table[page as usize].slots.read();
            let Some(slots) = entry.as_ref() else { return };
            let mut guard = slots[slot as usize].write();
            match guard.as_ref() {
                Some(row) if row.key == *key => {}
                _ => return,
            }
            *guard = None;
        }
        self.stat(key.schema_id).add_occupied(-1);
        self.clear_slot_bit(page, slot);
    }

    // ---- eviction ----

    /// One eviction pass: schemas in ascending hit-ratio order, rows evicted
    /// once idle past their schema's lifetime, halting at the usage target.
    /// Sweeps that free nothing bump the schema's failure count, which
    /// halves lifetimes for the next sweep; any eviction resets it.
    pub fn evict_pass(&self, target_usage: f64) -> usize {
        let now = self.clock.now_ms();
        let mut evicted_total = 0usize;
        loop {
            if self.usage() <= target_usage {
                break;
            }
            let mut schema_order: Vec<(u32, Arc<SchemaStat>)> = self
                .known_stats()
                .map(|(id, s)| (id, s.clone()))
                .collect();
            schema_order.sort_by(|a, b| {
                a.1.hit_ratio()
                    .partial_cmp(&b.1.hit_ratio())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut evicted_this_round = 0usize;
            let mut all_exhausted = true;
            for (schema_id, stat) in schema_order {
                if self.usage() <= target_usage {
                    break;
                }
                let view = stat.view(&self.cfg.rw_table);
                let lifetime = lifetime_ms(&view);
                if view.fail_count < 60 {
                    all_exhausted = false;
                }
                let evicted = self.sweep_schema(schema_id, lifetime, now, target_usage);
                if evicted == 0 {
                    stat.bump_fail();
                } else {
                    stat.reset_fail();
                    evicted_this_round += evicted;
                }
            }
            evicted_total += evicted_this_round;
            if evicted_this_round == 0 && all_exhausted {
                // Lifetimes have collapsed to zero and nothing is evictable
                // (rows touched this instant); give up rather than spin.
                break;
            }
        }
        evicted_total
    }

    fn sweep_schema(&self, schema_id: u32, lifetime: f64, now: u64, target: f64) -> usize {
        let page_ids: Vec<u32> = {
            let core = self.core.lock();
            core.schema_pages.get(&schema_id).cloned().unwrap_or_default()
        };
        let mut evicted = 0usize;
        for pid in page_ids {
            if self.usage() <= target {
                break;
            }
            let occupied = {
                let core = self.core.lock();
                match core.pages.get(pid as usize).and_then(|p| p.as_ref()) {
                    Some(p) => p.occupied_slots(),
                    None => continue,
                }
            };
            for slot in occupied {
                let freed = {
                    let entry = self.page_table[pid as usize].slots.read();
                    let Some(slots) = entry.as_ref() else { continue };
                    let mut guard = slots[slot as usize].write();
                    let Some(row) = guard.as_ref() else { continue };
                    if row.schema_id != schema_id {
                        continue;
                    }
                    let idle = now.saturating_sub(row.last_access.load(Ordering::Relaxed));
                    if (idle as f64) <= lifetime {
                        continue;
                    }
                    // Point the index back at the durable chain tail, then
                    // free the slot.
                    let key = row.key.clone();
                    let tail = row.plog_tail;
                    let _ = self.index.cas_update(
                        &key,
                        Location::Cache { page: pid, slot },
                        Location::Log(tail),
                    );
                    *guard = None;
                    true
                };
                if freed {
                    self.stat(schema_id).add_occupied(-1);
                    self.clear_slot_bit(pid, slot);
                    self.evictions.fetch_add(1, Ordering::Relaxed);
                    evicted += 1;
                }
            }
        }
        evicted
    }

    /// Occupancy bitmap audit: row_count must equal the bitmap population
    /// for every active page.
    pub fn audit_bitmaps(&self) -> bool {
        let core = self.core.lock();
        core.pages.iter().flatten().all(|p| p.audit())
    }

    #[cfg(test)]
    pub(crate) fn corrupt_slot_for_tests(&self, page: u32, slot: u32) {
        let entry = self.page_table[page as usize].slots.read();
        let mut guard = entry.as_ref().unwrap()[slot as usize].write();
        if let Some(row) = guard.as_mut() {
            if let Some(b) = row.fixed.first_mut() {
                *b ^= 0xFF;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RetentionTable;
    use crate::schema::{FieldDef, SchemaRegistry};

    fn setup(cfg: CacheConfig) -> (Arc<GlobalIndex>, SeaCache, Arc<SchemaDef>) {
        let index = Arc::new(GlobalIndex::new());
        let registry = SchemaRegistry::new();
        let schema = registry
            .create_schema(
                "s",
                vec![FieldDef::fixed("a", 8), FieldDef::variable("b")],
            )
            .unwrap();
        let cache = SeaCache::new(cfg, Clock::monotonic(), index.clone());
        (index, cache, schema)
    }

    fn small_cfg() -> CacheConfig {
        CacheConfig {
            capacity_bytes: 16 * 1024,
            page_size: 4 * 1024,
            var_quota: 64,
            task_queue_len: 8,
            ..CacheConfig::default()
        }
    }

    fn admit_one(
        index: &GlobalIndex,
        cache: &SeaCache,
        schema: &SchemaDef,
        pk: &[u8],
        tail: u64,
    ) -> (u32, u32) {
        let key = HierKey::new(schema.schema_id, pk.to_vec());
        index.insert(key.clone(), Location::Log(tail));
        match cache.admit(
            &key,
            schema,
            vec![0u8; schema.fixed_region_size as usize],
            vec![(1, b"var".to_vec())],
            tail,
            tail,
        ) {
            AdmitOutcome::Admitted { page, slot } => (page, slot),
            other => panic!(
                "expected admission, got {}",
                match other {
                    AdmitOutcome::LostRace => "lost race",
                    AdmitOutcome::Rejected => "rejected",
                    AdmitOutcome::Admitted { .. } => unreachable!(),
                }
            ),
        }
    }

    #[test]
    fn admission_claims_sequential_slots() {
        let (index, cache, schema) = setup(small_cfg());
        let (p0, s0) = admit_one(&index, &cache, &schema, b"a", 64);
        let (p1, s1) = admit_one(&index, &cache, &schema, b"b", 128);
        assert_eq!((p0, s0), (0, 0));
        assert_eq!(p1, 0);
        assert_eq!(s1, 1);
        assert!(cache.audit_bitmaps());
        let key = HierKey::new(schema.schema_id, b"a".to_vec());
        assert_eq!(
            index.get(&key),
            Some(Location::Cache { page: 0, slot: 0 })
        );
    }

    #[test]
    fn lookup_hits_and_refreshes_via_queue() {
        let index = Arc::new(GlobalIndex::new());
        let registry = SchemaRegistry::new();
        let schema = registry
            .create_schema("s", vec![FieldDef::fixed("a", 8), FieldDef::variable("b")])
            .unwrap();
        let (clock, handle) = Clock::scripted();
        let cache = SeaCache::new(small_cfg(), clock, index.clone());
        let (page, slot) = admit_one(&index, &cache, &schema, b"a", 64);
        let key = HierKey::new(schema.schema_id, b"a".to_vec());
        // Same-millisecond hit: refresh would be a no-op, so none queued.
        match cache.lookup(page, slot, &key) {
            Lookup::Hit(snap) => {
                assert_eq!(snap.plog_tail, 64);
                assert_eq!(snap.vars, vec![(1u16, b"var".to_vec())]);
            }
            Lookup::Gone => panic!("expected hit"),
        }
        assert_eq!(cache.pop_task(), None);
        // A later hit refreshes through the queue.
        handle.store(100, std::sync::atomic::Ordering::Release);
        match cache.lookup(page, slot, &key) {
            Lookup::Hit(_) => {}
            Lookup::Gone => panic!("expected hit"),
        }
        assert_eq!(
            cache.pop_task(),
            Some(CacheTask::RefreshAccess { page, slot })
        );
        cache.refresh_access(page, slot);
        let refreshed = cache
            .with_row_read(page, slot, |row| {
                row.last_access.load(std::sync::atomic::Ordering::Relaxed)
            })
            .unwrap();
        assert_eq!(refreshed, 100);
        assert_eq!(cache.counters().hits, 2);
    }

    #[test]
    fn corrupted_row_heals_to_log() {
        let (index, cache, schema) = setup(small_cfg());
        let (page, slot) = admit_one(&index, &cache, &schema, b"a", 64);
        let key = HierKey::new(schema.schema_id, b"a".to_vec());
        cache.corrupt_slot_for_tests(page, slot);
        match cache.lookup(page, slot, &key) {
            Lookup::Gone => {}
            Lookup::Hit(_) => panic!("corrupt row must not hit"),
        }
        assert_eq!(index.get(&key), Some(Location::Log(64)));
        assert_eq!(cache.counters().checksum_failures, 1);
        // Worker drains the writeback and releases the slot.
        while let Some(task) = cache.pop_task() {
            if let CacheTask::Writeback { page, slot, key } = task {
                cache.free_slot(page, slot, &key);
            }
        }
        assert!(cache.audit_bitmaps());
        match cache.lookup(page, slot, &key) {
            Lookup::Gone => {}
            Lookup::Hit(_) => panic!("slot should be free"),
        }
    }

    #[test]
    fn pool_exhaustion_rejects() {
        let cfg = CacheConfig {
            capacity_bytes: 4 * 1024, // one page
            page_size: 4 * 1024,
            var_quota: 900,
            ..small_cfg()
        };
        let (index, cache, schema) = setup(cfg);
        // slot size ~ 900 + 20 + 48 -> 4 slots per 4 KiB page
        let mut admitted = 0;
        for i in 0..16u32 {
            let key = HierKey::new(schema.schema_id, vec![i as u8]);
            index.insert(key.clone(), Location::Log(64 + i as u64));
            match cache.admit(
                &key,
                &schema,
                vec![0u8; schema.fixed_region_size as usize],
                vec![],
                64 + i as u64,
                64 + i as u64,
            ) {
                AdmitOutcome::Admitted { .. } => admitted += 1,
                AdmitOutcome::Rejected => break,
                AdmitOutcome::LostRace => panic!("no race here"),
            }
        }
        assert!(admitted >= 1);
        assert!((cache.usage() - 1.0).abs() < f64::EPSILON);
    }

    #[test]
    fn oversized_variable_content_rejected() {
        let (index, cache, schema) = setup(small_cfg());
        let key = HierKey::new(schema.schema_id, b"fat".to_vec());
        index.insert(key.clone(), Location::Log(64));
        match cache.admit(
            &key,
            &schema,
            vec![0u8; schema.fixed_region_size as usize],
            vec![(1, vec![0u8; 1000])],
            64,
            64,
        ) {
            AdmitOutcome::Rejected => {}
            _ => panic!("over-quota row must be rejected"),
        }
    }

    #[test]
    fn queue_full_drops_refresh_only() {
        let (_index, cache, _schema) = setup(small_cfg());
        for i in 0..8 {
            assert!(cache.enqueue_task(CacheTask::RefreshAccess { page: i, slot: 0 }));
        }
        assert!(!cache.enqueue_task(CacheTask::RefreshAccess { page: 9, slot: 0 }));
        assert_eq!(cache.counters().refresh_drops, 1);
        let mut n = 0;
        while cache.pop_task().is_some() {
            n += 1;
        }
        assert_eq!(n, 8);
    }

    #[test]
    fn eviction_halts_at_target_and_resets_fail_count() {
        let cfg = CacheConfig {
            capacity_bytes: 40 * 1024,
            page_size: 4 * 1024,
            var_quota: 800, // ~4 slots/page
            rw_table: RetentionTable {
                bands: vec![(f64::INFINITY, 1_000)],
            },
            ..small_cfg()
        };
        let index = Arc::new(GlobalIndex::new());
        let registry = SchemaRegistry::new();
        let schema = registry
            .create_schema("s", vec![FieldDef::fixed("a", 8)])
            .unwrap();
        let (clock, handle) = Clock::scripted();
        let cache = SeaCache::new(cfg, clock, index.clone());
        // Warm the hit ratio so lifetimes are meaningful.
        for _ in 0..64 {
            cache.record_hit(schema.schema_id);
        }
        for i in 0..40u32 {
            let key = HierKey::new(schema.schema_id, i.to_le_bytes().to_vec());
            index.insert(key.clone(), Location::Log(64 + i as u64));
            let outcome = cache.admit(
                &key,
                &schema,
                vec![0u8; 8],
                vec![],
                64 + i as u64,
                64 + i as u64,
            );
            assert!(matches!(outcome, AdmitOutcome::Admitted { .. }));
        }
        assert!(cache.usage() == 1.0);
        // All rows stale: advance the clock far past any lifetime.
        handle.store(1_000_000, Ordering::Release);
        let evicted = cache.evict_pass(0.8);
        assert!(evicted > 0);
        assert!(cache.usage() <= 0.8);
        // Evicted keys fall back to their durable addresses.
        let key0 = HierKey::new(schema.schema_id, 0u32.to_le_bytes().to_vec());
        assert!(matches!(index.get(&key0), Some(Location::Log(64))));
        assert!(cache.audit_bitmaps());
    }

    #[test]
    fn failed_sweep_bumps_fail_count_and_halves_lifetime() {
        let cfg = CacheConfig {
            capacity_bytes: 8 * 1024,
            page_size: 4 * 1024,
            var_quota: 800,
            rw_table: RetentionTable {
                bands: vec![(f64::INFINITY, 8_000)],
            },
            ..small_cfg()
        };
        let index = Arc::new(GlobalIndex::new());
        let registry = SchemaRegistry::new();
        let schema = registry
            .create_schema("s", vec![FieldDef::fixed("a", 8)])
            .unwrap();
        let (clock, handle) = Clock::scripted();
        let cache = SeaCache::new(cfg, clock, index.clone());
        for _ in 0..64 {
            cache.record_hit(schema.schema_id);
        }
        // Leave some slots free so occupancy stays below 1 and lifetimes
        // stay positive.
        for i in 0..6u32 {
            let key = HierKey::new(schema.schema_id, i.to_le_bytes().to_vec());
            index.insert(key.clone(), Location::Log(64 + i as u64));
            let _ = cache.admit(
                &key,
                &schema,
                vec![0u8; 8],
                vec![],
                64 + i as u64,
                64 + i as u64,
            );
        }
        let view0 = cache.stats_view(schema.schema_id);
        let life0 = lifetime_ms(&view0);
        assert!(life0 > 0.0);
        // Rows are fresh: advance barely, so the first sweep frees nothing
        // until fail counts shrink lifetimes below the idle age.
        handle.store((life0 / 2.0) as u64, Ordering::Release);
        let evicted = cache.evict_pass(0.0);
        assert!(evicted > 0, "halved lifetimes must eventually evict");
        let view1 = cache.stats_view(schema.schema_id);
        // Fail count resets after the evicting sweep.
        assert_eq!(view1.fail_count, 0);
    }

    #[test]
    fn mpsc_queue_keeps_every_task_once() {
        let cfg = CacheConfig {
            task_queue_len: 1024,
            ..small_cfg()
        };
        let (_index, cache, _schema) = setup(cfg);
        let cache = Arc::new(cache);
        let producers = 4;
        let per = 50_000u32;
        let mut handles = Vec::new();
        for t in 0..producers {
            let cache = cache.clone();
            handles.push(std::thread::spawn(move || {
                let mut pushed = 0u64;
                for i in 0..per {
                    if cache.enqueue_task(CacheTask::RefreshAccess {
                        page: t,
                        slot: i,
                    }) {
                        pushed += 1;
                    }
                }
                pushed
            }));
        }
        let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let consumer = {
            let cache = cache.clone();
            let done = done.clone();
            std::thread::spawn(move || {
                let mut seen = std::collections::HashSet::new();
                loop {
                    match cache.pop_task() {
                        Some(CacheTask::RefreshAccess { page, slot }) => {
                            assert!(seen.insert((page, slot)), "duplicated task");
                        }
                        Some(_) => unreachable!(),
                        None => {
                            if done.load(Ordering::Acquire) && cache.pop_task().is_none() {
                                break;
                            }
                            std::hint::spin_loop();
                        }
                    }
                }
                seen.len() as u64
            })
        };
        let pushed: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
        done.store(true, Ordering::Release);
        let consumed = consumer.join().unwrap();
        assert_eq!(pushed, consumed);
        assert!(pushed <= (producers as u64) * per as u64);
    }
}
