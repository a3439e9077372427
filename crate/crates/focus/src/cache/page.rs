//! Slab pages and cached rows.

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::schema::{FieldValues, HierKey};

/// A cached row: the durable row's fixed region plus segregated
/// variable-length field values, guarded by a payload checksum. `plog_head`
/// and `plog_tail` track the durable chain so eviction and self-healing can
/// always fall back to the log.
pub struct CacheRow {
    pub key: HierKey,
    pub schema_id: u32,
    pub plog_head: u64,
    pub plog_tail: u64,
    pub last_access: AtomicU64,
    pub checksum: u32,
    pub fixed: Vec<u8>,
    pub vars: FieldValues,
}

impl CacheRow {
    pub fn new(
        key: HierKey,
        schema_id: u32,
        fixed: Vec<u8>,
        vars: FieldValues,
        plog_head: u64,
        plog_tail: u64,
        now_ms: u64,
    ) -> Self {
        let mut row = CacheRow {
            key,
            schema_id,
            plog_head,
            plog_tail,
            last_access: AtomicU64::new(now_ms),
            checksum: 0,
            fixed,
            vars,
        };
        row.checksum = row.compute_checksum();
        row
    }

    pub fn compute_checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&self.fixed);
        for (id, v) in &self.vars {
            hasher.update(&id.to_le_bytes());
            hasher.update(v);
        }
        hasher.finalize()
    }

    pub fn verify_checksum(&self) -> bool {
        self.checksum == self.compute_checksum()
    }

    pub fn recompute_checksum(&mut self) {
        self.checksum = self.compute_checksum();
    }

    pub fn snapshot(&self) -> RowSnapshot {
        RowSnapshot {
            plog_head: self.plog_head,
            plog_tail: self.plog_tail,
            fixed: self.fixed.clone(),
            vars: self.vars.clone(),
        }
    }
}

/// Copy of a cached row handed to readers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSnapshot {
    pub plog_head: u64,
    pub plog_tail: u64,
    pub fixed: Vec<u8>,
    pub vars: FieldValues,
}

impl RowSnapshot {
    pub fn var_value(&self, field_id: u16) -> Option<&[u8]> {
        self.vars
            .iter()
            .find(|(id, _)| *id == field_id)
            .map(|(_, v)| v.as_slice())
    }
}

pub type SlotVec = Arc<Vec<RwLock<Option<CacheRow>>>>;

/// Builds the slot storage for a freshly formatted page.
pub fn make_slots(slot_count: usize) -> SlotVec {
    let mut slots = Vec::with_capacity(slot_count);
    for _ in 0..slot_count {
        slots.push(RwLock::new(None));
    }
    Arc::new(slots)
}

/// One slab page's metadata: schema binding, occupancy bitmap, and row
/// count. Row storage itself lives in the page table so readers never take
/// the metadata lock.
pub struct Page {
    pub schema_id: u32,
    pub schema_version: u32,
    pub row_count: u32,
    pub prev_page: Option<u32>,
    bitmap: Vec<u64>,
    slot_count: usize,
}

impl Page {
    pub fn format(
        schema_id: u32,
        schema_version: u32,
        slot_count: usize,
        prev_page: Option<u32>,
    ) -> Page {
        Page {
            schema_id,
            schema_version,
            row_count: 0,
            prev_page,
            bitmap: vec![0u64; slot_count.div_ceil(64)],
            slot_count,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    /// Header view: schema id, schema version, row count, previous page.
    pub fn header(&self) -> (u32, u32, u32, Option<u32>) {
        (
            self.schema_id,
            self.schema_version,
            self.row_count,
            self.prev_page,
        )
    }

    /// Claims the first zero bit, if any.
    pub fn claim_first_zero(&mut self) -> Option<u32> {
        for (word_idx, word) in self.bitmap.iter_mut().enumerate() {
            if *word != u64::MAX {
                let bit = word.trailing_ones() as usize;
                let slot = word_idx * 64 + bit;
                if slot >= self.slot_count {
                    return None;
                }
                *word |= 1u64 << bit;
                self.row_count += 1;
                return Some(slot as u32);
            }
        }
        None
    }

    /// Clears a bit; returns whether it was set.
    pub fn clear(&mut self, slot: u32) -> bool {
        let word = &mut self.bitmap[slot as usize / 64];
        let mask = 1u64 << (slot % 64);
        if *word & mask == 0 {
            return false;
        }
        *word &= !mask;
        self.row_count -= 1;
        true
    }

    pub fn is_full(&self) -> bool {
        self.row_count as usize == self.slot_count
    }

    pub fn occupied_slots(&self) -> Vec<u32> {
        (0..self.slot_count as u32)
            .filter(|s| self.bitmap[*s as usize / 64] & (1 << (s % 64)) != 0)
            .collect()
    }

    /// Bitmap population must match the row count.
    pub fn audit(&self) -> bool {
        let pop: u32 = self.bitmap.iter().map(|w| w.count_ones()).sum();
        pop == self.row_count
    }
}
