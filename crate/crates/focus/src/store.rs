//! Embeddable store facade: the six-operation API over the swim engine,
//! with per-store access counters.
//!
//! `put` inserts or overwrites a full record; `update` touches only the
//! named fields (and forwards to a full put when every field is supplied);
//! `get` and `scan` take a field set where the empty set means full access.
//! Field sets can be given by name or by field id.

use std::sync::Arc;

use crate::config::EngineConfig;
use crate::counter::StripedCounter;
use crate::error::Result;
use crate::pmem::FlushSnapshot;
use crate::schema::{FieldDef, FieldValues, HierKey, SchemaDef};
use crate::swim::{Engine, EngineStats};

/// KV-level activity: operations issued, low-level KV commands they fanned
/// out into, and backend bytes they touched.
#[derive(Default)]
pub struct AccessStats {
    pub ops: StripedCounter,
    pub kv_suboperations: StripedCounter,
    pub bytes_touched: StripedCounter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessSnapshot {
    pub ops: u64,
    pub kv_suboperations: u64,
    pub bytes_touched: u64,
}

impl AccessStats {
    pub fn snapshot(&self) -> AccessSnapshot {
        AccessSnapshot {
            ops: self.ops.sum(),
            kv_suboperations: self.kv_suboperations.sum(),
            bytes_touched: self.bytes_touched.sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreSnapshot {
    pub access: AccessSnapshot,
    pub flush: FlushSnapshot,
    pub engine: EngineStats,
}

impl StoreSnapshot {
    pub fn hit_ratio(&self) -> f64 {
        let total = self.engine.cache_hits + self.engine.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.engine.cache_hits as f64 / total as f64
        }
    }
}

pub struct Store {
    engine: Engine,
    stats: AccessStats,
}

impl Store {
    pub fn open(cfg: EngineConfig) -> Result<Store> {
        Ok(Store {
            engine: Engine::open(cfg)?,
            stats: AccessStats::default(),
        })
    }

    pub fn from_engine(engine: Engine) -> Store {
        Store {
            engine,
            stats: AccessStats::default(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn create_schema(&self, name: &str, fields: Vec<FieldDef>) -> Result<Arc<SchemaDef>> {
        self.engine.create_schema(name, fields)
    }

    pub fn schema(&self, key: &HierKey) -> Result<Arc<SchemaDef>> {
        self.engine.registry().get(key.schema_id)
    }

    fn track<T>(&self, subops: u64, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let before = self.backend_bytes();
        let result = f();
        self.stats.ops.incr();
        self.stats.kv_suboperations.add(subops);
        self.stats
            .bytes_touched
            .add(self.backend_bytes().saturating_sub(before));
        result
    }

    fn backend_bytes(&self) -> u64 {
        let snap = self.engine.region().stats().snapshot();
        snap.bytes_read + snap.bytes_written
    }

    /// Inserts or overwrites a record; `values` indexed by field id.
    pub fn put(&self, key: &HierKey, values: &[Vec<u8>]) -> Result<()> {
        self.track(1, || self.engine.put_full(key, values))
    }

    /// Updates the named fields. Supplying every field is treated as a full
    /// put: there is nothing partial left about the write.
    pub fn update(&self, key: &HierKey, updates: &[(&str, Vec<u8>)]) -> Result<()> {
        let schema = self.schema(key)?;
        let ids: Vec<u16> = updates
            .iter()
            .map(|(name, _)| Ok(schema.resolve_fields(&[name])?[0]))
            .collect::<Result<_>>()?;
        let by_id: Vec<(u16, Vec<u8>)> = ids
            .into_iter()
            .zip(updates.iter().map(|(_, v)| v.clone()))
            .collect();
        self.update_fields(key, &by_id)
    }

    pub fn update_fields(&self, key: &HierKey, updates: &[(u16, Vec<u8>)]) -> Result<()> {
        let schema = self.schema(key)?;
        if updates.len() == schema.fields.len() {
            let dense = crate::swim::sparse_to_dense(&schema, updates.to_vec())?;
            return self.track(1, || self.engine.put_full(key, &dense));
        }
        self.track(1, || self.engine.update_partial(key, updates))
    }

    /// Reads the named fields; the empty set means all fields.
    pub fn get(&self, key: &HierKey, fields: &[&str]) -> Result<FieldValues> {
        let schema = self.schema(key)?;
        let ids = schema.resolve_fields(fields)?;
        self.get_fields(key, &ids)
    }

    /// Reads by field id; an empty id set means all fields.
    pub fn get_fields(&self, key: &HierKey, ids: &[u16]) -> Result<FieldValues> {
        self.track(1, || {
            if ids.is_empty() {
                let dense = self.engine.read_full(key)?;
                Ok(dense
                    .into_iter()
                    .enumerate()
                    .map(|(id, v)| (id as u16, v))
                    .collect())
            } else {
                self.engine.read_partial(key, ids)
            }
        })
    }

    /// Key-ordered scan: up to `range` records starting at `start`, each
    /// resolved like a get. Stays within the start key's schema.
    pub fn scan(
        &self,
        start: &HierKey,
        fields: &[&str],
        range: usize,
    ) -> Result<Vec<(HierKey, FieldValues)>> {
        let schema = self.schema(start)?;
        let ids = schema.resolve_fields(fields)?;
        self.scan_fields(start, &ids, range)
    }

    pub fn scan_fields(
        &self,
        start: &HierKey,
        ids: &[u16],
        range: usize,
    ) -> Result<Vec<(HierKey, FieldValues)>> {
        let wanted = (!ids.is_empty()).then_some(ids);
        let before = self.backend_bytes();
        let mut rows = self.engine.scan(start, wanted, range)?;
        rows.retain(|(k, _)| k.schema_id == start.schema_id);
        self.stats.ops.incr();
        self.stats.kv_suboperations.add(rows.len().max(1) as u64);
        self.stats
            .bytes_touched
            .add(self.backend_bytes().saturating_sub(before));
        Ok(rows)
    }

    /// Deletes the record; idempotent.
    pub fn del(&self, key: &HierKey) -> Result<()> {
        self.track(1, || self.engine.del(key))
    }

    pub fn stats(&self) -> StoreSnapshot {
        StoreSnapshot {
            access: self.stats.snapshot(),
            flush: self.engine.region().stats().snapshot(),
            engine: self.engine.stats(),
        }
    }

    pub fn maintenance(&self) {
        self.engine.drain_maintenance();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn store() -> Store {
        let mut cfg = EngineConfig::small_for_tests();
        cfg.cache.enabled = false;
        Store::open(cfg).unwrap()
    }

    fn student(s: &Store) -> Arc<SchemaDef> {
        s.create_schema(
            "student",
            vec![
                FieldDef::variable("name"),
                FieldDef::fixed("age", 8),
                FieldDef::fixed("score", 8),
            ],
        )
        .unwrap()
    }

    #[test]
    fn put_get_full_and_named_fields() {
        let st = store();
        let schema = student(&st);
        let k = HierKey::new(schema.schema_id, b"a".to_vec());
        st.put(
            &k,
            &[b"Ann".to_vec(), vec![1; 8], vec![2; 8]],
        )
        .unwrap();
        let full = st.get(&k, &[]).unwrap();
        assert_eq!(full.len(), 3);
        let age = st.get(&k, &["age"]).unwrap();
        assert_eq!(age, vec![(1, vec![1; 8])]);
        assert!(matches!(
            st.get(&k, &["gpa"]),
            Err(Error::UnknownFieldName(_))
        ));
    }

    #[test]
    fn put_requires_every_field() {
        let st = store();
        let schema = student(&st);
        let k = HierKey::new(schema.schema_id, b"a".to_vec());
        assert!(matches!(
            st.put(&k, &[b"Ann".to_vec()]),
            Err(Error::MissingFieldValue(_))
        ));
        let bogus = HierKey::new(99, b"a".to_vec());
        assert!(matches!(
            st.put(&bogus, &[b"Ann".to_vec()]),
            Err(Error::UnknownSchema(99))
        ));
    }

    #[test]
    fn update_with_all_fields_becomes_full_put() {
        let st = store();
        let schema = student(&st);
        let k = HierKey::new(schema.schema_id, b"a".to_vec());
        st.put(&k, &[b"Ann".to_vec(), vec![1; 8], vec![2; 8]])
            .unwrap();
        st.update_fields(
            &k,
            &[
                (0, b"Bea".to_vec()),
                (1, vec![3; 8]),
                (2, vec![4; 8]),
            ],
        )
        .unwrap();
        // Full update appended a complete row, not a delta chain.
        let (_, visited) = st.engine().read_partial_traced(&k, &[0]).unwrap();
        assert_eq!(visited, 1);
        assert!(matches!(
            st.update_fields(&k, &[]),
            Err(Error::EmptyFieldSet)
        ));
        assert!(matches!(
            st.update_fields(&HierKey::new(schema.schema_id, b"nope".to_vec()), &[(1, vec![0; 8])]),
            Err(Error::KeyAbsent)
        ));
    }

    #[test]
    fn partial_update_touches_fewer_bytes_than_row() {
        let st = store();
        let schema = student(&st);
        let k = HierKey::new(schema.schema_id, b"a".to_vec());
        st.put(&k, &[vec![b'n'; 200], vec![1; 8], vec![2; 8]])
            .unwrap();
        let before = st.stats().access.bytes_touched;
        st.update(&k, &[("age", vec![9; 8])]).unwrap();
        let delta_bytes = st.stats().access.bytes_touched - before;
        // A one-field delta writes tens of bytes, nowhere near the row size.
        assert!(delta_bytes < 100, "touched {delta_bytes}");
    }

    #[test]
    fn scan_width_and_schema_confinement() {
        let st = store();
        let schema = student(&st);
        for i in 0..150u32 {
            let k = HierKey::new(schema.schema_id, format!("k{i:04}").into_bytes());
            st.put(&k, &[b"v".to_vec(), vec![0; 8], vec![0; 8]])
                .unwrap();
        }
        let other = st
            .create_schema("other", vec![FieldDef::fixed("x", 4)])
            .unwrap();
        st.put(
            &HierKey::new(other.schema_id, b"zzz".to_vec()),
            &[vec![1; 4]],
        )
        .unwrap();
        let rows = st
            .scan(
                &HierKey::new(schema.schema_id, b"k0000".to_vec()),
                &[],
                100,
            )
            .unwrap();
        assert_eq!(rows.len(), 100);
        // Scanning past the end of the schema never spills into another.
        let tail = st
            .scan(
                &HierKey::new(schema.schema_id, b"k0140".to_vec()),
                &["age"],
                100,
            )
            .unwrap();
        assert_eq!(tail.len(), 10);
        assert!(tail.iter().all(|(k, _)| k.schema_id == schema.schema_id));
        // Empty range.
        assert!(st
            .scan(&HierKey::new(schema.schema_id, b"k0000".to_vec()), &[], 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn del_then_get_absent() {
        let st = store();
        let schema = student(&st);
        let k = HierKey::new(schema.schema_id, b"a".to_vec());
        st.put(&k, &[b"A".to_vec(), vec![1; 8], vec![2; 8]])
            .unwrap();
        st.del(&k).unwrap();
        assert!(matches!(st.get(&k, &[]), Err(Error::KeyAbsent)));
        st.del(&k).unwrap();
    }
}
