//! Flat-mapping baseline adapters and the uniform record-store surface the
//! benchmark drives.
//!
//! Both adapters run the same engine in a flat mode (a single-variable-field
//! schema holding one opaque blob per KV), so backend counters are directly
//! comparable with the schema-aware path:
//!
//! * consolidated: one KV per record; a partial read or update must handle
//!   the whole serialized blob, paying I/O amplification.
//! * scattered: one KV per attribute (`pk/field_name` keys); a full read or
//!   insert fans out into one KV command per attribute, paying I/O
//!   splitting.

use std::sync::Arc;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::schema::{FieldDef, FieldValues, HierKey, SchemaDef};
use crate::store::{Store, StoreSnapshot};

/// Record-level operations shared by the schema-aware store and the two
/// flat-mapping adapters. Field sets are by id; empty means all fields.
/// Scan results over records: `(primary key, field values)` rows.
pub type RecordRows = Vec<(Vec<u8>, FieldValues)>;

pub trait RecordStore: Send + Sync {
    fn put(&self, pk: &[u8], values: &[Vec<u8>]) -> Result<()>;
    fn update(&self, pk: &[u8], updates: &[(u16, Vec<u8>)]) -> Result<()>;
    fn get(&self, pk: &[u8], fields: &[u16]) -> Result<FieldValues>;
    fn scan(&self, start_pk: &[u8], fields: &[u16], limit: usize) -> Result<RecordRows>;
    fn del(&self, pk: &[u8]) -> Result<()>;
    fn snapshot(&self) -> StoreSnapshot;
    fn maintenance(&self);
}

/// Schema-aware records: one hierarchical KV per record.
pub struct FocusRecords {
    store: Store,
    schema: Arc<SchemaDef>,
}

impl FocusRecords {
    pub fn open(cfg: EngineConfig, fields: Vec<FieldDef>) -> Result<FocusRecords> {
        let store = Store::open(cfg)?;
        let schema = store.create_schema("records", fields)?;
        Ok(FocusRecords { store, schema })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn schema(&self) -> &SchemaDef {
        &self.schema
    }

    fn key(&self, pk: &[u8]) -> HierKey {
        HierKey::new(self.schema.schema_id, pk.to_vec())
    }
}

impl RecordStore for FocusRecords {
    fn put(&self, pk: &[u8], values: &[Vec<u8>]) -> Result<()> {
        self.store.put(&self.key(pk), values)
    }

    fn update(&self, pk: &[u8], updates: &[(u16, Vec<u8>)]) -> Result<()> {
        self.store.update_fields(&self.key(pk), updates)
    }

    fn get(&self, pk: &[u8], fields: &[u16]) -> Result<FieldValues> {
        self.store.get_fields(&self.key(pk), fields)
    }

    fn scan(&self, start_pk: &[u8], fields: &[u16], limit: usize) -> Result<RecordRows> {
        Ok(self
            .store
            .scan_fields(&self.key(start_pk), fields, limit)?
            .into_iter()
            .map(|(k, v)| (k.primary_key, v))
            .collect())
    }

    fn del(&self, pk: &[u8]) -> Result<()> {
        self.store.del(&self.key(pk))
    }

    fn snapshot(&self) -> StoreSnapshot {
        self.store.stats()
    }

    fn maintenance(&self) {
        self.store.maintenance();
    }
}

/// Blob format for consolidated records: `[u16 count]` then per field
/// `[u32 len][bytes]`.
pub fn encode_record(values: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + values.iter().map(|v| 4 + v.len()).sum::<usize>());
    out.extend_from_slice(&(values.len() as u16).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v);
    }
    out
}

pub fn decode_record(blob: &[u8]) -> Result<Vec<Vec<u8>>> {
    let corrupt = || Error::CorruptHeader;
    let count = u16::from_le_bytes(blob.get(..2).ok_or_else(corrupt)?.try_into().unwrap());
    let mut pos = 2usize;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(
            blob.get(pos..pos + 4).ok_or_else(corrupt)?.try_into().unwrap(),
        ) as usize;
        pos += 4;
        out.push(blob.get(pos..pos + len).ok_or_else(corrupt)?.to_vec());
        pos += len;
    }
    Ok(out)
}

fn flat_engine(cfg: EngineConfig) -> Result<(Store, Arc<SchemaDef>)> {
    let store = Store::open(cfg)?;
    let schema = store.create_schema("flat", vec![FieldDef::variable("blob")])?;
    Ok((store, schema))
}

/// One flat KV per record; every access handles the whole blob.
pub struct ConsolidatedStore {
    store: Store,
    schema: Arc<SchemaDef>,
}

impl ConsolidatedStore {
    pub fn open(cfg: EngineConfig, _field_count: usize) -> Result<ConsolidatedStore> {
        let (store, schema) = flat_engine(cfg)?;
        Ok(ConsolidatedStore { store, schema })
    }

    fn key(&self, pk: &[u8]) -> HierKey {
        HierKey::new(self.schema.schema_id, pk.to_vec())
    }
}

impl RecordStore for ConsolidatedStore {
    fn put(&self, pk: &[u8], values: &[Vec<u8>]) -> Result<()> {
        self.store.put(&self.key(pk), &[encode_record(values)])
    }

    fn update(&self, pk: &[u8], updates: &[(u16, Vec<u8>)]) -> Result<()> {
        // Read-modify-write of the entire record.
        let blob = self.store.get_fields(&self.key(pk), &[])?;
        let mut values = decode_record(&blob[0].1)?;
        for (id, v) in updates {
            *values
                .get_mut(*id as usize)
                .ok_or(Error::FieldIdOutOfRange(*id))? = v.clone();
        }
        self.store.put(&self.key(pk), &[encode_record(&values)])
    }

    fn get(&self, pk: &[u8], fields: &[u16]) -> Result<FieldValues> {
        let blob = self.store.get_fields(&self.key(pk), &[])?;
        let values = decode_record(&blob[0].1)?;
        project(values, fields)
    }

    fn scan(&self, start_pk: &[u8], fields: &[u16], limit: usize) -> Result<RecordRows> {
        let rows = self.store.scan_fields(&self.key(start_pk), &[], limit)?;
        rows.into_iter()
            .map(|(k, v)| Ok((k.primary_key, project(decode_record(&v[0].1)?, fields)?)))
            .collect()
    }

    fn del(&self, pk: &[u8]) -> Result<()> {
        self.store.del(&self.key(pk))
    }

    fn snapshot(&self) -> StoreSnapshot {
        self.store.stats()
    }

    fn maintenance(&self) {
        self.store.maintenance();
    }
}

fn project(values: Vec<Vec<u8>>, fields: &[u16]) -> Result<FieldValues> {
    if fields.is_empty() {
        return Ok(values
            .into_iter()
            .enumerate()
            .map(|(id, v)| (id as u16, v))
            .collect());
    }
    let mut ids = fields.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            values
                .get(id as usize)
                .cloned()
                .map(|v| (id, v))
                .ok_or(Error::FieldIdOutOfRange(id))
        })
        .collect()
}

/// One flat KV per attribute, keyed `pk/field_index`; full access fans out.
pub struct ScatteredStore {
    store: Store,
    schema: Arc<SchemaDef>,
    field_count: usize,
}

impl ScatteredStore {
    pub fn open(cfg: EngineConfig, field_count: usize) -> Result<ScatteredStore> {
        let (store, schema) = flat_engine(cfg)?;
        Ok(ScatteredStore {
            store,
            schema,
            field_count,
        })
    }

    fn attr_key(&self, pk: &[u8], field: u16) -> HierKey {
        let mut bytes = Vec::with_capacity(pk.len() + 5);
        bytes.extend_from_slice(pk);
        bytes.push(b'/');
        bytes.extend_from_slice(format!("{field:04}").as_bytes());
        HierKey::new(self.schema.schema_id, bytes)
    }

    fn all_ids(&self) -> Vec<u16> {
        (0..self.field_count as u16).collect()
    }
}

impl RecordStore for ScatteredStore {
    fn put(&self, pk: &[u8], values: &[Vec<u8>]) -> Result<()> {
        for (id, value) in values.iter().enumerate() {
            self.store
                .put(&self.attr_key(pk, id as u16), std::slice::from_ref(value))?;
        }
        Ok(())
    }

    fn update(&self, pk: &[u8], updates: &[(u16, Vec<u8>)]) -> Result<()> {
        for (id, value) in updates {
            self.store
                .put(&self.attr_key(pk, *id), std::slice::from_ref(value))?;
        }
        Ok(())
    }

    fn get(&self, pk: &[u8], fields: &[u16]) -> Result<FieldValues> {
        let ids = if fields.is_empty() {
            self.all_ids()
        } else {
            let mut ids = fields.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        ids.into_iter()
            .map(|id| {
                let row = self.store.get_fields(&self.attr_key(pk, id), &[])?;
                Ok((id, row.into_iter().next().ok_or(Error::KeyAbsent)?.1))
            })
            .collect()
    }

    fn scan(&self, start_pk: &[u8], fields: &[u16], limit: usize) -> Result<RecordRows> {
        // Attribute keys for one record are adjacent, so one index range
        // covers `limit` records; grouping reassembles them.
        let span = limit * self.field_count;
        let rows = self
            .store
            .scan_fields(&self.attr_key(start_pk, 0), &[], span)?;
        let mut out: RecordRows = Vec::new();
        for (key, value) in rows {
            let pk_bytes = key.primary_key;
            let Some(sep) = pk_bytes.iter().rposition(|b| *b == b'/') else {
                continue;
            };
            let (record_pk, attr) = pk_bytes.split_at(sep);
            let field: u16 = std::str::from_utf8(&attr[1..])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::CorruptHeader)?;
            if !fields.is_empty() && !fields.contains(&field) {
                continue;
            }
            match out.last_mut() {
                Some((pk, group)) if pk.as_slice() == record_pk => {
                    group.push((field, value.into_iter().next().unwrap().1));
                }
                _ => {
                    if out.len() == limit {
                        break;
                    }
                    out.push((
                        record_pk.to_vec(),
                        vec![(field, value.into_iter().next().unwrap().1)],
                    ));
                }
            }
        }
        Ok(out)
    }

    fn del(&self, pk: &[u8]) -> Result<()> {
        for id in self.all_ids() {
            self.store.del(&self.attr_key(pk, id))?;
        }
        Ok(())
    }

    fn snapshot(&self) -> StoreSnapshot {
        self.store.stats()
    }

    fn maintenance(&self) {
        self.store.maintenance();
    }
}
