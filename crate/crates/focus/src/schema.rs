//! Schema registry: named, versioned field lists with precomputed offsets.
//!
//! Every field of a schema owns a slice of the row's fixed region. Fixed
//! fields occupy exactly their declared size; variable-length fields occupy a
//! 12-byte metadata head there (type, size, and an 8-byte slot that holds the
//! content inline when it fits, or the content's location otherwise). Offsets
//! are assigned in declaration order, so they are a pure function of the
//! field list.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;

use crate::error::{Error, Result};

/// Registry capacity; schema ids are dense indexes below this bound.
pub const MAX_SCHEMAS: usize = 4096;

/// Sparse field values: `(field_id, bytes)` pairs in ascending id order.
pub type FieldValues = Vec<(u16, Vec<u8>)>;

/// Bytes a variable-length field occupies inside the fixed region.
pub const VAR_HEAD_SIZE: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    /// Declared byte size; meaningful for fixed fields only.
    pub size: u32,
}

impl FieldDef {
    pub fn fixed(name: &str, size: u32) -> Self {
        FieldDef {
            name: name.to_string(),
            kind: FieldKind::Fixed,
            size,
        }
    }

    pub fn variable(name: &str) -> Self {
        FieldDef {
            name: name.to_string(),
            kind: FieldKind::Variable,
            size: 0,
        }
    }

    /// Bytes this field occupies in the fixed region.
    pub fn fixed_slot_size(&self) -> u32 {
        match self.kind {
            FieldKind::Fixed => self.size,
            FieldKind::Variable => VAR_HEAD_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDef {
    pub schema_id: u32,
    pub name: String,
    pub version: u32,
    pub fields: Vec<FieldDef>,
    /// Byte offset of each field inside the fixed region, by field id.
    pub fixed_offsets: Vec<u32>,
    pub fixed_region_size: u32,
}

impl SchemaDef {
    pub fn field_count(&self) -> u16 {
        self.fields.len() as u16
    }

    pub fn field(&self, id: u16) -> Result<&FieldDef> {
        self.fields
            .get(id as usize)
            .ok_or(Error::FieldIdOutOfRange(id))
    }

    /// `(offset, length, kind)` of the field's slice in the fixed region.
    /// For variable fields this is the metadata-head slice.
    pub fn field_slice(&self, id: u16) -> Result<(u32, u32, FieldKind)> {
        let field = self.field(id)?;
        Ok((
            self.fixed_offsets[id as usize],
            field.fixed_slot_size(),
            field.kind,
        ))
    }

    /// Resolves field names to ids; an empty name set means "all fields".
    pub fn resolve_fields(&self, names: &[&str]) -> Result<Vec<u16>> {
        if names.is_empty() {
            return Ok((0..self.field_count()).collect());
        }
        let mut ids = Vec::with_capacity(names.len());
        for name in names {
            let id = self
                .fields
                .iter()
                .position(|f| f.name == *name)
                .ok_or_else(|| Error::UnknownFieldName(name.to_string()))?;
            ids.push(id as u16);
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    pub fn field_ids(&self) -> Vec<u16> {
        (0..self.field_count()).collect()
    }

    fn compute_layout(fields: &[FieldDef]) -> (Vec<u32>, u32) {
        let mut offsets = Vec::with_capacity(fields.len());
        let mut cursor = 0u32;
        for field in fields {
            offsets.push(cursor);
            cursor += field.fixed_slot_size();
        }
        (offsets, cursor)
    }
}

/// A hierarchical key: the schema it belongs to plus the record's primary key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierKey {
    pub schema_id: u32,
    pub primary_key: Vec<u8>,
}

impl HierKey {
    pub fn new(schema_id: u32, primary_key: impl Into<Vec<u8>>) -> Self {
        HierKey {
            schema_id,
            primary_key: primary_key.into(),
        }
    }

    /// Wire form stored in complete-row headers: schema id then key bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.primary_key.len());
        out.extend_from_slice(&self.schema_id.to_le_bytes());
        out.extend_from_slice(&self.primary_key);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::CorruptHeader);
        }
        Ok(HierKey {
            schema_id: u32::from_le_bytes(bytes[..4].try_into().unwrap()),
            primary_key: bytes[4..].to_vec(),
        })
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.primary_key.len()
    }
}

impl fmt::Display for HierKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.schema_id, String::from_utf8_lossy(&self.primary_key))
    }
}

#[derive(Default)]
struct RegistryWriter {
    by_name: HashMap<String, u32>,
    count: usize,
}

/// Read-mostly schema store. Registrations take the writer section; lookups
/// are wait-free reads of immutable definitions, so hot read paths never
/// contend on the registry.
pub struct SchemaRegistry {
    slots: Box<[OnceLock<Arc<SchemaDef>>]>,
    published: AtomicUsize,
    writer: Mutex<RegistryWriter>,
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        SchemaRegistry {
            slots: (0..MAX_SCHEMAS).map(|_| OnceLock::new()).collect(),
            published: AtomicUsize::new(0),
            writer: Mutex::new(RegistryWriter::default()),
        }
    }
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn publish(&self, writer: &mut RegistryWriter, schema: SchemaDef) -> Result<Arc<SchemaDef>> {
        let id = schema.schema_id as usize;
        if id >= MAX_SCHEMAS {
            return Err(Error::SchemaLimitReached(MAX_SCHEMAS));
        }
        let schema = Arc::new(schema);
        writer.by_name.insert(schema.name.clone(), schema.schema_id);
        writer.count = id + 1;
        assert!(
            self.slots[id].set(schema.clone()).is_ok(),
            "schema slot reused"
        );
        self.published.store(writer.count, Ordering::Release);
        Ok(schema)
    }

    pub fn create_schema(&self, name: &str, fields: Vec<FieldDef>) -> Result<Arc<SchemaDef>> {
        Self::validate(name, &fields)?;
        let mut writer = self.writer.lock();
        if writer.by_name.contains_key(name) {
            return Err(Error::DuplicateSchemaName(name.to_string()));
        }
        let schema_id = writer.count as u32;
        let (fixed_offsets, fixed_region_size) = SchemaDef::compute_layout(&fields);
        self.publish(
            &mut writer,
            SchemaDef {
                schema_id,
                name: name.to_string(),
                version: 1,
                fields,
                fixed_offsets,
                fixed_region_size,
            },
        )
    }

    fn validate(name: &str, fields: &[FieldDef]) -> Result<()> {
        if fields.is_empty() {
            return Err(Error::ZeroFieldSchema);
        }
        let mut seen = HashMap::new();
        for field in fields {
            if field.name.is_empty() {
                return Err(Error::DuplicateFieldName(String::new()));
            }
            if seen.insert(field.name.as_str(), ()).is_some() {
                return Err(Error::DuplicateFieldName(field.name.clone()));
            }
            if field.kind == FieldKind::Fixed && field.size == 0 {
                return Err(Error::ZeroSizeFixedField(field.name.clone()));
            }
        }
        let _ = name;
        Ok(())
    }

    pub fn get(&self, schema_id: u32) -> Result<Arc<SchemaDef>> {
        self.slots
            .get(schema_id as usize)
            .and_then(|slot| slot.get())
            .cloned()
            .ok_or(Error::UnknownSchema(schema_id))
    }

    pub fn get_by_name(&self, name: &str) -> Option<Arc<SchemaDef>> {
        let id = *self.writer.lock().by_name.get(name)?;
        self.get(id).ok()
    }

    pub fn len(&self) -> usize {
        self.published.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Restores a schema with a preassigned id during log recovery. Ids must
    /// arrive in registration order.
    pub(crate) fn restore(&self, schema: SchemaDef) -> Result<()> {
        let mut writer = self.writer.lock();
        if schema.schema_id as usize != writer.count {
            return Err(Error::CorruptRegion("schema records out of order"));
        }
        self.publish(&mut writer, schema)?;
        Ok(())
    }
}

/// Persistence format:
/// `[u32 schema_id][u32 version][u16 name_len][name][u16 field_count]`
/// then per field `[u16 name_len][name][u8 kind][u32 size]`, little-endian.
/// Kind byte: 0 = fixed, 1 = variable.
pub fn encode_schema_record(schema: &SchemaDef) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&schema.schema_id.to_le_bytes());
    out.extend_from_slice(&schema.version.to_le_bytes());
    out.extend_from_slice(&(schema.name.len() as u16).to_le_bytes());
    out.extend_from_slice(schema.name.as_bytes());
    out.extend_from_slice(&(schema.fields.len() as u16).to_le_bytes());
    for field in &schema.fields {
        out.extend_from_slice(&(field.name.len() as u16).to_le_bytes());
        out.extend_from_slice(field.name.as_bytes());
        out.push(match field.kind {
            FieldKind::Fixed => 0,
            FieldKind::Variable => 1,
        });
        out.extend_from_slice(&field.size.to_le_bytes());
    }
    out
}

pub fn decode_schema_record(bytes: &[u8]) -> Result<SchemaDef> {
    let corrupt = || Error::CorruptRegion("truncated schema record");
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let slice = bytes.get(*pos..*pos + n).ok_or_else(corrupt)?;
        *pos += n;
        Ok(slice)
    };
    let schema_id = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
        .map_err(|_| Error::CorruptRegion("schema name not utf-8"))?;
    let field_count = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    let mut fields = Vec::with_capacity(field_count as usize);
    for _ in 0..field_count {
        let fname_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let fname = String::from_utf8(take(&mut pos, fname_len)?.to_vec())
            .map_err(|_| Error::CorruptRegion("field name not utf-8"))?;
        let kind = match take(&mut pos, 1)?[0] {
            0 => FieldKind::Fixed,
            1 => FieldKind::Variable,
            _ => return Err(Error::CorruptRegion("bad field kind")),
        };
        let size = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        fields.push(FieldDef {
            name: fname,
            kind,
            size,
        });
    }
    let (fixed_offsets, fixed_region_size) = SchemaDef::compute_layout(&fields);
    Ok(SchemaDef {
        schema_id,
        name,
        version,
        fields,
        fixed_offsets,
        fixed_region_size,
    })
}
