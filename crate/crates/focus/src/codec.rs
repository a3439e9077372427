//! Bit-exact row encodings.
//!
//! Complete row: `[u16 kv_size|invalid][u16 key_len][key][fixed region][var region]`.
//! The first word packs the content size in bits 0-14 and the invalid flag in
//! bit 15, so content is capped at 32 KiB per row. `kv_size` counts the fixed
//! region plus all out-of-line variable content; the header and key are not
//! included.
//!
//! Each variable-length field occupies a 12-byte head inside the fixed
//! region: `[u16 type][u16 size][8-byte slot]`. Content of eight bytes or
//! fewer lives inline in the slot; larger content goes to the var region and
//! the slot holds its byte offset relative to the row start. Relative offsets
//! keep the encoding canonical (equal inputs produce identical bytes) and let
//! garbage collection relocate rows without rewriting heads.
//!
//! Delta row: `[u16 meta_size][u16 fields_count][u16 x n ids][u64 chain_ptr][payload]`
//! with ids strictly increasing and payload laid out in id order. Variable
//! fields in the payload carry the same 12-byte head followed by their
//! content when it exceeds eight bytes.
//!
//! All integers little-endian.

use std::collections::BTreeMap;

use crate::error::{Error, Result, NULL_ADDR};
use crate::schema::{FieldKind, FieldValues, HierKey, SchemaDef};

pub const INVALID_BIT: u16 = 0x8000;
pub const KV_SIZE_MASK: u16 = 0x7FFF;
/// Variable content at or below this many bytes is stored inline in the head.
pub const INLINE_MAX: usize = 8;
/// Fixed part of the complete-row header preceding the key bytes.
pub const COMPLETE_HEADER_LEN: usize = 4;

/// Parsed 12-byte variable-field head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarHead {
    pub type_code: u16,
    pub size: u16,
    pub slot: [u8; 8],
}

impl VarHead {
    pub fn parse(bytes: &[u8]) -> Result<VarHead> {
        if bytes.len() < 12 {
            return Err(Error::CorruptHeader);
        }
        Ok(VarHead {
            type_code: u16::from_le_bytes([bytes[0], bytes[1]]),
            size: u16::from_le_bytes([bytes[2], bytes[3]]),
            slot: bytes[4..12].try_into().unwrap(),
        })
    }

    pub fn is_inline(&self) -> bool {
        self.size as usize <= INLINE_MAX
    }

    pub fn inline_content(&self) -> &[u8] {
        &self.slot[..self.size as usize]
    }

    /// Row-relative byte offset of out-of-line content.
    pub fn content_offset(&self) -> u64 {
        u64::from_le_bytes(self.slot)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.type_code.to_le_bytes());
        out.extend_from_slice(&self.size.to_le_bytes());
        out.extend_from_slice(&self.slot);
    }
}

fn make_var_head(content: &[u8], rel_offset: u64) -> VarHead {
    let mut slot = [0u8; 8];
    if content.len() <= INLINE_MAX {
        slot[..content.len()].copy_from_slice(content);
    } else {
        slot = rel_offset.to_le_bytes();
    }
    VarHead {
        type_code: 0,
        size: content.len() as u16,
        slot,
    }
}

/// Encoded complete row (CLog entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteRowImage {
    pub bytes: Vec<u8>,
}

impl CompleteRowImage {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        CompleteRowImage { bytes }
    }

    pub fn kv_size(&self) -> u16 {
        u16::from_le_bytes([self.bytes[0], self.bytes[1]]) & KV_SIZE_MASK
    }

    pub fn invalid(&self) -> bool {
        u16::from_le_bytes([self.bytes[0], self.bytes[1]]) & INVALID_BIT != 0
    }

    pub fn key_len(&self) -> usize {
        u16::from_le_bytes([self.bytes[2], self.bytes[3]]) as usize
    }

    pub fn key(&self) -> Result<HierKey> {
        HierKey::decode(&self.bytes[COMPLETE_HEADER_LEN..COMPLETE_HEADER_LEN + self.key_len()])
    }

    pub fn fixed_region_offset(&self) -> usize {
        COMPLETE_HEADER_LEN + self.key_len()
    }

    pub fn total_len(&self) -> usize {
        COMPLETE_HEADER_LEN + self.key_len() + self.kv_size() as usize
    }
}

/// Total byte length of a complete row given its first four header bytes.
pub fn complete_row_len_from_header(header: &[u8]) -> Result<usize> {
    if header.len() < 4 {
        return Err(Error::CorruptHeader);
    }
    let kv_size = (u16::from_le_bytes([header[0], header[1]]) & KV_SIZE_MASK) as usize;
    let key_len = u16::from_le_bytes([header[2], header[3]]) as usize;
    Ok(COMPLETE_HEADER_LEN + key_len + kv_size)
}

/// Encodes a full row. `values` must provide one entry per field, in id order.
pub fn encode_complete(
    schema: &SchemaDef,
    key: &HierKey,
    values: &[Vec<u8>],
) -> Result<CompleteRowImage> {
    if values.len() < schema.fields.len() {
        return Err(Error::MissingFieldValue(values.len() as u16));
    }
    let key_bytes = key.encode();
    let mut fixed = Vec::with_capacity(schema.fixed_region_size as usize);
    let mut var_region = Vec::new();
    let fixed_start = COMPLETE_HEADER_LEN + key_bytes.len();
    let var_start = fixed_start + schema.fixed_region_size as usize;

    for (id, field) in schema.fields.iter().enumerate() {
        let value = &values[id];
        match field.kind {
            FieldKind::Fixed => {
                if value.len() != field.size as usize {
                    return Err(Error::FixedSizeMismatch {
                        field: id as u16,
                        expected: field.size as usize,
                        actual: value.len(),
                    });
                }
                fixed.extend_from_slice(value);
            }
            FieldKind::Variable => {
                if value.len() > u16::MAX as usize {
                    return Err(Error::RowTooLarge(value.len()));
                }
                let rel = (var_start + var_region.len()) as u64;
                make_var_head(value, rel).encode_into(&mut fixed);
                if value.len() > INLINE_MAX {
                    var_region.extend_from_slice(value);
                }
            }
        }
    }
    debug_assert_eq!(fixed.len(), schema.fixed_region_size as usize);

    let kv_size = fixed.len() + var_region.len();
    if kv_size > KV_SIZE_MASK as usize {
        return Err(Error::RowTooLarge(kv_size));
    }
    let mut bytes = Vec::with_capacity(COMPLETE_HEADER_LEN + key_bytes.len() + kv_size);
    bytes.extend_from_slice(&(kv_size as u16).to_le_bytes());
    bytes.extend_from_slice(&(key_bytes.len() as u16).to_le_bytes());
    bytes.extend_from_slice(&key_bytes);
    bytes.extend_from_slice(&fixed);
    bytes.extend_from_slice(&var_region);
    Ok(CompleteRowImage { bytes })
}

/// Inverse of [`encode_complete`]; returns values in field-id order.
pub fn decode_complete(bytes: &[u8], schema: &SchemaDef) -> Result<Vec<Vec<u8>>> {
    let image = validate_complete(bytes, schema)?;
    if image.invalid() {
        return Err(Error::InvalidRow);
    }
    let mut values = Vec::with_capacity(schema.fields.len());
    for id in 0..schema.field_count() {
        values.push(extract_field_complete(bytes, schema, id)?);
    }
    Ok(values)
}

/// Structural checks shared by decode and the recovery scan. Does not reject
/// invalid-flagged rows.
pub fn validate_complete(bytes: &[u8], schema: &SchemaDef) -> Result<CompleteRowImage> {
    if bytes.len() < COMPLETE_HEADER_LEN {
        return Err(Error::CorruptHeader);
    }
    let image = CompleteRowImage {
        bytes: bytes.to_vec(),
    };
    if (image.kv_size() as u32) < schema.fixed_region_size {
        return Err(Error::CorruptHeader);
    }
    if bytes.len() != image.total_len() {
        return Err(Error::CorruptHeader);
    }
    Ok(image)
}

/// Reads one field out of a complete row image.
pub fn extract_field_complete(bytes: &[u8], schema: &SchemaDef, id: u16) -> Result<Vec<u8>> {
    let (offset, len, kind) = schema.field_slice(id)?;
    let key_len = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    let fixed_start = COMPLETE_HEADER_LEN + key_len;
    let slice = bytes
        .get(fixed_start + offset as usize..fixed_start + (offset + len) as usize)
        .ok_or(Error::CorruptHeader)?;
    match kind {
        FieldKind::Fixed => Ok(slice.to_vec()),
        FieldKind::Variable => {
            let head = VarHead::parse(slice)?;
            if head.is_inline() {
                Ok(head.inline_content().to_vec())
            } else {
                let start = head.content_offset() as usize;
                bytes
                    .get(start..start + head.size as usize)
                    .map(|s| s.to_vec())
                    .ok_or(Error::CorruptHeader)
            }
        }
    }
}

/// Encoded delta row (DLog entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRowImage {
    pub bytes: Vec<u8>,
}

impl DeltaRowImage {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        DeltaRowImage { bytes }
    }

    pub fn meta(&self) -> Result<DeltaMeta> {
        parse_delta_meta(&self.bytes)
    }
}

/// Parsed fixed-size prefix of a delta row; readable without the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaMeta {
    pub meta_size: u16,
    pub field_ids: Vec<u16>,
    pub chain_ptr: u64,
}

impl DeltaMeta {
    pub fn payload_offset(&self) -> usize {
        self.meta_size as usize
    }
}

/// Byte offset of the chain pointer within a delta row.
pub fn delta_chain_ptr_offset(field_count: usize) -> usize {
    4 + 2 * field_count
}

pub fn parse_delta_meta(bytes: &[u8]) -> Result<DeltaMeta> {
    if bytes.len() < 4 {
        return Err(Error::CorruptHeader);
    }
    let meta_size = u16::from_le_bytes([bytes[0], bytes[1]]);
    let fields_count = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    let expect = 12 + 2 * fields_count;
    if meta_size as usize != expect || bytes.len() < expect {
        return Err(Error::CorruptHeader);
    }
    let mut field_ids = Vec::with_capacity(fields_count);
    let mut prev: Option<u16> = None;
    for i in 0..fields_count {
        let id = u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]);
        if let Some(p) = prev {
            if id <= p {
                return Err(Error::CorruptHeader);
            }
        }
        prev = Some(id);
        field_ids.push(id);
    }
    let ptr_at = delta_chain_ptr_offset(fields_count);
    let chain_ptr = u64::from_le_bytes(bytes[ptr_at..ptr_at + 8].try_into().unwrap());
    Ok(DeltaMeta {
        meta_size,
        field_ids,
        chain_ptr,
    })
}

/// Encodes a partial update. Field ids are sorted and deduplicated (the last
/// value supplied for a duplicated id wins).
pub fn encode_delta(
    schema: &SchemaDef,
    updates: &[(u16, Vec<u8>)],
    prev: u64,
) -> Result<DeltaRowImage> {
    if updates.is_empty() {
        return Err(Error::EmptyFieldSet);
    }
    if prev == NULL_ADDR {
        return Err(Error::NullChainPointer);
    }
    let mut sorted: BTreeMap<u16, &Vec<u8>> = BTreeMap::new();
    for (id, value) in updates {
        schema.field(*id)?;
        sorted.insert(*id, value);
    }

    let meta_size = 12 + 2 * sorted.len();
    let mut bytes = Vec::with_capacity(meta_size + 64);
    bytes.extend_from_slice(&(meta_size as u16).to_le_bytes());
    bytes.extend_from_slice(&(sorted.len() as u16).to_le_bytes());
    for id in sorted.keys() {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    bytes.extend_from_slice(&prev.to_le_bytes());

    for (id, value) in &sorted {
        let field = schema.field(*id)?;
        match field.kind {
            FieldKind::Fixed => {
                if value.len() != field.size as usize {
                    return Err(Error::FixedSizeMismatch {
                        field: *id,
                        expected: field.size as usize,
                        actual: value.len(),
                    });
                }
                bytes.extend_from_slice(value);
            }
            FieldKind::Variable => {
                if value.len() > u16::MAX as usize {
                    return Err(Error::RowTooLarge(value.len()));
                }
                // Out-of-line content sits right after its head; the slot
                // stores the row-relative offset of that position.
                let rel = (bytes.len() + 12) as u64;
                make_var_head(value, rel).encode_into(&mut bytes);
                if value.len() > INLINE_MAX {
                    bytes.extend_from_slice(value);
                }
            }
        }
    }
    if bytes.len() > u16::MAX as usize {
        return Err(Error::RowTooLarge(bytes.len()));
    }
    Ok(DeltaRowImage { bytes })
}

/// Walks a delta payload and returns its byte length.
pub fn delta_payload_len(schema: &SchemaDef, meta: &DeltaMeta, payload: &[u8]) -> Result<usize> {
    let mut pos = 0usize;
    for id in &meta.field_ids {
        let field = schema.field(*id)?;
        match field.kind {
            FieldKind::Fixed => pos += field.size as usize,
            FieldKind::Variable => {
                let head = VarHead::parse(payload.get(pos..).ok_or(Error::CorruptHeader)?)?;
                pos += 12;
                if !head.is_inline() {
                    pos += head.size as usize;
                }
            }
        }
        if pos > payload.len() {
            return Err(Error::CorruptHeader);
        }
    }
    Ok(pos)
}

/// Decodes the `(field_id, value)` pairs carried by a delta row.
pub fn decode_delta(bytes: &[u8], schema: &SchemaDef) -> Result<(DeltaMeta, FieldValues)> {
    let meta = parse_delta_meta(bytes)?;
    let payload = &bytes[meta.payload_offset()..];
    let mut values = Vec::with_capacity(meta.field_ids.len());
    let mut pos = 0usize;
    for id in &meta.field_ids {
        let field = schema.field(*id)?;
        match field.kind {
            FieldKind::Fixed => {
                let end = pos + field.size as usize;
                let slice = payload.get(pos..end).ok_or(Error::CorruptHeader)?;
                values.push((*id, slice.to_vec()));
                pos = end;
            }
            FieldKind::Variable => {
                let head = VarHead::parse(payload.get(pos..).ok_or(Error::CorruptHeader)?)?;
                pos += 12;
                if head.is_inline() {
                    values.push((*id, head.inline_content().to_vec()));
                } else {
                    let end = pos + head.size as usize;
                    let slice = payload.get(pos..end).ok_or(Error::CorruptHeader)?;
                    values.push((*id, slice.to_vec()));
                    pos = end;
                }
            }
        }
    }
    let expected = delta_payload_len(schema, &meta, payload)?;
    if payload.len() != expected {
        return Err(Error::CorruptHeader);
    }
    Ok((meta, values))
}

/// A decoded row of either kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowImage {
    Complete(Vec<u8>),
    Delta(Vec<u8>),
}

/// Returns the field bytes if the image carries the field; `None` when a
/// delta image lacks it.
pub fn extract_field(image: &RowImage, schema: &SchemaDef, id: u16) -> Result<Option<Vec<u8>>> {
    schema.field(id)?;
    match image {
        RowImage::Complete(bytes) => extract_field_complete(bytes, schema, id).map(Some),
        RowImage::Delta(bytes) => {
            let (meta, values) = decode_delta(bytes, schema)?;
            let _ = meta;
            Ok(values.into_iter().find(|(fid, _)| *fid == id).map(|(_, v)| v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FieldDef, SchemaRegistry};

    fn student() -> SchemaDef {
        let reg = SchemaRegistry::new();
        let s = reg
            .create_schema(
                "student",
                vec![
                    FieldDef::variable("name"),
                    FieldDef::fixed("age", 8),
                    FieldDef::fixed("score", 8),
                ],
            )
            .unwrap();
        (*s).clone()
    }

    fn key() -> HierKey {
        HierKey::new(0, b"stu-1".to_vec())
    }

    #[test]
    fn short_variable_content_stays_inline() {
        let s = student();
        let values = vec![b"Bob".to_vec(), vec![1u8; 8], vec![2u8; 8]];
        let image = encode_complete(&s, &key(), &values).unwrap();
        // No var region: content size equals the fixed region.
        assert_eq!(image.kv_size() as u32, s.fixed_region_size);
        assert_eq!(decode_complete(&image.bytes, &s).unwrap(), values);
    }

    #[test]
    fn long_variable_content_goes_out_of_line() {
        let s = student();
        let long = vec![7u8; 100];
        let values = vec![long.clone(), vec![1u8; 8], vec![2u8; 8]];
        let image = encode_complete(&s, &key(), &values).unwrap();
        assert_eq!(image.kv_size() as usize, 28 + 100);
        assert_eq!(decode_complete(&image.bytes, &s).unwrap(), values);
        let extracted = extract_field_complete(&image.bytes, &s, 0).unwrap();
        assert_eq!(extracted, long);
    }

    #[test]
    fn inline_boundary_is_eight_bytes() {
        let s = student();
        let exactly8 = vec![9u8; 8];
        let image = encode_complete(&s, &key(), &[exactly8.clone(), vec![0; 8], vec![0; 8]])
            .unwrap();
        assert_eq!(image.kv_size() as u32, s.fixed_region_size);
        let nine = vec![9u8; 9];
        let image9 =
            encode_complete(&s, &key(), &[nine.clone(), vec![0; 8], vec![0; 8]]).unwrap();
        assert_eq!(image9.kv_size() as u32, s.fixed_region_size + 9);
        assert_eq!(
            extract_field_complete(&image9.bytes, &s, 0).unwrap(),
            nine
        );
    }

    #[test]
    fn fixed_only_schema_has_exact_region() {
        let reg = SchemaRegistry::new();
        let t = reg
            .create_schema("t", vec![FieldDef::fixed("a", 4), FieldDef::fixed("b", 4)])
            .unwrap();
        let k = HierKey::new(t.schema_id, b"k".to_vec());
        let image = encode_complete(&t, &k, &[vec![1; 4], vec![2; 4]]).unwrap();
        assert_eq!(image.kv_size(), 8);
        assert_eq!(image.bytes.len(), 4 + k.encoded_len() + 8);
    }

    #[test]
    fn decode_rejects_bad_rows() {
        let s = student();
        let values = vec![b"Bob".to_vec(), vec![1u8; 8], vec![2u8; 8]];
        let mut image = encode_complete(&s, &key(), &values).unwrap();
        // Set the invalid bit.
        image.bytes[1] |= 0x80;
        assert!(matches!(
            decode_complete(&image.bytes, &s),
            Err(Error::InvalidRow)
        ));
        // kv_size below the fixed region size.
        let mut small = encode_complete(&s, &key(), &values).unwrap();
        small.bytes[0] = 4;
        small.bytes[1] = 0;
        assert!(matches!(
            decode_complete(&small.bytes, &s),
            Err(Error::CorruptHeader)
        ));
    }

    #[test]
    fn missing_and_mismatched_values_rejected() {
        let s = student();
        assert!(matches!(
            encode_complete(&s, &key(), &[b"x".to_vec()]),
            Err(Error::MissingFieldValue(_))
        ));
        assert!(matches!(
            encode_complete(&s, &key(), &[b"x".to_vec(), vec![0; 7], vec![0; 8]]),
            Err(Error::FixedSizeMismatch { .. })
        ));
    }

    #[test]
    fn delta_field_array_sorted_regardless_of_input_order() {
        let s = student();
        let a = encode_delta(
            &s,
            &[(2, vec![5u8; 8]), (0, b"Zed".to_vec())],
            0x1000,
        )
        .unwrap();
        let b = encode_delta(
            &s,
            &[(0, b"Zed".to_vec()), (2, vec![5u8; 8])],
            0x1000,
        )
        .unwrap();
        assert_eq!(a.bytes, b.bytes);
        let meta = a.meta().unwrap();
        assert_eq!(meta.field_ids, vec![0, 2]);
        assert_eq!(meta.chain_ptr, 0x1000);
        assert_eq!(meta.meta_size as usize, 12 + 2 * 2);
    }

    #[test]
    fn delta_round_trip_single_fixed_field() {
        let s = student();
        let image = encode_delta(&s, &[(2, vec![5u8; 8])], 0x40).unwrap();
        let (meta, values) = decode_delta(&image.bytes, &s).unwrap();
        assert_eq!(meta.field_ids, vec![2]);
        assert_eq!(values, vec![(2, vec![5u8; 8])]);
        // 8-byte payload after the meta.
        assert_eq!(image.bytes.len(), meta.meta_size as usize + 8);
    }

    #[test]
    fn delta_rejects_empty_and_null_chain() {
        let s = student();
        assert!(matches!(
            encode_delta(&s, &[], 0x40),
            Err(Error::EmptyFieldSet)
        ));
        assert!(matches!(
            encode_delta(&s, &[(2, vec![5u8; 8])], NULL_ADDR),
            Err(Error::NullChainPointer)
        ));
    }

    #[test]
    fn extract_field_from_delta_reports_absent() {
        let s = student();
        let image = encode_delta(
            &s,
            &[(0, b"Amy".to_vec()), (2, vec![1u8; 8])],
            0x40,
        )
        .unwrap();
        let row = RowImage::Delta(image.bytes);
        assert_eq!(
            extract_field(&row, &s, 0).unwrap(),
            Some(b"Amy".to_vec())
        );
        assert_eq!(extract_field(&row, &s, 1).unwrap(), None);
        assert!(matches!(
            extract_field(&row, &s, 9),
            Err(Error::FieldIdOutOfRange(9))
        ));
    }

    #[test]
    fn delta_with_long_variable_field_round_trips() {
        let s = student();
        let long = vec![3u8; 77];
        let image = encode_delta(&s, &[(0, long.clone())], 0x80).unwrap();
        let (_, values) = decode_delta(&image.bytes, &s).unwrap();
        assert_eq!(values, vec![(0, long)]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_schema() -> impl Strategy<Value = SchemaDef> {
            proptest::collection::vec(
                prop_oneof![
                    (1u32..32).prop_map(Some),  // fixed with size
                    Just(None),                 // variable
                ],
                1..8,
            )
            .prop_map(|kinds| {
                let fields = kinds
                    .into_iter()
                    .enumerate()
                    .map(|(i, k)| match k {
                        Some(size) => FieldDef::fixed(&format!("f{i}"), size),
                        None => FieldDef::variable(&format!("f{i}")),
                    })
                    .collect();
                let reg = SchemaRegistry::new();
                (*reg.create_schema("p", fields).unwrap()).clone()
            })
        }

        fn arb_values(schema: &SchemaDef) -> impl Strategy<Value = Vec<Vec<u8>>> {
            let strategies: Vec<BoxedStrategy<Vec<u8>>> = schema
                .fields
                .iter()
                .map(|f| match f.kind {
                    FieldKind::Fixed => proptest::collection::vec(any::<u8>(), f.size as usize)
                        .boxed(),
                    FieldKind::Variable => proptest::collection::vec(any::<u8>(), 0..64).boxed(),
                })
                .collect();
            strategies
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn complete_round_trip((schema, values) in arb_schema().prop_flat_map(|s| {
                let vals = arb_values(&s);
                (Just(s), vals)
            })) {
                let key = HierKey::new(schema.schema_id, b"pk".to_vec());
                let image = encode_complete(&schema, &key, &values).unwrap();
                prop_assert!(!image.invalid());
                prop_assert_eq!(image.key().unwrap(), key);
                let decoded = decode_complete(&image.bytes, &schema).unwrap();
                prop_assert_eq!(decoded, values);
                // Canonical: re-encoding produces identical bytes.
                let key2 = HierKey::new(schema.schema_id, b"pk".to_vec());
                let again = encode_complete(&schema, &key2, &decode_complete(&image.bytes, &schema).unwrap()).unwrap();
                prop_assert_eq!(again.bytes, image.bytes);
            }

            #[test]
            fn delta_round_trip((schema, values, mask) in arb_schema().prop_flat_map(|s| {
                let vals = arb_values(&s);
                let n = s.fields.len();
                (Just(s), vals, proptest::collection::vec(any::<bool>(), n))
            })) {
                let updates: Vec<(u16, Vec<u8>)> = values
                    .iter()
                    .enumerate()
                    .zip(mask.iter())
                    .filter(|(_, keep)| **keep)
                    .map(|((id, v), _)| (id as u16, v.clone()))
                    .collect();
                prop_assume!(!updates.is_empty());
                let image = encode_delta(&schema, &updates, 0x100).unwrap();
                let (meta, decoded) = decode_delta(&image.bytes, &schema).unwrap();
                prop_assert_eq!(meta.chain_ptr, 0x100);
                prop_assert_eq!(decoded, updates);
            }
        }
    }
}
