//! C ABI for the focus storage engine.
//!
//! The database is an opaque handle; every function returns a `FocusStatus`
//! code and writes results through out-parameters. Byte buffers returned to
//! the caller are allocated by this library and must be released with
//! `focus_values_free` / `focus_rows_free`. All functions are safe to call
//! from multiple threads on the same handle.

use std::ffi::{c_char, CStr};
use std::ptr;

use focus::{Engine, EngineConfig, Error, FieldDef, HierKey};

/// Opaque database handle.
pub struct FocusDb {
    engine: Engine,
}

/// Status codes returned by every API call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownSchema = 3,
    UnknownField = 4,
    KeyAbsent = 5,
    DuplicateSchema = 6,
    InvalidSchema = 7,
    SizeMismatch = 8,
    CapacityExhausted = 9,
    RowTooLarge = 10,
    Corrupt = 11,
    Io = 12,
    Config = 13,
    Internal = 14,
}

fn status_of(err: &Error) -> FocusStatus {
    match err {
        Error::DuplicateSchemaName(_) => FocusStatus::DuplicateSchema,
        Error::DuplicateFieldName(_)
        | Error::ZeroSizeFixedField(_)
        | Error::ZeroFieldSchema
        | Error::SchemaImmutable => FocusStatus::InvalidSchema,
        Error::UnknownSchema(_) => FocusStatus::UnknownSchema,
        Error::UnknownFieldName(_) | Error::FieldIdOutOfRange(_) => FocusStatus::UnknownField,
        Error::KeyAbsent => FocusStatus::KeyAbsent,
        Error::FixedSizeMismatch { .. }
        | Error::MissingFieldValue(_)
        | Error::EmptyFieldSet => FocusStatus::SizeMismatch,
        Error::RowTooLarge(_) => FocusStatus::RowTooLarge,
        Error::CapacityExhausted | Error::DlogFull(_) | Error::SchemaRegionFull => {
            FocusStatus::CapacityExhausted
        }
        Error::CorruptHeader
        | Error::InvalidRow
        | Error::CorruptRegion(_)
        | Error::BadAddress(_) => FocusStatus::Corrupt,
        Error::Io(_) => FocusStatus::Io,
        Error::BadConfig(_) | Error::InvalidMix => FocusStatus::Config,
        _ => FocusStatus::Internal,
    }
}

/// Human-readable description of a status code; static storage.
#[no_mangle]
pub extern "C" fn focus_status_message(status: FocusStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        FocusStatus::Ok => b"ok\0",
        FocusStatus::NullPointer => b"null pointer argument\0",
        FocusStatus::InvalidUtf8 => b"invalid utf-8 in string argument\0",
        FocusStatus::UnknownSchema => b"unknown schema id\0",
        FocusStatus::UnknownField => b"unknown field\0",
        FocusStatus::KeyAbsent => b"key not present\0",
        FocusStatus::DuplicateSchema => b"schema name already registered\0",
        FocusStatus::InvalidSchema => b"invalid schema definition\0",
        FocusStatus::SizeMismatch => b"value count or size mismatch\0",
        FocusStatus::CapacityExhausted => b"log capacity exhausted\0",
        FocusStatus::RowTooLarge => b"row exceeds size budget\0",
        FocusStatus::Corrupt => b"corrupt data\0",
        FocusStatus::Io => b"io error\0",
        FocusStatus::Config => b"bad configuration\0",
        FocusStatus::Internal => b"internal error\0",
    };
    s.as_ptr() as *const c_char
}

/// Open options. Zeroed fields fall back to defaults; `config_path` may be
/// null or point to a `key = value` config file.
#[repr(C)]
pub struct FocusOptions {
    pub capacity_bytes: u64,
    pub cache_capacity_bytes: u64,
    pub restore_threshold: u32,
    /// 0 = no background worker (caller drives maintenance), 1 = spawn one.
    pub background: u8,
    pub config_path: *const c_char,
}

/// Fills `out` with default options.
///
/// # Safety
/// `out` must point to writable memory for one `FocusOptions`.
#[no_mangle]
pub unsafe extern "C" fn focus_options_default(out: *mut FocusOptions) -> FocusStatus {
    if out.is_null() {
        return FocusStatus::NullPointer;
    }
    let defaults = EngineConfig::default();
    unsafe {
        (*out).capacity_bytes = defaults.capacity;
        (*out).cache_capacity_bytes = defaults.cache.capacity_bytes;
        (*out).restore_threshold = defaults.restore_threshold;
        (*out).background = 1;
        (*out).config_path = ptr::null();
    }
    FocusStatus::Ok
}

/// Opens a database and writes the handle to `out_db`.
///
/// # Safety
/// `options` may be null (defaults). `out_db` must be a valid pointer. Any
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn focus_open(
    options: *const FocusOptions,
    out_db: *mut *mut FocusDb,
) -> FocusStatus {
    if out_db.is_null() {
        return FocusStatus::NullPointer;
    }
    let mut cfg = EngineConfig::default();
    if !options.is_null() {
        let opts = unsafe { &*options };
        if opts.capacity_bytes > 0 {
            cfg.capacity = opts.capacity_bytes;
        }
        if opts.cache_capacity_bytes > 0 {
            cfg.cache.capacity_bytes = opts.cache_capacity_bytes;
        }
        if opts.restore_threshold > 0 {
            cfg.restore_threshold = opts.restore_threshold;
        }
        cfg.background = opts.background != 0;
        if !opts.config_path.is_null() {
            let path = match unsafe { CStr::from_ptr(opts.config_path) }.to_str() {
                Ok(p) => p,
                Err(_) => return FocusStatus::InvalidUtf8,
            };
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(_) => return FocusStatus::Io,
            };
            if cfg.apply_file(&text).is_err() {
                return FocusStatus::Config;
            }
        }
    }
    match Engine::open(cfg) {
        Ok(engine) => {
            unsafe { *out_db = Box::into_raw(Box::new(FocusDb { engine })) };
            FocusStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Closes a handle opened by `focus_open`; null is a no-op.
///
/// # Safety
/// `db` must have come from `focus_open` and not been closed before.
#[no_mangle]
pub unsafe extern "C" fn focus_close(db: *mut FocusDb) {
    if !db.is_null() {
        drop(unsafe { Box::from_raw(db) });
    }
}

/// One field of a schema definition: name, kind (0 fixed / 1 variable), and
/// the byte size for fixed fields.
#[repr(C)]
pub struct FocusFieldDef {
    pub name: *const c_char,
    pub kind: u8,
    pub size: u32,
}

/// Registers a schema; writes the fresh schema id to `out_schema_id`.
///
/// # Safety
/// `name` must be NUL-terminated; `fields` must point to `field_count`
/// valid definitions with NUL-terminated names.
#[no_mangle]
pub unsafe extern "C" fn focus_schema_create(
    db: *mut FocusDb,
    name: *const c_char,
    fields: *const FocusFieldDef,
    field_count: usize,
    out_schema_id: *mut u32,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if name.is_null() || (fields.is_null() && field_count > 0) || out_schema_id.is_null() {
        return FocusStatus::NullPointer;
    }
    let Ok(name) = unsafe { CStr::from_ptr(name) }.to_str() else {
        return FocusStatus::InvalidUtf8;
    };
    let raw = unsafe { std::slice::from_raw_parts(fields, field_count) };
    let mut defs = Vec::with_capacity(field_count);
    for f in raw {
        if f.name.is_null() {
            return FocusStatus::NullPointer;
        }
        let Ok(fname) = unsafe { CStr::from_ptr(f.name) }.to_str() else {
            return FocusStatus::InvalidUtf8;
        };
        defs.push(match f.kind {
            0 => FieldDef::fixed(fname, f.size),
            _ => FieldDef::variable(fname),
        });
    }
    match db.engine.create_schema(name, defs) {
        Ok(schema) => {
            unsafe { *out_schema_id = schema.schema_id };
            FocusStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Borrowed byte slice passed into the API.
#[repr(C)]
pub struct FocusSlice {
    pub ptr: *const u8,
    pub len: usize,
}

impl FocusSlice {
    unsafe fn as_bytes(&self) -> Option<&[u8]> {
        if self.ptr.is_null() && self.len > 0 {
            return None;
        }
        if self.len == 0 {
            return Some(&[]);
        }
        Some(unsafe { std::slice::from_raw_parts(self.ptr, self.len) })
    }
}

/// One field value owned by the library.
#[repr(C)]
pub struct FocusOwnedField {
    pub field_id: u16,
    pub ptr: *mut u8,
    pub len: usize,
}

/// A set of field values owned by the library; release with
/// `focus_values_free`.
#[repr(C)]
pub struct FocusOwnedValues {
    pub fields: *mut FocusOwnedField,
    pub len: usize,
}

/// Leaks a boxed slice to the caller; paired with [`reclaim_slice`]. Boxed
/// slices have capacity exactly equal to their length, so reconstruction
/// for deallocation is exact.
fn leak_slice<T>(boxed: Box<[T]>) -> (*mut T, usize) {
    let len = boxed.len();
    (Box::into_raw(boxed) as *mut T, len)
}

unsafe fn reclaim_slice<T>(ptr: *mut T, len: usize) {
    if !ptr.is_null() {
        drop(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) });
    }
}

fn values_into_owned(values: Vec<(u16, Vec<u8>)>) -> FocusOwnedValues {
    let fields: Box<[FocusOwnedField]> = values
        .into_iter()
        .map(|(id, v)| {
            let (ptr, len) = leak_slice(v.into_boxed_slice());
            FocusOwnedField {
                field_id: id,
                ptr,
                len,
            }
        })
        .collect();
    let (fields, len) = leak_slice(fields);
    FocusOwnedValues { fields, len }
}

unsafe fn drop_owned_values(values: &mut FocusOwnedValues) {
    if values.fields.is_null() {
        return;
    }
    let fields =
        unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(values.fields, values.len)) };
    for f in fields.iter() {
        unsafe { reclaim_slice(f.ptr, f.len) };
    }
    values.fields = ptr::null_mut();
    values.len = 0;
}

/// Releases buffers returned by `focus_get`.
///
/// # Safety
/// `values` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn focus_values_free(values: *mut FocusOwnedValues) {
    if let Some(values) = unsafe { values.as_mut() } {
        unsafe { drop_owned_values(values) };
    }
}

unsafe fn make_key(schema_id: u32, key: FocusSlice) -> Option<HierKey> {
    let bytes = unsafe { key.as_bytes() }?;
    Some(HierKey::new(schema_id, bytes.to_vec()))
}

/// Inserts or overwrites a record. `values` holds one slice per field, in
/// field-id order.
///
/// # Safety
/// All slices must reference `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn focus_put(
    db: *mut FocusDb,
    schema_id: u32,
    key: FocusSlice,
    values: *const FocusSlice,
    value_count: usize,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if values.is_null() && value_count > 0 {
        return FocusStatus::NullPointer;
    }
    let Some(key) = (unsafe { make_key(schema_id, key) }) else {
        return FocusStatus::NullPointer;
    };
    let raw = unsafe { std::slice::from_raw_parts(values, value_count) };
    let mut owned = Vec::with_capacity(value_count);
    for v in raw {
        match unsafe { v.as_bytes() } {
            Some(bytes) => owned.push(bytes.to_vec()),
            None => return FocusStatus::NullPointer,
        }
    }
    match db.engine.put_full(&key, &owned) {
        Ok(()) => FocusStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Updates the given fields of an existing record.
///
/// # Safety
/// `field_ids` and `values` must each hold `count` valid entries.
#[no_mangle]
pub unsafe extern "C" fn focus_update(
    db: *mut FocusDb,
    schema_id: u32,
    key: FocusSlice,
    field_ids: *const u16,
    values: *const FocusSlice,
    count: usize,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if (field_ids.is_null() || values.is_null()) && count > 0 {
        return FocusStatus::NullPointer;
    }
    let Some(key) = (unsafe { make_key(schema_id, key) }) else {
        return FocusStatus::NullPointer;
    };
    let ids = unsafe { std::slice::from_raw_parts(field_ids, count) };
    let vals = unsafe { std::slice::from_raw_parts(values, count) };
    let mut updates = Vec::with_capacity(count);
    for (id, v) in ids.iter().zip(vals) {
        match unsafe { v.as_bytes() } {
            Some(bytes) => updates.push((*id, bytes.to_vec())),
            None => return FocusStatus::NullPointer,
        }
    }
    match db.engine.update_partial(&key, &updates) {
        Ok(()) => FocusStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Reads fields of a record. `field_count == 0` reads every field.
///
/// # Safety
/// `out_values` must be valid; `field_ids` must hold `field_count` entries
/// when non-zero.
#[no_mangle]
pub unsafe extern "C" fn focus_get(
    db: *mut FocusDb,
    schema_id: u32,
    key: FocusSlice,
    field_ids: *const u16,
    field_count: usize,
    out_values: *mut FocusOwnedValues,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if out_values.is_null() || (field_ids.is_null() && field_count > 0) {
        return FocusStatus::NullPointer;
    }
    let Some(key) = (unsafe { make_key(schema_id, key) }) else {
        return FocusStatus::NullPointer;
    };
    let result = if field_count == 0 {
        db.engine.read_full(&key).map(|dense| {
            dense
                .into_iter()
                .enumerate()
                .map(|(id, v)| (id as u16, v))
                .collect::<Vec<_>>()
        })
    } else {
        let ids = unsafe { std::slice::from_raw_parts(field_ids, field_count) };
        db.engine.read_partial(&key, ids)
    };
    match result {
        Ok(values) => {
            unsafe { *out_values = values_into_owned(values) };
            FocusStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Deletes a record; succeeds whether or not the key exists.
///
/// # Safety
/// `key` must reference readable bytes.
#[no_mangle]
pub unsafe extern "C" fn focus_del(
    db: *mut FocusDb,
    schema_id: u32,
    key: FocusSlice,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    let Some(key) = (unsafe { make_key(schema_id, key) }) else {
        return FocusStatus::NullPointer;
    };
    match db.engine.del(&key) {
        Ok(()) => FocusStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// One scanned row: primary key plus its field values.
#[repr(C)]
pub struct FocusOwnedRow {
    pub key_ptr: *mut u8,
    pub key_len: usize,
    pub values: FocusOwnedValues,
}

/// Scan results owned by the library; release with `focus_rows_free`.
#[repr(C)]
pub struct FocusOwnedRows {
    pub rows: *mut FocusOwnedRow,
    pub len: usize,
}

/// Key-ordered scan of up to `limit` records starting at `start_key`.
/// `field_count == 0` reads every field.
///
/// # Safety
/// Pointer arguments must be valid as for `focus_get`.
#[no_mangle]
pub unsafe extern "C" fn focus_scan(
    db: *mut FocusDb,
    schema_id: u32,
    start_key: FocusSlice,
    field_ids: *const u16,
    field_count: usize,
    limit: usize,
    out_rows: *mut FocusOwnedRows,
) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if out_rows.is_null() || (field_ids.is_null() && field_count > 0) {
        return FocusStatus::NullPointer;
    }
    let Some(start) = (unsafe { make_key(schema_id, start_key) }) else {
        return FocusStatus::NullPointer;
    };
    let wanted = if field_count == 0 {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(field_ids, field_count) })
    };
    match db.engine.scan(&start, wanted, limit) {
        Ok(rows) => {
            let owned: Box<[FocusOwnedRow]> = rows
                .into_iter()
                .map(|(key, values)| {
                    let (key_ptr, key_len) = leak_slice(key.primary_key.into_boxed_slice());
                    FocusOwnedRow {
                        key_ptr,
                        key_len,
                        values: values_into_owned(values),
                    }
                })
                .collect();
            let (rows, len) = leak_slice(owned);
            unsafe { *out_rows = FocusOwnedRows { rows, len } };
            FocusStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Releases buffers returned by `focus_scan`.
///
/// # Safety
/// `rows` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn focus_rows_free(rows: *mut FocusOwnedRows) {
    let Some(rows) = (unsafe { rows.as_mut() }) else {
        return;
    };
    if rows.rows.is_null() {
        return;
    }
    let owned =
        unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(rows.rows, rows.len)) };
    for row in owned.iter() {
        unsafe { reclaim_slice(row.key_ptr, row.key_len) };
        let mut values = FocusOwnedValues {
            fields: row.values.fields,
            len: row.values.len,
        };
        unsafe { drop_owned_values(&mut values) };
    }
    rows.rows = ptr::null_mut();
    rows.len = 0;
}

/// Backend and cache counters.
#[repr(C)]
#[derive(Debug, Default, Clone, Copy)]
pub struct FocusStats {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub cacheline_flushes: u64,
    pub fences: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub index_probes: u64,
}

/// Snapshots engine counters into `out`.
///
/// # Safety
/// `out` must point to writable memory for one `FocusStats`.
#[no_mangle]
pub unsafe extern "C" fn focus_stats(db: *mut FocusDb, out: *mut FocusStats) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    if out.is_null() {
        return FocusStatus::NullPointer;
    }
    let flush = db.engine.region().stats().snapshot();
    let engine = db.engine.stats();
    unsafe {
        *out = FocusStats {
            bytes_read: flush.bytes_read,
            bytes_written: flush.bytes_written,
            cacheline_flushes: flush.cacheline_flushes,
            fences: flush.fences,
            cache_hits: engine.cache_hits,
            cache_misses: engine.cache_misses,
            index_probes: engine.index_probes,
        }
    };
    FocusStatus::Ok
}

/// Runs one round of background maintenance on the calling thread; useful
/// when the handle was opened with `background = 0`.
///
/// # Safety
/// `db` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn focus_maintenance(db: *mut FocusDb) -> FocusStatus {
    let Some(db) = (unsafe { db.as_ref() }) else {
        return FocusStatus::NullPointer;
    };
    db.engine.maintenance_tick();
    FocusStatus::Ok
}
