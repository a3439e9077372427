//! Crate-wide error type.

use thiserror::Error;

/// Address value reserved to mean "no address".
pub const NULL_ADDR: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum Error {
    // Schema registry
    #[error("schema name already registered: {0}")]
    DuplicateSchemaName(String),
    #[error("duplicate field name in schema: {0}")]
    DuplicateFieldName(String),
    #[error("fixed field must have size >= 1: {0}")]
    ZeroSizeFixedField(String),
    #[error("schema must declare at least one field")]
    ZeroFieldSchema,
    #[error("unknown schema id: {0}")]
    UnknownSchema(u32),
    #[error("unknown field name: {0}")]
    UnknownFieldName(String),
    #[error("field id out of range: {0}")]
    FieldIdOutOfRange(u16),
    #[error("schema region full")]
    SchemaRegionFull,
    #[error("schema registry limit reached ({0})")]
    SchemaLimitReached(usize),
    #[error("schema definitions are immutable once registered")]
    SchemaImmutable,

    // Record codec
    #[error("fixed field {field} expects {expected} bytes, got {actual}")]
    FixedSizeMismatch {
        field: u16,
        expected: usize,
        actual: usize,
    },
    #[error("missing value for field {0}")]
    MissingFieldValue(u16),
    #[error("row too large: {0} bytes exceeds the 15-bit size budget")]
    RowTooLarge(usize),
    #[error("delta update must name at least one field")]
    EmptyFieldSet,
    #[error("delta chain pointer must not be NULL_ADDR")]
    NullChainPointer,
    #[error("corrupt row header")]
    CorruptHeader,
    #[error("row is marked invalid")]
    InvalidRow,

    // Persistent-memory backend
    #[error("access out of range: [{addr}, {addr}+{len}) exceeds capacity {capacity}")]
    OutOfRange { addr: u64, len: usize, capacity: u64 },
    #[error("flush address {0} is not 64-byte aligned")]
    UnalignedFlush(u64),
    #[error("backing file: {0}")]
    Io(#[from] std::io::Error),

    // Persistent log
    #[error("log region capacity exhausted")]
    CapacityExhausted,
    #[error("delta log of owning chunk {0} is full")]
    DlogFull(u32),
    #[error("address {0:#x} does not name a stored row")]
    BadAddress(u64),
    #[error("chunk {0} is busy (concurrent merge or gc)")]
    ChunkBusy(u32),
    #[error("log region corrupt: {0}")]
    CorruptRegion(&'static str),

    // Index / engine
    #[error("key not present")]
    KeyAbsent,
    #[error("merge item list is not sorted by address")]
    UnsortedInput,

    // Benchmark
    #[error("workload mix must sum to 100%")]
    InvalidMix,
    #[error("bad config entry: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
