//! FOCUS: a log-structured key-value storage engine with hierarchical,
//! schema-aware records.
//!
//! Records map to hierarchical KV pairs whose fields can be read and updated
//! independently. Full rows land in an append-only complete-row log; partial
//! updates append small delta rows chained to their predecessor and are
//! merged back in place asynchronously. An index-integrated cache keeps hot
//! rows in memory with per-schema admission and eviction. The persistence
//! backend emulates byte-addressable NVM with explicit flush/fence counters,
//! so I/O behavior is measurable without special hardware.

pub mod bench;
pub mod cache;
pub mod clock;
pub mod codec;
pub mod config;
pub mod counter;
pub mod error;
pub mod index;
pub mod mapping;
pub mod pmem;
pub mod plog;
pub mod schema;
pub mod store;
pub mod swim;

pub use clock::Clock;
pub use config::{CacheConfig, EngineConfig};
pub use error::{Error, Result, NULL_ADDR};
pub use index::Location;
pub use schema::{FieldDef, FieldKind, HierKey, SchemaDef};
pub use store::Store;
pub use swim::Engine;
