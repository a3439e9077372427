//! Two-layer persistent log: chunked complete-row extents (CLog) with a
//! delta extent (DLog) per chunk.
//!
//! Region layout: `[superblock][schema region][chunk extents...]`. The
//! superblock carries the magic `"FOCS"`, geometry, an allocation sequence
//! counter, and a chunk table; it is flushed and fenced on every chunk
//! allocation. Chunks are fixed-stride, so any log address maps back to its
//! owning chunk and extent arithmetically.
//!
//! Appends reserve space and persist under a per-chunk lock: the row bytes
//! are written, every covering line flushed, and one fence issued before the
//! address is handed out. That makes each append atomic under the crash
//! model (all lines pending on one thread, committed by one fence) and keeps
//! extents hole-free, which the recovery scan depends on: it walks each
//! extent from its base and stops at the first invalid or zero header,
//! knowing nothing acknowledged can live beyond it.
//!
//! Delta rows are framed `[u16 len][delta bytes]` inside the DLog. The frame
//! is log-private (addresses point at the delta bytes); it lets the scan step
//! over deltas whose chain pointers died with a crash mid-retry without
//! knowing their schema.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::codec::{
    self, complete_row_len_from_header, parse_delta_meta, CompleteRowImage, DeltaMeta,
    DeltaRowImage, VarHead,
};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::index::MAX_LOG_ADDR;
use crate::pmem::{PmemRegion, CACHELINE};
use crate::schema::{FieldKind, FieldValues, HierKey, SchemaDef, SchemaRegistry};

pub const MAGIC: &[u8; 4] = b"FOCS";
pub const FORMAT_VERSION: u32 = 1;

/// Reads the capacity recorded in a backing file's superblock, or `None`
/// when the file is missing, short, or not a formatted region.
pub fn stored_capacity(path: &std::path::Path) -> Result<Option<u64>> {
    use std::io::Read;
    let mut file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut header = [0u8; 16];
    match file.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &header[0..4] != MAGIC {
        return Ok(None);
    }
    Ok(Some(u64::from_le_bytes(header[8..16].try_into().unwrap())))
}

const SB_HEADER_LEN: u64 = 64;
const CHUNK_ENTRY_LEN: u64 = 16;

const CHUNK_ACTIVE: u32 = 1;

fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

/// Which extent of a chunk an address falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Clog,
    Dlog,
}

pub struct Chunk {
    pub id: u32,
    pub alloc_seq: u64,
    pub clog_base: u64,
    pub clog_end: u64,
    pub dlog_base: u64,
    pub dlog_end: u64,
    clog_cursor: AtomicU64,
    dlog_cursor: AtomicU64,
    live_bytes: AtomicU64,
    append_lock: Mutex<()>,
    gc_active: AtomicBool,
}

impl Chunk {
    pub fn live_bytes(&self) -> u64 {
        self.live_bytes.load(Ordering::Relaxed)
    }

    pub fn clog_used(&self) -> u64 {
        self.clog_cursor.load(Ordering::Acquire) - self.clog_base
    }

    pub fn dlog_used(&self) -> u64 {
        self.dlog_cursor.load(Ordering::Acquire) - self.dlog_base
    }

    pub fn capacity(&self) -> u64 {
        (self.clog_end - self.clog_base) + (self.dlog_end - self.dlog_base)
    }
}

struct Geometry {
    schema_base: u64,
    schema_size: u64,
    chunks_base: u64,
    clog_size: u64,
    dlog_size: u64,
    max_chunks: u32,
}

impl Geometry {
    fn derive(capacity: u64, clog_size: u64, dlog_size: u64, schema_size: u64) -> Result<Geometry> {
        let stride = clog_size + dlog_size;
        if capacity >= MAX_LOG_ADDR {
            return Err(Error::BadConfig("capacity must be below 2^56".into()));
        }
        let max_chunks_est = capacity / stride;
        let table_end = SB_HEADER_LEN + max_chunks_est * CHUNK_ENTRY_LEN;
        let schema_base = align_up(table_end, CACHELINE);
        let chunks_base = align_up(schema_base + schema_size, CACHELINE);
        if chunks_base + stride > capacity {
            return Err(Error::BadConfig("capacity too small for one chunk".into()));
        }
        let max_chunks = ((capacity - chunks_base) / stride) as u32;
        Ok(Geometry {
            schema_base,
            schema_size,
            chunks_base,
            clog_size,
            dlog_size,
            max_chunks,
        })
    }
}

pub struct PLog {
    region: Arc<PmemRegion>,
    geo: Geometry,
    chunks: RwLock<Vec<Option<Arc<Chunk>>>>,
    /// Guards chunk allocation and names the open chunk.
    alloc_lock: Mutex<u32>,
    alloc_seq: AtomicU64,
    schema_cursor: AtomicU64,
}

/// A complete row found by the recovery scan.
#[derive(Debug, Clone)]
pub struct RecoveredComplete {
    pub addr: u64,
    pub key: HierKey,
    pub invalid: bool,
    pub total_len: usize,
    /// `(chunk allocation sequence, offset)`: a global append clock.
    pub seq: (u64, u64),
}

/// A delta row found by the recovery scan; schema not yet resolved.
#[derive(Debug, Clone)]
pub struct RecoveredDelta {
    pub addr: u64,
    pub meta: DeltaMeta,
    pub frame_len: usize,
    pub seq: (u64, u64),
}

#[derive(Debug, Default)]
pub struct RecoveredRows {
    pub completes: Vec<RecoveredComplete>,
    pub deltas: Vec<RecoveredDelta>,
}

impl PLog {
    /// Formats a fresh region: superblock, empty schema region, one chunk.
    pub fn create(region: Arc<PmemRegion>, cfg: &EngineConfig) -> Result<PLog> {
        let geo = Geometry::derive(
            region.capacity(),
            cfg.clog_chunk_size,
            cfg.dlog_chunk_size,
            cfg.schema_region_size,
        )?;
        let mut sb = vec![0u8; SB_HEADER_LEN as usize];
        sb[0..4].copy_from_slice(MAGIC);
        sb[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        sb[8..16].copy_from_slice(&region.capacity().to_le_bytes());
        sb[16..24].copy_from_slice(&geo.clog_size.to_le_bytes());
        sb[24..32].copy_from_slice(&geo.dlog_size.to_le_bytes());
        sb[32..40].copy_from_slice(&geo.schema_size.to_le_bytes());
        sb[40..48].copy_from_slice(&0u64.to_le_bytes());
        sb[48..52].copy_from_slice(&geo.max_chunks.to_le_bytes());
        region.write_at(0, &sb)?;
        region.flush_range(0, sb.len())?;
        region.fence();

        let schema_base = geo.schema_base;
        let max_chunks = geo.max_chunks;
        let plog = PLog {
            chunks: RwLock::new(vec![None; max_chunks as usize]),
            schema_cursor: AtomicU64::new(schema_base),
            alloc_lock: Mutex::new(u32::MAX),
            alloc_seq: AtomicU64::new(0),
            region,
            geo,
        };
        plog.allocate_chunk()?;
        Ok(plog)
    }

    /// Opens an already-formatted region. Schema records must be loaded into
    /// a registry before row recovery (see [`PLog::load_schemas`]), and
    /// cursors are only correct after [`PLog::recover_scan`].
    pub fn open(region: Arc<PmemRegion>) -> Result<PLog> {
        let sb = region.read_vec(0, SB_HEADER_LEN as usize)?;
        if &sb[0..4] != MAGIC {
            return Err(Error::CorruptRegion("bad magic"));
        }
        let version = u32::from_le_bytes(sb[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CorruptRegion("unsupported format version"));
        }
        let capacity = u64::from_le_bytes(sb[8..16].try_into().unwrap());
        if capacity != region.capacity() {
            return Err(Error::CorruptRegion("capacity mismatch"));
        }
        let clog_size = u64::from_le_bytes(sb[16..24].try_into().unwrap());
        let dlog_size = u64::from_le_bytes(sb[24..32].try_into().unwrap());
        let schema_size = u64::from_le_bytes(sb[32..40].try_into().unwrap());
        let geo = Geometry::derive(capacity, clog_size, dlog_size, schema_size)?;
        let sb_alloc_seq = u64::from_le_bytes(sb[40..48].try_into().unwrap());

        let mut chunks: Vec<Option<Arc<Chunk>>> = vec![None; geo.max_chunks as usize];
        let mut open_candidate = (0u64, u32::MAX);
        for id in 0..geo.max_chunks {
            let entry = region.read_vec(SB_HEADER_LEN + id as u64 * CHUNK_ENTRY_LEN, 16)?;
            let state = u32::from_le_bytes(entry[0..4].try_into().unwrap());
            if state != CHUNK_ACTIVE {
                continue;
            }
            let alloc_seq = u64::from_le_bytes(entry[8..16].try_into().unwrap());
            let chunk = Self::make_chunk(&geo, id, alloc_seq);
            if alloc_seq >= open_candidate.0 {
                open_candidate = (alloc_seq, id);
            }
            chunks[id as usize] = Some(Arc::new(chunk));
        }

        Ok(PLog {
            region,
            geo,
            chunks: RwLock::new(chunks),
            alloc_lock: Mutex::new(open_candidate.1),
            alloc_seq: AtomicU64::new(sb_alloc_seq),
            schema_cursor: AtomicU64::new(0), // fixed up by load_schemas
        })
    }

    fn make_chunk(geo: &Geometry, id: u32, alloc_seq: u64) -> Chunk {
        let stride = geo.clog_size + geo.dlog_size;
        let clog_base = geo.chunks_base + id as u64 * stride;
        let dlog_base = clog_base + geo.clog_size;
        Chunk {
            id,
            alloc_seq,
            clog_base,
            clog_end: clog_base + geo.clog_size,
            dlog_base,
            dlog_end: dlog_base + geo.dlog_size,
            clog_cursor: AtomicU64::new(clog_base),
            dlog_cursor: AtomicU64::new(dlog_base),
            live_bytes: AtomicU64::new(0),
            append_lock: Mutex::new(()),
            gc_active: AtomicBool::new(false),
        }
    }

    pub fn region(&self) -> &Arc<PmemRegion> {
        &self.region
    }

    pub fn chunk(&self, id: u32) -> Option<Arc<Chunk>> {
        self.chunks.read().get(id as usize)?.clone()
    }

    pub fn chunk_ids(&self) -> Vec<u32> {
        self.chunks
            .read()
            .iter()
            .filter_map(|c| c.as_ref().map(|c| c.id))
            .collect()
    }

    pub fn allocated_chunks(&self) -> usize {
        self.chunks.read().iter().filter(|c| c.is_some()).count()
    }

    pub fn max_chunks(&self) -> u32 {
        self.geo.max_chunks
    }

    pub fn open_chunk_id(&self) -> u32 {
        *self.alloc_lock.lock()
    }

    fn allocate_chunk(&self) -> Result<Arc<Chunk>> {
        let mut open = self.alloc_lock.lock();
        let mut chunks = self.chunks.write();
        let slot = chunks
            .iter()
            .position(|c| c.is_none())
            .ok_or(Error::CapacityExhausted)?;
        let seq = self.alloc_seq.fetch_add(1, Ordering::AcqRel) + 1;
        let id = slot as u32;
        let mut entry = [0u8; 16];
        entry[0..4].copy_from_slice(&CHUNK_ACTIVE.to_le_bytes());
        entry[8..16].copy_from_slice(&seq.to_le_bytes());
        let entry_addr = SB_HEADER_LEN + id as u64 * CHUNK_ENTRY_LEN;
        self.region.write_at(entry_addr, &entry)?;
        self.region
            .write_at(40, &self.alloc_seq.load(Ordering::Acquire).to_le_bytes())?;
        self.region.flush_range(entry_addr, 16)?;
        self.region.flush_range(40, 8)?;
        self.region.fence();
        let chunk = Arc::new(Self::make_chunk(&self.geo, id, seq));
        chunks[slot] = Some(chunk.clone());
        *open = id;
        Ok(chunk)
    }

    /// Appends a complete row: write, flush every covering line, fence.
    /// Returns the row's address.
    pub fn append_complete(&self, image: &CompleteRowImage) -> Result<u64> {
        let len = image.bytes.len() as u64;
        if len > self.geo.clog_size {
            return Err(Error::RowTooLarge(image.bytes.len()));
        }
        loop {
            let open_id = *self.alloc_lock.lock();
            let chunk = self.chunk(open_id).ok_or(Error::CapacityExhausted)?;
            {
                let _guard = chunk.append_lock.lock();
                let cursor = chunk.clog_cursor.load(Ordering::Acquire);
                if cursor + len <= chunk.clog_end {
                    self.region.write_at(cursor, &image.bytes)?;
                    self.region.flush_range(cursor, image.bytes.len())?;
                    self.region.fence();
                    chunk.clog_cursor.store(cursor + len, Ordering::Release);
                    chunk.live_bytes.fetch_add(len, Ordering::Relaxed);
                    return Ok(cursor);
                }
            }
            // Chunk full: allocate the next one unless another thread
            // already moved the open designation.
            if *self.alloc_lock.lock() == open_id {
                self.allocate_chunk()?;
            }
        }
    }

    /// Appends a delta row into the owning chunk's DLog.
    pub fn append_delta(&self, image: &DeltaRowImage, owner: u32) -> Result<u64> {
        let chunk = self.chunk(owner).ok_or(Error::BadAddress(0))?;
        let len = image.bytes.len();
        if len > u16::MAX as usize {
            return Err(Error::RowTooLarge(len));
        }
        let _guard = chunk.append_lock.lock();
        let cursor = chunk.dlog_cursor.load(Ordering::Acquire);
        let framed = 2 + len as u64;
        if cursor + framed > chunk.dlog_end {
            return Err(Error::DlogFull(owner));
        }
        self.region.write_at(cursor, &(len as u16).to_le_bytes())?;
        self.region.write_at(cursor + 2, &image.bytes)?;
        self.region.flush_range(cursor, framed as usize)?;
        self.region.fence();
        chunk.dlog_cursor.store(cursor + framed, Ordering::Release);
        Ok(cursor + 2)
    }

    /// Maps an address to its owning chunk and extent.
    pub fn locate(&self, addr: u64) -> Result<(Arc<Chunk>, Extent)> {
        let stride = self.geo.clog_size + self.geo.dlog_size;
        if addr < self.geo.chunks_base {
            return Err(Error::BadAddress(addr));
        }
        let id = ((addr - self.geo.chunks_base) / stride) as u32;
        let chunk = self.chunk(id).ok_or(Error::BadAddress(addr))?;
        let offset = (addr - self.geo.chunks_base) % stride;
        if offset < self.geo.clog_size {
            Ok((chunk, Extent::Clog))
        } else {
            Ok((chunk, Extent::Dlog))
        }
    }

    pub fn owner_chunk_id(&self, addr: u64) -> Result<u32> {
        Ok(self.locate(addr)?.0.id)
    }

    /// Reads a complete row's raw bytes. Does not reject invalid-flagged
    /// rows; callers decide what an invalid row means.
    pub fn read_complete(&self, addr: u64) -> Result<Vec<u8>> {
        let (chunk, extent) = self.locate(addr)?;
        if extent != Extent::Clog {
            return Err(Error::BadAddress(addr));
        }
        let cursor = chunk.clog_cursor.load(Ordering::Acquire);
        if addr + 4 > cursor {
            return Err(Error::BadAddress(addr));
        }
        let header = self.region.read_vec(addr, 4)?;
        let total = complete_row_len_from_header(&header)?;
        if addr + total as u64 > cursor {
            return Err(Error::BadAddress(addr));
        }
        let mut bytes = header;
        bytes.extend_from_slice(&self.region.read_vec(addr + 4, total - 4)?);
        Ok(bytes)
    }

    /// Reads only a delta's meta prefix (schema-independent).
    pub fn read_delta_meta(&self, addr: u64) -> Result<DeltaMeta> {
        let (chunk, extent) = self.locate(addr)?;
        if extent != Extent::Dlog {
            return Err(Error::BadAddress(addr));
        }
        if addr + 4 > chunk.dlog_cursor.load(Ordering::Acquire) {
            return Err(Error::BadAddress(addr));
        }
        let prefix = self.region.read_vec(addr, 4)?;
        let fields_count = u16::from_le_bytes([prefix[2], prefix[3]]) as usize;
        let meta_len = 12 + 2 * fields_count;
        if addr + meta_len as u64 > chunk.dlog_cursor.load(Ordering::Acquire) {
            return Err(Error::BadAddress(addr));
        }
        let mut bytes = prefix;
        bytes.extend_from_slice(&self.region.read_vec(addr + 4, meta_len - 4)?);
        parse_delta_meta(&bytes)
    }

    /// Reads the requested fields out of a delta row, touching only the
    /// bytes needed to walk the payload. `None` means all fields.
    pub fn read_delta_fields(
        &self,
        addr: u64,
        schema: &SchemaDef,
        wanted: Option<&[u16]>,
    ) -> Result<(DeltaMeta, FieldValues)> {
        let meta = self.read_delta_meta(addr)?;
        let mut pos = addr + meta.payload_offset() as u64;
        let mut out = Vec::new();
        let mut outstanding = match wanted {
            Some(ids) => ids.iter().filter(|id| meta.field_ids.contains(id)).count(),
            None => meta.field_ids.len(),
        };
        for id in &meta.field_ids {
            if outstanding == 0 {
                break;
            }
            let take = wanted.is_none_or(|ids| ids.contains(id));
            let field = schema.field(*id)?;
            match field.kind {
                FieldKind::Fixed => {
                    if take {
                        out.push((*id, self.region.read_vec(pos, field.size as usize)?));
                        outstanding -= 1;
                    }
                    pos += field.size as u64;
                }
                FieldKind::Variable => {
                    let head = VarHead::parse(&self.region.read_vec(pos, 12)?)?;
                    pos += 12;
                    if head.is_inline() {
                        if take {
                            out.push((*id, head.inline_content().to_vec()));
                            outstanding -= 1;
                        }
                    } else {
                        if take {
                            out.push((*id, self.region.read_vec(pos, head.size as usize)?));
                            outstanding -= 1;
                        }
                        pos += head.size as u64;
                    }
                }
            }
        }
        Ok((meta, out))
    }

    /// Reads one field from a complete row without touching the rest of it.
    pub fn read_complete_field(
        &self,
        head_addr: u64,
        schema: &SchemaDef,
        key: &HierKey,
        field_id: u16,
    ) -> Result<Vec<u8>> {
        let (offset, len, kind) = schema.field_slice(field_id)?;
        let fixed_start = head_addr + codec::COMPLETE_HEADER_LEN as u64 + key.encoded_len() as u64;
        match kind {
            FieldKind::Fixed => self.region.read_vec(fixed_start + offset as u64, len as usize),
            FieldKind::Variable => {
                let head = VarHead::parse(&self.region.read_vec(fixed_start + offset as u64, 12)?)?;
                if head.is_inline() {
                    Ok(head.inline_content().to_vec())
                } else {
                    self.region
                        .read_vec(head_addr + head.content_offset(), head.size as usize)
                }
            }
        }
    }

    /// Follows chain pointers from a delta to its complete row. Returns the
    /// head address. Bounded to reject corrupt cycles.
    pub fn chain_head(&self, mut addr: u64) -> Result<u64> {
        for _ in 0..4096 {
            match self.locate(addr)?.1 {
                Extent::Clog => return Ok(addr),
                Extent::Dlog => {
                    addr = self.read_delta_meta(addr)?.chain_ptr;
                }
            }
        }
        Err(Error::CorruptRegion("chain pointer cycle"))
    }

    /// Resolves the schema of the row chain containing `addr`.
    pub fn chain_schema(&self, addr: u64, registry: &SchemaRegistry) -> Result<Arc<SchemaDef>> {
        let head = self.chain_head(addr)?;
        let bytes = self.read_complete(head)?;
        let image = CompleteRowImage::from_bytes(bytes);
        registry.get(image.key()?.schema_id)
    }

    /// Spec-level row read: the kind is discriminated by the extent the
    /// address falls in; delta rows resolve their schema via the chain.
    pub fn read_row(&self, addr: u64, registry: &SchemaRegistry) -> Result<codec::RowImage> {
        match self.locate(addr)?.1 {
            Extent::Clog => Ok(codec::RowImage::Complete(self.read_complete(addr)?)),
            Extent::Dlog => {
                let schema = self.chain_schema(addr, registry)?;
                let meta = self.read_delta_meta(addr)?;
                let mut end = addr + meta.payload_offset() as u64;
                for id in &meta.field_ids {
                    let field = schema.field(*id)?;
                    match field.kind {
                        FieldKind::Fixed => end += field.size as u64,
                        FieldKind::Variable => {
                            let head = VarHead::parse(&self.region.read_vec(end, 12)?)?;
                            end += 12;
                            if !head.is_inline() {
                                end += head.size as u64;
                            }
                        }
                    }
                }
                let total = (end - addr) as usize;
                Ok(codec::RowImage::Delta(self.region.read_vec(addr, total)?))
            }
        }
    }

    /// Sets the invalid flag on a complete row; idempotent. Decrements the
    /// chunk's live-byte count on the first call.
    pub fn mark_invalid(&self, addr: u64) -> Result<()> {
        let (chunk, extent) = self.locate(addr)?;
        if extent != Extent::Clog {
            return Err(Error::BadAddress(addr));
        }
        let _guard = chunk.append_lock.lock();
        if addr + 4 > chunk.clog_cursor.load(Ordering::Acquire) {
            return Err(Error::BadAddress(addr));
        }
        let header = self.region.read_vec(addr, 4)?;
        let word = u16::from_le_bytes([header[0], header[1]]);
        if word & codec::INVALID_BIT != 0 {
            return Ok(());
        }
        let total = complete_row_len_from_header(&header)? as u64;
        // The flag lives in the header's high byte, so a single-byte write
        // cannot tear across cachelines.
        let flag_addr = addr + 1;
        self.region
            .write_at(flag_addr, &[header[1] | (codec::INVALID_BIT >> 8) as u8])?;
        self.region.flush(flag_addr / CACHELINE * CACHELINE)?;
        self.region.fence();
        chunk.live_bytes.fetch_sub(total, Ordering::Relaxed);
        Ok(())
    }

    /// Walks a chunk's CLog extent, yielding every row currently stored
    /// (valid or invalid). Used by GC and audits.
    pub fn scan_chunk_completes(&self, id: u32) -> Result<Vec<RecoveredComplete>> {
        let chunk = self.chunk(id).ok_or(Error::BadAddress(0))?;
        let cursor = chunk.clog_cursor.load(Ordering::Acquire);
        let mut out = Vec::new();
        let mut pos = chunk.clog_base;
        while pos + 4 <= cursor {
            let header = self.region.read_vec(pos, 4)?;
            let total = complete_row_len_from_header(&header)?;
            if total == codec::COMPLETE_HEADER_LEN || pos + total as u64 > cursor {
                break;
            }
            let key_len = u16::from_le_bytes([header[2], header[3]]) as usize;
            let key = HierKey::decode(&self.region.read_vec(pos + 4, key_len)?)?;
            let word = u16::from_le_bytes([header[0], header[1]]);
            out.push(RecoveredComplete {
                addr: pos,
                key,
                invalid: word & codec::INVALID_BIT != 0,
                total_len: total,
                seq: (chunk.alloc_seq, pos - chunk.clog_base),
            });
            pos += total as u64;
        }
        Ok(out)
    }

    // ---- schema region ----

    /// Appends a schema record frame `[u16 len][record]`, flushed and fenced.
    pub fn append_schema_record(&self, record: &[u8]) -> Result<()> {
        let cursor = self.schema_cursor.load(Ordering::Acquire);
        let end = self.geo.schema_base + self.geo.schema_size;
        let framed = 2 + record.len() as u64;
        if cursor + framed > end {
            return Err(Error::SchemaRegionFull);
        }
        self.region
            .write_at(cursor, &(record.len() as u16).to_le_bytes())?;
        self.region.write_at(cursor + 2, record)?;
        self.region.flush_range(cursor, framed as usize)?;
        self.region.fence();
        self.schema_cursor.store(cursor + framed, Ordering::Release);
        Ok(())
    }

    /// Loads persisted schema records into the registry and positions the
    /// schema cursor after the last frame.
    pub fn load_schemas(&self, registry: &SchemaRegistry) -> Result<()> {
        let mut pos = self.geo.schema_base;
        let end = self.geo.schema_base + self.geo.schema_size;
        while pos + 2 <= end {
            let len = u16::from_le_bytes(self.region.read_vec(pos, 2)?.try_into().unwrap()) as u64;
            if len == 0 {
                break;
            }
            if pos + 2 + len > end {
                break;
            }
            let record = self.region.read_vec(pos + 2, len as usize)?;
            registry.restore(crate::schema::decode_schema_record(&record)?)?;
            pos += 2 + len;
        }
        self.schema_cursor.store(pos, Ordering::Release);
        Ok(())
    }

    // ---- recovery scan ----

    /// Scans every allocated chunk, rebuilding cursors and live-byte counts,
    /// and returns all parseable rows. Runs with exclusive access.
    pub fn recover_scan(&self) -> Result<RecoveredRows> {
        let mut rows = RecoveredRows::default();
        let chunks: Vec<Arc<Chunk>> = self.chunks.read().iter().flatten().cloned().collect();
        for chunk in chunks {
            // Complete rows: walk until a hole. Appends were serialized and
            // fenced before acknowledgment, so nothing acknowledged can
            // follow a hole.
            let mut pos = chunk.clog_base;
            let mut live = 0u64;
            while pos + 4 <= chunk.clog_end {
                let header = self.region.read_vec(pos, 4)?;
                let Ok(total) = complete_row_len_from_header(&header) else {
                    break;
                };
                if total == codec::COMPLETE_HEADER_LEN {
                    break; // zeroed space
                }
                if pos + total as u64 > chunk.clog_end {
                    break;
                }
                let key_len = u16::from_le_bytes([header[2], header[3]]) as usize;
                if key_len < 4 {
                    break;
                }
                let Ok(key) = HierKey::decode(&self.region.read_vec(pos + 4, key_len)?) else {
                    break;
                };
                let word = u16::from_le_bytes([header[0], header[1]]);
                let invalid = word & codec::INVALID_BIT != 0;
                if !invalid {
                    live += total as u64;
                }
                rows.completes.push(RecoveredComplete {
                    addr: pos,
                    key,
                    invalid,
                    total_len: total,
                    seq: (chunk.alloc_seq, pos - chunk.clog_base),
                });
                pos += total as u64;
            }
            chunk.clog_cursor.store(pos, Ordering::Release);
            chunk.live_bytes.store(live, Ordering::Relaxed);

            // Delta frames.
            let mut pos = chunk.dlog_base;
            while pos + 2 <= chunk.dlog_end {
                let len =
                    u16::from_le_bytes(self.region.read_vec(pos, 2)?.try_into().unwrap()) as u64;
                if len == 0 {
                    break;
                }
                if pos + 2 + len > chunk.dlog_end {
                    break;
                }
                let bytes = self.region.read_vec(pos + 2, len as usize)?;
                let Ok(meta) = parse_delta_meta(&bytes) else {
                    break;
                };
                rows.deltas.push(RecoveredDelta {
                    addr: pos + 2,
                    meta,
                    frame_len: len as usize,
                    seq: (chunk.alloc_seq, pos - chunk.dlog_base),
                });
                pos += 2 + len;
            }
            chunk.dlog_cursor.store(pos, Ordering::Release);
        }
        Ok(rows)
    }

    /// Resolves which complete row a recovered delta transitively chains to,
    /// using only rows found by the scan. Returns `None` for deltas whose
    /// chain leaves durable data (those were never acknowledged).
    pub fn resolve_delta_head(
        &self,
        delta: &RecoveredDelta,
        completes_by_addr: &HashMap<u64, usize>,
        deltas_by_addr: &HashMap<u64, usize>,
        deltas: &[RecoveredDelta],
    ) -> Option<u64> {
        let mut addr = delta.meta.chain_ptr;
        for _ in 0..4096 {
            if completes_by_addr.contains_key(&addr) {
                return Some(addr);
            }
            let idx = deltas_by_addr.get(&addr)?;
            addr = deltas[*idx].meta.chain_ptr;
        }
        None
    }

    // ---- gc support ----

    pub fn begin_gc(&self, id: u32) -> Result<Arc<Chunk>> {
        let chunk = self.chunk(id).ok_or(Error::BadAddress(0))?;
        if chunk
            .gc_active
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::ChunkBusy(id));
        }
        Ok(chunk)
    }

    pub fn end_gc(&self, id: u32) {
        if let Some(chunk) = self.chunk(id) {
            chunk.gc_active.store(false, Ordering::Release);
        }
    }

    /// Zeroes a chunk's extents and frees its table slot. The caller must
    /// have migrated all live rows and hold off readers.
    pub fn recycle_chunk(&self, id: u32) -> Result<u64> {
        let chunk = self.chunk(id).ok_or(Error::BadAddress(0))?;
        {
            let _guard = chunk.append_lock.lock();
            let zeros = vec![0u8; 64 * 1024];
            let mut pos = chunk.clog_base;
            while pos < chunk.dlog_end {
                let len = zeros.len().min((chunk.dlog_end - pos) as usize);
                self.region.write_at(pos, &zeros[..len])?;
                self.region.flush_range(pos, len)?;
                pos += len as u64;
            }
            self.region.fence();
            let entry_addr = SB_HEADER_LEN + id as u64 * CHUNK_ENTRY_LEN;
            self.region.write_at(entry_addr, &[0u8; 16])?;
            self.region.flush_range(entry_addr, 16)?;
            self.region.fence();
        }
        let reclaimed = chunk.capacity();
        self.chunks.write()[id as usize] = None;
        Ok(reclaimed)
    }
}
