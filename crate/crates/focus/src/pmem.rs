//! Byte-addressable persistent-memory emulation over a mapped region.
//!
//! The region is plain memory (file-backed or anonymous) with explicit
//! `flush`/`fence` primitives that the storage layers above must call to make
//! writes durable. Durability is modeled at 64-byte cacheline granularity:
//! `flush` marks a line pending in the calling thread's set, `fence` commits
//! the caller's pending lines to a shadow durable image. Keeping pending sets
//! per thread mirrors how cacheline flushes and memory fences order only the
//! issuing core's stores; one thread's fence must not commit another thread's
//! half-written row.
//!
//! `simulate_crash` returns the durable image: every line never
//! flushed-and-fenced since its last write appears with its last durable
//! content. All counters are cheap atomics so benchmark runs can leave
//! durability tracking off.

use std::cell::UnsafeCell;
use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread::ThreadId;

use memmap2::MmapMut;
use parking_lot::Mutex;

use crate::error::{Error, Result};

pub const CACHELINE: u64 = 64;
/// Internal write granularity of the emulated device; reads are also rounded
/// up to this size for the optional read-amplification counter.
pub const NVM_BLOCK: u64 = 256;

#[derive(Debug, Default)]
pub struct FlushStats {
    pub cacheline_flushes: AtomicU64,
    pub fences: AtomicU64,
    pub bytes_written: AtomicU64,
    pub bytes_read: AtomicU64,
    pub reads_256b_rounded: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlushSnapshot {
    pub cacheline_flushes: u64,
    pub fences: u64,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub reads_256b_rounded: u64,
}

impl FlushStats {
    pub fn snapshot(&self) -> FlushSnapshot {
        FlushSnapshot {
            cacheline_flushes: self.cacheline_flushes.load(Ordering::Relaxed),
            fences: self.fences.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            reads_256b_rounded: self.reads_256b_rounded.load(Ordering::Relaxed),
        }
    }
}

enum Backing {
    Anon(Box<[u8]>),
    File(MmapMut),
}

impl Backing {
    fn as_ptr(&self) -> *const u8 {
        match self {
            Backing::Anon(b) => b.as_ptr(),
            Backing::File(m) => m.as_ptr(),
        }
    }

    fn as_mut_ptr(&mut self) -> *mut u8 {
        match self {
            Backing::Anon(b) => b.as_mut_ptr(),
            Backing::File(m) => m.as_mut_ptr(),
        }
    }
}

struct DurableTwin {
    image: Box<[u8]>,
    /// Lines flushed but not yet fenced, per thread.
    pending: HashMap<ThreadId, Vec<u64>>,
}

/// The emulated persistent region.
///
/// Safety: concurrent writers must target disjoint ranges; the log allocators
/// above reserve ranges before writing and in-place merge writers hold
/// per-key latches. Readers may race in-place merges by design; the merge
/// protocol only installs bytes that are superseded along any chain a
/// concurrent reader traverses.
pub struct PmemRegion {
    backing: UnsafeCell<Backing>,
    capacity: u64,
    stats: FlushStats,
    durable: Option<Mutex<DurableTwin>>,
}

unsafe impl Send for PmemRegion {}
unsafe impl Sync for PmemRegion {}

impl PmemRegion {
    pub fn anonymous(capacity: u64, track_durability: bool) -> Result<Self> {
        let buf = vec![0u8; capacity as usize].into_boxed_slice();
        Ok(Self::from_backing(Backing::Anon(buf), capacity, track_durability))
    }

    pub fn file_backed(path: &Path, capacity: u64, track_durability: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        file.set_len(capacity)?;
        let mmap = unsafe { MmapMut::map_mut(&file)? };
        Ok(Self::from_backing(Backing::File(mmap), capacity, track_durability))
    }

    /// Rebuilds a region from a recovered durable image (crash testing).
    pub fn from_image(image: Vec<u8>, track_durability: bool) -> Result<Self> {
        let capacity = image.len() as u64;
        Ok(Self::from_backing(
            Backing::Anon(image.into_boxed_slice()),
            capacity,
            track_durability,
        ))
    }

    fn from_backing(backing: Backing, capacity: u64, track_durability: bool) -> Self {
        let durable = track_durability.then(|| {
            let image = unsafe {
                std::slice::from_raw_parts(backing.as_ptr(), capacity as usize)
                    .to_vec()
                    .into_boxed_slice()
            };
            Mutex::new(DurableTwin {
                image,
                pending: HashMap::new(),
            })
        });
        PmemRegion {
            backing: UnsafeCell::new(backing),
            capacity,
            stats: FlushStats::default(),
            durable,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn stats(&self) -> &FlushStats {
        &self.stats
    }

    fn check_range(&self, addr: u64, len: usize) -> Result<()> {
        if addr.checked_add(len as u64).is_none_or(|end| end > self.capacity) {
            return Err(Error::OutOfRange {
                addr,
                len,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    /// Writes bytes into the live region. Not durable until the covering
    /// lines are flushed and fenced.
    pub fn write_at(&self, addr: u64, bytes: &[u8]) -> Result<()> {
        self.check_range(addr, bytes.len())?;
        unsafe {
            let base = (*self.backing.get()).as_mut_ptr();
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), base.add(addr as usize), bytes.len());
        }
        self.stats
            .bytes_written
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    pub fn read_into(&self, addr: u64, out: &mut [u8]) -> Result<()> {
        self.check_range(addr, out.len())?;
        unsafe {
            let base = (*self.backing.get()).as_ptr();
            std::ptr::copy_nonoverlapping(base.add(addr as usize), out.as_mut_ptr(), out.len());
        }
        let len = out.len() as u64;
        self.stats.bytes_read.fetch_add(len, Ordering::Relaxed);
        if len > 0 {
            let blocks = (addr + len - 1) / NVM_BLOCK - addr / NVM_BLOCK + 1;
            self.stats
                .reads_256b_rounded
                .fetch_add(blocks * NVM_BLOCK, Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn read_vec(&self, addr: u64, len: usize) -> Result<Vec<u8>> {
        let mut out = vec![0u8; len];
        self.read_into(addr, &mut out)?;
        Ok(out)
    }

    /// Marks one 64-byte line flush-pending for the calling thread.
    pub fn flush(&self, line_addr: u64) -> Result<()> {
        if !line_addr.is_multiple_of(CACHELINE) {
            return Err(Error::UnalignedFlush(line_addr));
        }
        self.check_range(line_addr, CACHELINE as usize)?;
        self.stats.cacheline_flushes.fetch_add(1, Ordering::Relaxed);
        if let Some(durable) = &self.durable {
            durable
                .lock()
                .pending
                .entry(std::thread::current().id())
                .or_default()
                .push(line_addr);
        }
        Ok(())
    }

    /// Flushes every line covering `[addr, addr + len)`.
    pub fn flush_range(&self, addr: u64, len: usize) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let mut line = addr / CACHELINE * CACHELINE;
        let end = addr + len as u64;
        while line < end {
            self.flush(line)?;
            line += CACHELINE;
        }
        Ok(())
    }

    /// Commits the calling thread's pending lines to the durable image.
    pub fn fence(&self) {
        self.stats.fences.fetch_add(1, Ordering::Relaxed);
        if let Some(durable) = &self.durable {
            let mut twin = durable.lock();
            let Some(lines) = twin.pending.remove(&std::thread::current().id()) else {
                return;
            };
            for line in lines {
                let start = line as usize;
                let end = (start + CACHELINE as usize).min(self.capacity as usize);
                unsafe {
                    let base = (*self.backing.get()).as_ptr();
                    twin.image[start..end]
                        .copy_from_slice(std::slice::from_raw_parts(base.add(start), end - start));
                }
            }
        }
    }

    /// Returns the durable image: what the region would hold after power
    /// loss. Requires durability tracking; test-only by design.
    pub fn simulate_crash(&self) -> Vec<u8> {
        let durable = self
            .durable
            .as_ref()
            .expect("simulate_crash requires track_durability");
        durable.lock().image.to_vec()
    }

    /// Live-region snapshot, for scan-based audits in tests.
    pub fn live_image(&self) -> Vec<u8> {
        unsafe {
            let base = (*self.backing.get()).as_ptr();
            std::slice::from_raw_parts(base, self.capacity as usize).to_vec()
        }
    }
}
