//! Benchmark execution: preload, threaded op loops, latency histograms, and
//! the CSV report row.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::mapping::{ConsolidatedStore, FocusRecords, RecordStore, ScatteredStore};
use crate::schema::FieldDef;
use crate::store::StoreSnapshot;

use super::workload::{record_pk, record_value, BenchOp, OpGenerator, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Focus,
    Consolidated,
    Scattered,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::Focus => "focus",
            EngineKind::Consolidated => "consolidated",
            EngineKind::Scattered => "scattered",
        }
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<EngineKind> {
        match s {
            "focus" => Ok(EngineKind::Focus),
            "consolidated" => Ok(EngineKind::Consolidated),
            "scattered" => Ok(EngineKind::Scattered),
            other => Err(Error::BadConfig(format!("unknown engine {other}"))),
        }
    }
}

/// Fixed-bucket latency histogram: 1 us buckets up to 100 ms.
pub struct Histogram {
    buckets: Vec<u64>,
    overflow: u64,
    count: u64,
}

const HIST_BUCKETS: usize = 100_000;

impl Histogram {
    pub fn new() -> Histogram {
        Histogram {
            buckets: vec![0; HIST_BUCKETS],
            overflow: 0,
            count: 0,
        }
    }

    pub fn record_us(&mut self, us: u64) {
        self.count += 1;
        match self.buckets.get_mut(us as usize) {
            Some(b) => *b += 1,
            None => self.overflow += 1,
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            *a += b;
        }
        self.overflow += other.overflow;
        self.count += other.count;
    }

    /// p in [0, 100]; returns the bucket (microseconds) covering it.
    pub fn percentile(&self, p: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let target = (self.count as f64 * p / 100.0).ceil() as u64;
        let mut seen = 0u64;
        for (us, n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= target {
                return us as f64;
            }
        }
        100_000.0
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new()
    }
}

/// One CSV output row. The header is fixed.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub engine: String,
    pub workload: String,
    pub threads: usize,
    pub ops_per_s: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub flushes: u64,
    pub fences: u64,
    pub hit_ratio: f64,
    pub suboperations: u64,
    /// Device-granularity read volume (each read rounded up to 256 bytes);
    /// reported out of band, not part of the CSV row.
    pub reads_256b_rounded: u64,
}

pub const CSV_HEADER: &str =
    "engine,workload,threads,ops_per_s,p50_us,p99_us,bytes_read,bytes_written,flushes,fences,hit_ratio,suboperations";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.1},{:.1},{},{},{},{},{:.4},{}",
            self.engine,
            self.workload,
            self.threads,
            self.ops_per_s,
            self.p50_us,
            self.p99_us,
            self.bytes_read,
            self.bytes_written,
            self.flushes,
            self.fences,
            self.hit_ratio,
            self.suboperations
        )
    }
}

/// Sizes a region generously enough for the run without GC thrash.
pub fn auto_capacity(spec: &WorkloadSpec) -> u64 {
    let row = spec.field_count as u64 * (spec.field_size as u64 + 16) + 64;
    let base = spec.records as u64 * row;
    let churn = spec.ops as u64 * 64;
    (base * 4 + churn).clamp(64 * 1024 * 1024, 8 * 1024 * 1024 * 1024)
}

pub fn build_target(
    kind: EngineKind,
    cfg: EngineConfig,
    spec: &WorkloadSpec,
) -> Result<Box<dyn RecordStore>> {
    Ok(match kind {
        EngineKind::Focus => {
            let fields: Vec<FieldDef> = (0..spec.field_count)
                .map(|i| FieldDef::fixed(&format!("field{i}"), spec.field_size as u32))
                .collect();
            Box::new(FocusRecords::open(cfg, fields)?)
        }
        EngineKind::Consolidated => Box::new(ConsolidatedStore::open(cfg, spec.field_count)?),
        EngineKind::Scattered => Box::new(ScatteredStore::open(cfg, spec.field_count)?),
    })
}

/// Loads record ids `0..records` with deterministic values.
pub fn preload(target: &dyn RecordStore, spec: &WorkloadSpec) -> Result<()> {
    for id in 0..spec.records as u64 {
        let values: Vec<Vec<u8>> = (0..spec.field_count as u16)
            .map(|f| record_value(id, f, spec.field_size))
            .collect();
        target.put(&record_pk(id), &values)?;
    }
    Ok(())
}

fn execute(target: &dyn RecordStore, spec: &WorkloadSpec, op: &BenchOp) -> Result<()> {
    match op {
        BenchOp::Insert(id) => {
            let values: Vec<Vec<u8>> = (0..spec.field_count as u16)
                .map(|f| record_value(*id, f, spec.field_size))
                .collect();
            target.put(&record_pk(*id), &values)
        }
        BenchOp::ReadFull(id) => target.get(&record_pk(*id), &[]).map(|_| ()),
        BenchOp::ReadPartial(id, fields) => target.get(&record_pk(*id), fields).map(|_| ()),
        BenchOp::Update(id, field) => {
            let value = record_value(id.wrapping_add(1), *field, spec.field_size);
            target.update(&record_pk(*id), &[(*field, value)])
        }
        BenchOp::ScanFull(id, width) => target.scan(&record_pk(*id), &[], *width).map(|_| ()),
        BenchOp::ScanPartial(id, fields, width) => {
            target.scan(&record_pk(*id), fields, *width).map(|_| ())
        }
        BenchOp::ReadModifyWrite(id, field) => {
            target.get(&record_pk(*id), &[])?;
            let value = record_value(id.wrapping_add(2), *field, spec.field_size);
            target.update(&record_pk(*id), &[(*field, value)])
        }
    }
}

struct CounterDelta {
    bytes_read: u64,
    bytes_written: u64,
    flushes: u64,
    fences: u64,
    subops: u64,
    hit_ratio: f64,
    reads_256b_rounded: u64,
}

fn snapshot_delta(before: &StoreSnapshot, after: &StoreSnapshot) -> CounterDelta {
    let bytes_read = after.flush.bytes_read - before.flush.bytes_read;
    let bytes_written = after.flush.bytes_written - before.flush.bytes_written;
    let flushes = after.flush.cacheline_flushes - before.flush.cacheline_flushes;
    let fences = after.flush.fences - before.flush.fences;
    let subops = after.access.kv_suboperations - before.access.kv_suboperations;
    let hits = after.engine.cache_hits - before.engine.cache_hits;
    let misses = after.engine.cache_misses - before.engine.cache_misses;
    let hit_ratio = if hits + misses == 0 {
        0.0
    } else {
        hits as f64 / (hits + misses) as f64
    };
    CounterDelta {
        bytes_read,
        bytes_written,
        flushes,
        fences,
        subops,
        hit_ratio,
        reads_256b_rounded: after.flush.reads_256b_rounded - before.flush.reads_256b_rounded,
    }
}

/// Preloads the dataset, then runs `spec.ops` operations split over
/// `threads` workers, each owning a disjoint stream shard.
pub fn run(
    kind: EngineKind,
    cfg: EngineConfig,
    spec: &WorkloadSpec,
    threads: usize,
    seed: u64,
) -> Result<ReportRow> {
    spec.validate()?;
    let target: Arc<Box<dyn RecordStore>> = Arc::new(build_target(kind, cfg, spec)?);
    preload(target.as_ref().as_ref(), spec)?;
    let before = target.snapshot();

    let per_thread = spec.ops / threads.max(1);
    let start = Instant::now();
    let mut histograms: Vec<Histogram> = Vec::new();
    if threads <= 1 {
        let mut hist = Histogram::new();
        let mut generator = OpGenerator::new(spec, seed, 0, 1);
        for _ in 0..spec.ops {
            let op = generator.next_op();
            let t0 = Instant::now();
            execute(target.as_ref().as_ref(), spec, &op)?;
            hist.record_us(t0.elapsed().as_micros() as u64);
        }
        histograms.push(hist);
    } else {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let target = target.clone();
                let spec = spec.clone();
                std::thread::spawn(move || -> Result<Histogram> {
                    let mut hist = Histogram::new();
                    let mut generator =
                        OpGenerator::new(&spec, seed, t as u64, threads as u64);
                    for _ in 0..per_thread {
                        let op = generator.next_op();
                        let t0 = Instant::now();
                        execute(target.as_ref().as_ref(), &spec, &op)?;
                        hist.record_us(t0.elapsed().as_micros() as u64);
                    }
                    Ok(hist)
                })
            })
            .collect();
        for handle in handles {
            histograms.push(handle.join().expect("bench worker panicked")?);
        }
    }
    let elapsed = start.elapsed();

    let mut merged = Histogram::new();
    for h in &histograms {
        merged.merge(h);
    }
    let after = target.snapshot();
    let delta = snapshot_delta(&before, &after);
    let total_ops = merged.count;
    Ok(ReportRow {
        engine: kind.as_str().to_string(),
        workload: spec.name.clone(),
        threads,
        ops_per_s: total_ops as f64 / elapsed.as_secs_f64(),
        p50_us: merged.percentile(50.0),
        p99_us: merged.percentile(99.0),
        bytes_read: delta.bytes_read,
        bytes_written: delta.bytes_written,
        flushes: delta.flushes,
        fences: delta.fences,
        hit_ratio: delta.hit_ratio,
        suboperations: delta.subops,
        reads_256b_rounded: delta.reads_256b_rounded,
    })
}
