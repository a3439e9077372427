//! Benchmark harness: YCSB A-F and the six-operation microbenchmark, run
//! against the schema-aware store or either flat-mapping adapter, reporting
//! throughput, latency percentiles, and backend counters as CSV.

mod runner;
mod workload;

pub use runner::{
    auto_capacity, build_target, preload, run, EngineKind, Histogram, ReportRow, CSV_HEADER,
};
pub use workload::{
    record_pk, record_value, BenchOp, Distribution, OpGenerator, OpMix, WorkloadSpec, Zipfian,
};
