//! Benchmark CLI for the storage engine and its flat-mapping baselines.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use focus::bench::{self, EngineKind, WorkloadSpec, CSV_HEADER};
use focus::EngineConfig;

#[derive(Parser)]
#[command(name = "focus", version, about = "Schema-aware log-structured KV store")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload and append one CSV row of results.
    Bench(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Engine under test: focus, consolidated, or scattered.
    #[arg(long, default_value = "focus")]
    engine: String,
    /// Workload: A..F or micro:{insert,read-f,read-p,update,scan-f,scan-p}.
    #[arg(long, default_value = "A")]
    workload: String,
    /// Records preloaded before the measured phase.
    #[arg(long, default_value_t = 100_000)]
    records: usize,
    /// Operations in the measured phase.
    #[arg(long, default_value_t = 1_000_000)]
    ops: usize,
    /// Worker threads; each owns a disjoint shard of the op stream.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Zipfian skew for key popularity.
    #[arg(long, default_value_t = 0.99)]
    zipf: f64,
    /// Fields per record.
    #[arg(long, default_value_t = 10)]
    fields: usize,
    /// Bytes per field.
    #[arg(long, default_value_t = 100)]
    field_size: usize,
    /// RNG seed; identical seeds reproduce identical runs.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Records touched by each scan.
    #[arg(long, default_value_t = 100)]
    scan_width: usize,
    /// Fields touched by each partial read/scan.
    #[arg(long, default_value_t = 1)]
    partial_fields: usize,
    /// Consecutive partial updates tolerated before a full-row rewrite.
    #[arg(long)]
    restore_threshold: Option<u32>,
    /// CSV output file (appended; header written when new).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Engine config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_bench(args: &BenchArgs) -> focus::Result<()> {
    let kind: EngineKind = args.engine.parse()?;
    let mut spec = WorkloadSpec::parse(&args.workload)?;
    spec.records = args.records;
    spec.ops = args.ops;
    spec.field_count = args.fields;
    spec.field_size = args.field_size;
    spec.scan_width = args.scan_width;
    spec.partial_field_count = args.partial_fields;
    match &mut spec.distribution {
        bench::Distribution::Zipfian(theta) | bench::Distribution::Latest(theta) => {
            *theta = args.zipf;
        }
        bench::Distribution::Uniform => {}
    }
    spec.validate()?;

    let mut cfg = EngineConfig {
        capacity: bench::auto_capacity(&spec),
        ..EngineConfig::default()
    };
    if let Some(path) = &args.config {
        cfg.apply_file(&std::fs::read_to_string(path)?)?;
    }
    if let Some(threshold) = args.restore_threshold {
        cfg.restore_threshold = threshold;
    }

    eprintln!(
        "running {} on {} ({} records, {} ops, {} threads, capacity {} MiB)",
        spec.name,
        kind.as_str(),
        spec.records,
        spec.ops,
        args.threads,
        cfg.capacity / (1024 * 1024),
    );
    let row = bench::run(kind, cfg, &spec, args.threads.max(1), args.seed)?;

    println!("{CSV_HEADER}");
    println!("{}", row.to_csv());
    eprintln!(
        "backend: bytes_read={} bytes_written={} flushes={} fences={} reads_256B_rounded={}",
        row.bytes_read, row.bytes_written, row.flushes, row.fences, row.reads_256b_rounded,
    );
    if let Some(path) = &args.out {
        let new_file = !path.exists();
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if new_file {
            writeln!(file, "{CSV_HEADER}")?;
        }
        writeln!(file, "{}", row.to_csv())?;
        eprintln!("appended results to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
