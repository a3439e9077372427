//! Workload specifications and the deterministic operation generator.
//!
//! Covers the six standard YCSB mixes plus a microbenchmark with separate
//! full/partial read and scan operations. Key popularity follows a Zipfian,
//! uniform, or latest distribution; the Zipfian sampler is the standard
//! rejection-free construction over a precomputed zeta sum.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Zipfian(f64),
    Uniform,
    /// Skewed toward the most recently inserted keys.
    Latest(f64),
}

/// Operation percentages; must sum to 100.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpMix {
    pub read_full: u8,
    pub read_partial: u8,
    pub update: u8,
    pub insert: u8,
    pub scan_full: u8,
    pub scan_partial: u8,
    pub read_modify_write: u8,
}

impl OpMix {
    pub fn total(&self) -> u32 {
        self.read_full as u32
            + self.read_partial as u32
            + self.update as u32
            + self.insert as u32
            + self.scan_full as u32
            + self.scan_partial as u32
            + self.read_modify_write as u32
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub name: String,
    pub mix: OpMix,
    pub records: usize,
    pub ops: usize,
    pub field_count: usize,
    pub field_size: usize,
    pub distribution: Distribution,
    pub scan_width: usize,
    pub partial_field_count: usize,
}

impl WorkloadSpec {
    fn base(name: &str, mix: OpMix, distribution: Distribution) -> WorkloadSpec {
        WorkloadSpec {
            name: name.to_string(),
            mix,
            records: 100_000,
            ops: 1_000_000,
            field_count: 10,
            field_size: 100,
            distribution,
            scan_width: 100,
            partial_field_count: 1,
        }
    }

    /// The standard YCSB mixes, A through F.
    pub fn ycsb(which: char) -> Result<WorkloadSpec> {
        let zipf = Distribution::Zipfian(0.99);
        let spec = match which.to_ascii_uppercase() {
            'A' => Self::base(
                "A",
                OpMix {
                    update: 50,
                    read_full: 50,
                    ..OpMix::default()
                },
                zipf,
            ),
            'B' => Self::base(
                "B",
                OpMix {
                    update: 5,
                    read_full: 95,
                    ..OpMix::default()
                },
                zipf,
            ),
            'C' => Self::base(
                "C",
                OpMix {
                    read_full: 100,
                    ..OpMix::default()
                },
                zipf,
            ),
            'D' => Self::base(
                "D",
                OpMix {
                    insert: 5,
                    read_full: 95,
                    ..OpMix::default()
                },
                Distribution::Latest(0.99),
            ),
            'E' => Self::base(
                "E",
                OpMix {
                    insert: 5,
                    scan_full: 95,
                    ..OpMix::default()
                },
                zipf,
            ),
            'F' => Self::base(
                "F",
                OpMix {
                    read_modify_write: 50,
                    read_full: 50,
                    ..OpMix::default()
                },
                zipf,
            ),
            _ => return Err(Error::BadConfig(format!("unknown YCSB workload {which}"))),
        };
        Ok(spec)
    }

    /// Microbenchmark: a single operation type under Zipf(0.99).
    pub fn micro(op: &str) -> Result<WorkloadSpec> {
        let zipf = Distribution::Zipfian(0.99);
        let mix = match op {
            "insert" => OpMix {
                insert: 100,
                ..OpMix::default()
            },
            "read-f" => OpMix {
                read_full: 100,
                ..OpMix::default()
            },
            "read-p" => OpMix {
                read_partial: 100,
                ..OpMix::default()
            },
            "update" => OpMix {
                update: 100,
                ..OpMix::default()
            },
            "scan-f" => OpMix {
                scan_full: 100,
                ..OpMix::default()
            },
            "scan-p" => OpMix {
                scan_partial: 100,
                ..OpMix::default()
            },
            _ => return Err(Error::BadConfig(format!("unknown micro op {op}"))),
        };
        Ok(Self::base(&format!("micro:{op}"), mix, zipf))
    }

    pub fn parse(name: &str) -> Result<WorkloadSpec> {
        if let Some(op) = name.strip_prefix("micro:") {
            return Self::micro(op);
        }
        let mut chars = name.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::ycsb(c),
            _ => Err(Error::BadConfig(format!("unknown workload {name}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mix.total() != 100 {
            return Err(Error::InvalidMix);
        }
        if self.records == 0 || self.field_count == 0 || self.field_size == 0 {
            return Err(Error::BadConfig("records/fields/field-size must be positive".into()));
        }
        Ok(())
    }
}

/// One benchmark operation over logical record ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BenchOp {
    Insert(u64),
    ReadFull(u64),
    ReadPartial(u64, Vec<u16>),
    Update(u64, u16),
    ScanFull(u64, usize),
    ScanPartial(u64, Vec<u16>, usize),
    ReadModifyWrite(u64, u16),
}

/// Zipfian sampler over ranks `0..n`, skew `theta`. Rank 0 is the most
/// popular; the caller maps ranks onto keys.
#[derive(Debug, Clone)]
pub struct Zipfian {
    n: usize,
    theta: f64,
    alpha: f64,
    zetan: f64,
    eta: f64,
}

impl Zipfian {
    pub fn new(n: usize, theta: f64) -> Zipfian {
        assert!(n > 0 && theta > 0.0 && theta < 1.0);
        let zetan = Self::zeta(n, theta);
        let zeta2 = Self::zeta(2.min(n), theta);
        Zipfian {
            n,
            theta,
            alpha: 1.0 / (1.0 - theta),
            zetan,
            eta: (1.0 - (2.0 / n as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan),
        }
    }

    /// Harmonic-like normalizer: sum of 1/i^theta for i in 1..=n.
    pub fn zeta(n: usize, theta: f64) -> f64 {
        (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
    }

    /// Probability mass of rank (0-based).
    pub fn mass(&self, rank: usize) -> f64 {
        1.0 / ((rank + 1) as f64).powf(self.theta) / self.zetan
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if self.n >= 2 && uz < 1.0 + 0.5f64.powf(self.theta) {
            return 1;
        }
        let rank = (self.n as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as usize;
        rank.min(self.n - 1)
    }
}

/// Deterministic per-thread operation stream. Inserted keys are partitioned
/// across threads (`records + thread + i * threads`) so streams never
/// collide on fresh ids.
pub struct OpGenerator {
    spec: WorkloadSpec,
    rng: StdRng,
    zipf: Option<Zipfian>,
    thread: u64,
    threads: u64,
    inserted: u64,
}

impl OpGenerator {
    pub fn new(spec: &WorkloadSpec, seed: u64, thread: u64, threads: u64) -> OpGenerator {
        let zipf = match spec.distribution {
            Distribution::Zipfian(theta) | Distribution::Latest(theta) => {
                Some(Zipfian::new(spec.records, theta))
            }
            Distribution::Uniform => None,
        };
        OpGenerator {
            spec: spec.clone(),
            rng: StdRng::seed_from_u64(seed ^ (thread.wrapping_mul(0x9E37_79B9_7F4A_7C15))),
            zipf,
            thread,
            threads,
            inserted: 0,
        }
    }

    /// FNV-scrambled rank-to-key mapping, spreading the hotspot across the
    /// keyspace the way YCSB's scrambled Zipfian does.
    fn scramble(&self, rank: usize, space: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in (rank as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h % space
    }

    fn keyspace(&self) -> u64 {
        self.spec.records as u64 + self.inserted * self.threads
    }

    fn pick_key(&mut self) -> u64 {
        let space = self.keyspace();
        match self.spec.distribution {
            Distribution::Uniform => self.rng.random_range(0..space),
            Distribution::Zipfian(_) => {
                let rank = self.zipf.as_ref().unwrap().sample(&mut self.rng);
                self.scramble(rank, space)
            }
            Distribution::Latest(_) => {
                // Hot end = newest inserted id.
                let rank = self.zipf.as_ref().unwrap().sample(&mut self.rng) as u64;
                (space - 1).saturating_sub(rank)
            }
        }
    }

    fn pick_fields(&mut self) -> Vec<u16> {
        let want = self.spec.partial_field_count.min(self.spec.field_count);
        let mut fields = Vec::with_capacity(want);
        while fields.len() < want {
            let f = self.rng.random_range(0..self.spec.field_count as u16);
            if !fields.contains(&f) {
                fields.push(f);
            }
        }
        fields.sort_unstable();
        fields
    }

    fn next_insert_id(&mut self) -> u64 {
        let id = self.spec.records as u64 + self.thread + self.inserted * self.threads;
        self.inserted += 1;
        id
    }

    pub fn next_op(&mut self) -> BenchOp {
        let draw = self.rng.random_range(0..100u32) as u8;
        let m = self.spec.mix;
        let mut edge = m.read_full;
        if draw < edge {
            return BenchOp::ReadFull(self.pick_key());
        }
        edge += m.read_partial;
        if draw < edge {
            let key = self.pick_key();
            let fields = self.pick_fields();
            return BenchOp::ReadPartial(key, fields);
        }
        edge += m.update;
        if draw < edge {
            let key = self.pick_key();
            let field = self.rng.random_range(0..self.spec.field_count as u16);
            return BenchOp::Update(key, field);
        }
        edge += m.insert;
        if draw < edge {
            return BenchOp::Insert(self.next_insert_id());
        }
        edge += m.scan_full;
        if draw < edge {
            return BenchOp::ScanFull(self.pick_key(), self.spec.scan_width);
        }
        edge += m.scan_partial;
        if draw < edge {
            let key = self.pick_key();
            let fields = self.pick_fields();
            return BenchOp::ScanPartial(key, fields, self.spec.scan_width);
        }
        let key = self.pick_key();
        let field = self.rng.random_range(0..self.spec.field_count as u16);
        BenchOp::ReadModifyWrite(key, field)
    }
}

/// Deterministic field content for preloaded records.
pub fn record_value(id: u64, field: u16, size: usize) -> Vec<u8> {
    let tag = (id
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(field as u64)
        >> 16) as u8;
    vec![tag; size]
}

pub fn record_pk(id: u64) -> Vec<u8> {
    format!("user{id:012}").into_bytes()
}
