//! Per-schema cache statistics: moving-average hit ratio, occupancy,
//! eviction failure count, and the lifetime equation they feed.

use std::sync::atomic::{AtomicI64, AtomicU32, AtomicU64, Ordering};

use crate::config::RetentionTable;

pub struct SchemaStat {
    /// Exponentially weighted moving average of hit/miss, as f64 bits.
    hit_ema: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
    fail_count: AtomicU32,
    occupied: AtomicI64,
    total_slots: AtomicI64,
}

impl SchemaStat {
    pub fn new() -> Self {
        SchemaStat {
            hit_ema: AtomicU64::new(0f64.to_bits()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            fail_count: AtomicU32::new(0),
            occupied: AtomicI64::new(0),
            total_slots: AtomicI64::new(0),
        }
    }

    pub fn record(&self, hit: bool, alpha: f64) {
        if hit {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        let sample = if hit { 1.0 } else { 0.0 };
        // Plain read-modify-write: concurrent updates may drop a sample,
        // which only slows the moving average's convergence.
        let ema = f64::from_bits(self.hit_ema.load(Ordering::Relaxed));
        let next = ema + alpha * (sample - ema);
        self.hit_ema.store(next.to_bits(), Ordering::Relaxed);
    }

    pub fn hit_ratio(&self) -> f64 {
        f64::from_bits(self.hit_ema.load(Ordering::Relaxed))
    }

    pub fn accesses(&self) -> u64 {
        self.hits.load(Ordering::Relaxed) + self.misses.load(Ordering::Relaxed)
    }

    pub fn bump_fail(&self) {
        self.fail_count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn reset_fail(&self) {
        self.fail_count.store(0, Ordering::Relaxed);
    }

    pub fn add_occupied(&self, delta: i64) {
        self.occupied.fetch_add(delta, Ordering::Relaxed);
    }

    pub fn add_slots(&self, delta: i64) {
        self.total_slots.fetch_add(delta, Ordering::Relaxed);
    }

    pub fn view(&self, rw_table: &RetentionTable) -> SchemaStatsView {
        let hit_ratio = self.hit_ratio();
        let total = self.total_slots.load(Ordering::Relaxed).max(0);
        let occupied = self.occupied.load(Ordering::Relaxed).clamp(0, total);
        SchemaStatsView {
            hit_ratio,
            row_occupancy: if total > 0 {
                occupied as f64 / total as f64
            } else {
                0.0
            },
            fail_count: self.fail_count.load(Ordering::Relaxed),
            retention_ms: rw_table.window_ms(hit_ratio),
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

impl Default for SchemaStat {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemaStatsView {
    pub hit_ratio: f64,
    pub row_occupancy: f64,
    pub fail_count: u32,
    pub retention_ms: u64,
    pub hits: u64,
    pub misses: u64,
}

/// Eviction staleness threshold: `2^-N * H * (1 - RO) * RW`, exactly.
pub fn lifetime_ms(view: &SchemaStatsView) -> f64 {
    2f64.powi(-(view.fail_count as i32))
        * view.hit_ratio
        * (1.0 - view.row_occupancy)
        * view.retention_ms as f64
}

/// Admission rule: always admit above the threshold, otherwise admit with
/// probability `H / hit_threshold`. `draw` is uniform in [0, 1).
pub fn admission_allows(hit_ratio: f64, hit_threshold: f64, draw: f64) -> bool {
    draw < hit_ratio / hit_threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn view(h: f64, ro: f64, n: u32, rw: u64) -> SchemaStatsView {
        SchemaStatsView {
            hit_ratio: h,
            row_occupancy: ro,
            fail_count: n,
            retention_ms: rw,
            hits: 0,
            misses: 0,
        }
    }

    #[test]
    fn lifetime_is_the_exact_four_factor_product() {
        assert_eq!(lifetime_ms(&view(0.5, 0.5, 0, 8000)), 2000.0);
        // Each failed attempt halves it.
        assert_eq!(lifetime_ms(&view(0.5, 0.5, 1, 8000)), 1000.0);
        assert_eq!(lifetime_ms(&view(0.5, 0.5, 2, 8000)), 500.0);
        // Full occupancy evicts aggressively.
        assert_eq!(lifetime_ms(&view(0.9, 1.0, 0, 8000)), 0.0);
    }

    #[test]
    fn lifetime_monotonicity() {
        let base = lifetime_ms(&view(0.5, 0.5, 1, 4000));
        assert!(lifetime_ms(&view(0.6, 0.5, 1, 4000)) > base); // H up
        assert!(lifetime_ms(&view(0.5, 0.6, 1, 4000)) < base); // RO up
        assert!(lifetime_ms(&view(0.5, 0.5, 2, 4000)) < base); // N up
        assert!(lifetime_ms(&view(0.5, 0.5, 1, 8000)) > base); // RW up
    }

    #[test]
    fn admission_formula_boundaries() {
        // Above the threshold: always.
        assert!(admission_allows(0.6, 0.5, 0.999999));
        // Zero hit ratio: never.
        assert!(!admission_allows(0.0, 0.5, 0.0));
    }

    #[test]
    fn admission_frequency_tracks_ratio() {
        let mut rng = StdRng::seed_from_u64(42);
        let trials = 100_000;
        for h in [0.1f64, 0.25, 0.4] {
            let admitted = (0..trials)
                .filter(|_| admission_allows(h, 0.5, rng.random::<f64>()))
                .count();
            let freq = admitted as f64 / trials as f64;
            let expect = h / 0.5;
            assert!(
                (freq - expect).abs() < 0.02,
                "h={h}: freq {freq} vs expected {expect}"
            );
        }
    }

    #[test]
    fn ema_converges_toward_hit_stream() {
        let stat = SchemaStat::new();
        for _ in 0..200 {
            stat.record(true, 0.05);
        }
        assert!(stat.hit_ratio() > 0.99);
        for _ in 0..200 {
            stat.record(false, 0.05);
        }
        assert!(stat.hit_ratio() < 0.01);
        assert_eq!(stat.accesses(), 400);
    }
}
