//! Engine configuration and the `key = value` config-file format used by the
//! CLI's `--config` flag.

use std::path::PathBuf;

use crate::error::{Error, Result};

/// Retention-window lookup table: bands of schema hit ratio mapped to a
/// retention window in milliseconds. Bands are `(upper_bound, window_ms)`
/// pairs checked in order; the first band whose bound exceeds the hit ratio
/// wins.
#[derive(Debug, Clone)]
pub struct RetentionTable {
    pub bands: Vec<(f64, u64)>,
}

impl Default for RetentionTable {
    fn default() -> Self {
        // Low and high hit ratios get a short window, moderate ones a long
        // window, so stale rows clear quickly except where retention matters.
        RetentionTable {
            bands: vec![(0.3, 2_000), (0.7, 8_000), (f64::INFINITY, 2_000)],
        }
    }
}

impl RetentionTable {
    pub fn window_ms(&self, hit_ratio: f64) -> u64 {
        for &(bound, ms) in &self.bands {
            if hit_ratio < bound {
                return ms;
            }
        }
        self.bands.last().map(|&(_, ms)| ms).unwrap_or(2_000)
    }
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    /// Total page-pool budget in bytes.
    pub capacity_bytes: u64,
    /// Slab page size in bytes.
    pub page_size: usize,
    /// Per-slot budget for variable-length field content.
    pub var_quota: usize,
    /// Admission threshold on the schema hit ratio.
    pub hit_threshold: f64,
    /// Eviction passes halt once page usage drops to this fraction.
    pub page_usage_target: f64,
    /// EMA decay applied to the per-schema hit ratio on each access.
    pub ema_alpha: f64,
    /// Bounded task-queue length.
    pub task_queue_len: usize,
    pub rw_table: RetentionTable,
    /// Disables the cache entirely when false.
    pub enabled: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            capacity_bytes: 500 * 1024 * 1024,
            page_size: 16 * 1024,
            var_quota: 256,
            hit_threshold: 0.5,
            page_usage_target: 0.8,
            ema_alpha: 0.05,
            task_queue_len: 4096,
            rw_table: RetentionTable::default(),
            enabled: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Backing file for the persistent region; anonymous memory when None.
    pub path: Option<PathBuf>,
    /// Persistent region capacity in bytes.
    pub capacity: u64,
    /// Maintain a durable twin image so crashes can be simulated.
    pub track_durability: bool,
    /// Complete-row extent size per chunk.
    pub clog_chunk_size: u64,
    /// Delta extent size per chunk.
    pub dlog_chunk_size: u64,
    /// Bytes reserved for persisted schema definitions.
    pub schema_region_size: u64,
    /// Consecutive partial updates tolerated before a full-row rewrite.
    pub restore_threshold: u32,
    pub merge_queue_depth: usize,
    /// Keys merged per maintenance tick.
    pub merge_batch: usize,
    /// Chunks whose live fraction drops below this become GC candidates.
    pub gc_live_ratio: f64,
    /// GC only engages once this fraction of chunks is allocated.
    pub gc_region_utilization: f64,
    pub cache: CacheConfig,
    /// Spawn the background maintenance worker.
    pub background: bool,
    /// Worker poll interval in milliseconds.
    pub worker_interval_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            path: None,
            capacity: 256 * 1024 * 1024,
            track_durability: false,
            clog_chunk_size: 1024 * 1024,
            dlog_chunk_size: 256 * 1024,
            schema_region_size: 64 * 1024,
            restore_threshold: 5,
            merge_queue_depth: 4096,
            merge_batch: 64,
            gc_live_ratio: 0.25,
            gc_region_utilization: 0.8,
            cache: CacheConfig::default(),
            background: true,
            worker_interval_ms: 1,
        }
    }
}

impl EngineConfig {
    /// Small-footprint config used throughout the test suites: tiny region,
    /// durability tracking on, no background thread.
    pub fn small_for_tests() -> Self {
        EngineConfig {
            capacity: 16 * 1024 * 1024,
            track_durability: true,
            clog_chunk_size: 256 * 1024,
            dlog_chunk_size: 64 * 1024,
            schema_region_size: 16 * 1024,
            cache: CacheConfig {
                capacity_bytes: 4 * 1024 * 1024,
                ..CacheConfig::default()
            },
            background: false,
            ..EngineConfig::default()
        }
    }

    /// Applies one `key = value` override. Unknown keys are rejected so typos
    /// in config files surface instead of silently using defaults.
    pub fn apply_entry(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::BadConfig(format!("{key} = {value}")))
        }
        match key {
            "path" => self.path = Some(PathBuf::from(value)),
            "capacity" => self.capacity = num(key, value)?,
            "track_durability" => self.track_durability = num(key, value)?,
            "clog_chunk_size" => self.clog_chunk_size = num(key, value)?,
            "dlog_chunk_size" => self.dlog_chunk_size = num(key, value)?,
            "schema_region_size" => self.schema_region_size = num(key, value)?,
            "restore_threshold" => self.restore_threshold = num(key, value)?,
            "merge_queue_depth" => self.merge_queue_depth = num(key, value)?,
            "merge_batch" => self.merge_batch = num(key, value)?,
            "gc_live_ratio" => self.gc_live_ratio = num(key, value)?,
            "gc_region_utilization" => self.gc_region_utilization = num(key, value)?,
            "cache_capacity_bytes" => self.cache.capacity_bytes = num(key, value)?,
            "cache_enabled" => self.cache.enabled = num(key, value)?,
            "page_size" => self.cache.page_size = num(key, value)?,
            "var_quota" => self.cache.var_quota = num(key, value)?,
            "hit_threshold" => self.cache.hit_threshold = num(key, value)?,
            "page_usage_target" => self.cache.page_usage_target = num(key, value)?,
            "ema_alpha" => self.cache.ema_alpha = num(key, value)?,
            "task_queue_len" => self.cache.task_queue_len = num(key, value)?,
            "background" => self.background = num(key, value)?,
            "worker_interval_ms" => self.worker_interval_ms = num(key, value)?,
            "rw_table" => {
                // comma-separated "bound:window_ms" bands, e.g. "0.3:2000,0.7:8000,inf:2000"
                let mut bands = Vec::new();
                for part in value.split(',') {
                    let (bound, ms) = part
                        .split_once(':')
                        .ok_or_else(|| Error::BadConfig(format!("rw_table band: {part}")))?;
                    let bound = if bound.trim() == "inf" {
                        f64::INFINITY
                    } else {
                        num("rw_table", bound.trim())?
                    };
                    bands.push((bound, num("rw_table", ms.trim())?));
                }
                self.cache.rw_table = RetentionTable { bands };
            }
            _ => return Err(Error::BadConfig(format!("unknown key: {key}"))),
        }
        Ok(())
    }

    /// Parses a config file of `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::BadConfig(raw.to_string()))?;
            self.apply_entry(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let mut cfg = EngineConfig::default();
        cfg.apply_file(
            "# engine knobs\n\
             restore_threshold = 7\n\
             hit_threshold = 0.4\n\
             cache_capacity_bytes = 1048576\n\
             rw_table = 0.5:1000,inf:3000\n",
        )
        .unwrap();
        assert_eq!(cfg.restore_threshold, 7);
        assert_eq!(cfg.cache.hit_threshold, 0.4);
        assert_eq!(cfg.cache.capacity_bytes, 1 << 20);
        assert_eq!(cfg.cache.rw_table.window_ms(0.2), 1000);
        assert_eq!(cfg.cache.rw_table.window_ms(0.9), 3000);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = EngineConfig::default();
        assert!(cfg.apply_file("no_such_knob = 1").is_err());
    }

    #[test]
    fn retention_bands_default() {
        let t = RetentionTable::default();
        assert_eq!(t.window_ms(0.1), 2000);
        assert_eq!(t.window_ms(0.5), 8000);
        assert_eq!(t.window_ms(0.9), 2000);
    }
}
