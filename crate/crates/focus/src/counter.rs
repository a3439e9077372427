//! Striped event counter: per-thread stripes on separate cache lines so hot
//! read paths do not bounce one counter line between cores.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

const STRIPES: usize = 16;

#[repr(align(64))]
#[derive(Default)]
struct PaddedU64(AtomicU64);

pub struct StripedCounter {
    stripes: [PaddedU64; STRIPES],
}

impl StripedCounter {
    pub fn new() -> Self {
        StripedCounter {
            stripes: Default::default(),
        }
    }

    fn stripe(&self) -> &AtomicU64 {
        thread_local! {
            static STRIPE: std::cell::Cell<usize> = const { std::cell::Cell::new(usize::MAX) };
        }
        let idx = STRIPE.with(|s| {
            let mut idx = s.get();
            if idx == usize::MAX {
                let mut hasher = DefaultHasher::new();
                std::thread::current().id().hash(&mut hasher);
                idx = hasher.finish() as usize % STRIPES;
                s.set(idx);
            }
            idx
        });
        &self.stripes[idx].0
    }

    pub fn add(&self, n: u64) {
        self.stripe().fetch_add(n, Ordering::Relaxed);
    }

    pub fn incr(&self) {
        self.add(1);
    }

    pub fn sum(&self) -> u64 {
        self.stripes
            .iter()
            .map(|s| s.0.load(Ordering::Relaxed))
            .sum()
    }
}

impl Default for StripedCounter {
    fn default() -> Self {
        Self::new()
    }
}
