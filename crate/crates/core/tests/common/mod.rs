//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::sync::Arc;

use otfstream::content::{RepresentationId, SegmentDescriptor};
use otfstream::netem::BandwidthTrace;
use rand::Rng;

/// Straightforward LRU over a recency-ordered vector (front = oldest).
pub struct ReferenceLru {
    pub capacity: u64,
    pub order: Vec<(u32, u64)>,
}

impl ReferenceLru {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            order: Vec::new(),
        }
    }

    pub fn bytes(&self) -> u64 {
        self.order.iter().map(|e| e.1).sum()
    }

    pub fn get(&mut self, key: u32) -> Option<u64> {
        let pos = self.order.iter().position(|e| e.0 == key)?;
        let e = self.order.remove(pos);
        self.order.push(e);
        Some(e.1)
    }

    /// `None` if the item can never fit, else the evicted keys.
    pub fn put(&mut self, key: u32, size: u64) -> Option<Vec<u32>> {
        if size > self.capacity {
            return None;
        }
        self.order.retain(|e| e.0 != key);
        let mut evicted = Vec::new();
        while self.bytes() + size > self.capacity {
            evicted.push(self.order.remove(0).0);
        }
        self.order.push((key, size));
        Some(evicted)
    }
}

pub fn key_desc(key: u32) -> SegmentDescriptor {
    SegmentDescriptor {
        sequence: Arc::from("lru"),
        rep: RepresentationId::new(2),
        index: key,
        duration: 2.0,
        size: 1,
    }
}

pub const STEP: f64 = 0.001;

/// Random step trace whose breakpoints sit on the 1 ms grid.
pub fn grid_trace(rng: &mut impl Rng) -> BandwidthTrace {
    let n = rng.random_range(1..8);
    let mut t_ms = 0u64;
    let mut samples = Vec::new();
    for _ in 0..n {
        let bw = if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.5e6..50e6)
        };
        samples.push((t_ms as f64 * STEP, bw));
        t_ms += rng.random_range(50..3000);
    }
    let looping = rng.random_bool(0.7);
    let period = t_ms as f64 * STEP;
    if samples.iter().all(|s| s.1 == 0.0) {
        samples[0].1 = 1e6;
    }
    BandwidthTrace::with_period(&samples, period, looping).unwrap()
}

/// Completion time by accumulating `bw * 1ms` on the grid, giving up after
/// `limit` seconds. Returns the end of the step in which the bits complete.
pub fn integrate_1ms(trace: &BandwidthTrace, bits: f64, start_ms: u64, limit: f64) -> Option<f64> {
    let mut acc = 0.0;
    let steps = (limit / STEP) as u64;
    for k in 0..steps {
        let t = (start_ms + k) as f64 * STEP;
        acc += trace.bandwidth_at(t + STEP / 2.0) * STEP;
        if acc >= bits * (1.0 - 1e-12) {
            return Some(t + STEP);
        }
    }
    None
}

/// Two-sided Kolmogorov–Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}
