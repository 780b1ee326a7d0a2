//! Per-client bandwidth shaping from time-stamped traces.
//!
//! A trace is a step function: each sample's bandwidth holds until the next
//! sample. A trace covers `[0, period)`; looping traces repeat with that
//! period, non-looping traces have zero bandwidth afterwards.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::runtime::{Runtime, Seconds};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace has no samples")]
    Empty,
    #[error("timestamps must be strictly increasing (sample {0})")]
    NotIncreasing(usize),
    #[error("bandwidth must be finite and non-negative (sample {0})")]
    NegativeBandwidth(usize),
    #[error("trace period {period} does not cover last sample at {last}")]
    Period { period: f64, last: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("bad value `{value}` in column `{column}`")]
    BadValue { column: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    times: Vec<f64>,
    bps: Vec<f64>,
    period: f64,
    looping: bool,
}

impl BandwidthTrace {
    /// Samples are `(seconds, bits/second)`. Timestamps are shifted so the
    /// first sample sits at 0. The period is the last timestamp plus the last
    /// inter-sample gap (1 s for a single sample).
    pub fn new(samples: &[(f64, f64)], looping: bool) -> Result<Self, TraceError> {
        let first = samples.first().ok_or(TraceError::Empty)?.0;
        let times: Vec<f64> = samples.iter().map(|s| s.0 - first).collect();
        let period = match times.len() {
            1 => 1.0,
            n => times[n - 1] + (times[n - 1] - times[n - 2]),
        };
        Self::with_period(
            &times
                .iter()
                .zip(samples)
                .map(|(&t, s)| (t, s.1))
                .collect::<Vec<_>>(),
            period,
            looping,
        )
    }

    pub fn with_period(
        samples: &[(f64, f64)],
        period: f64,
        looping: bool,
    ) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        let first = samples[0].0;
        let mut times = Vec::with_capacity(samples.len());
        let mut bps = Vec::with_capacity(samples.len());
        for (i, &(t, b)) in samples.iter().enumerate() {
            if !(b.is_finite() && b >= 0.0) {
                return Err(TraceError::NegativeBandwidth(i));
            }
            let t = t - first;
            if i > 0 && t <= times[i - 1] {
                return Err(TraceError::NotIncreasing(i));
            }
            times.push(t);
            bps.push(b);
        }
        let last = *times.last().unwrap();
        if !(period > last) {
            return Err(TraceError::Period { period, last });
        }
        Ok(Self {
            times,
            bps,
            period,
            looping,
        })
    }

    pub fn constant(bps: f64) -> Self {
        Self::with_period(&[(0.0, bps)], 1.0, true).expect("valid constant trace")
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_looping(&self) -> bool {
        self.looping
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.bps.iter().copied())
    }

    pub fn mean_bps(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.times.len() {
            let end = self.times.get(i + 1).copied().unwrap_or(self.period);
            acc += self.bps[i] * (end - self.times[i]);
        }
        acc / self.period
    }

    /// Bandwidth at trace time `t`.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let local = if self.looping {
            t.rem_euclid(self.period)
        } else if t >= self.period {
            return 0.0;
        } else {
            t
        };
        let i = self
            .times
            .partition_point(|&x| x <= local)
            .saturating_sub(1);
        self.bps[i]
    }

    fn period_bits(&self) -> f64 {
        self.mean_bps() * self.period
    }

    /// Earliest trace time at which `bits` have been delivered starting at
    /// `start`; `None` if that never happens.
    pub fn completion_time(&self, bits: f64, start: f64) -> Option<f64> {
        if bits <= 0.0 {
            return Some(start);
        }
        let start = start.max(0.0);
        let mut remaining = bits;
        let (mut base, mut local) = if self.looping {
            let k = (start / self.period).floor();
            (k * self.period, start - k * self.period)
        } else if start >= self.period {
            return None;
        } else {
            (0.0, start)
        };
        let per_period = self.period_bits();

        let mut i = self
            .times
            .partition_point(|&x| x <= local)
            .saturating_sub(1);
        loop {
            let seg_end = self.times.get(i + 1).copied().unwrap_or(self.period);
            let cap = self.bps[i] * (seg_end - local);
            if cap >= remaining {
                return Some(base + local + remaining / self.bps[i]);
            }
            remaining -= cap;
            i += 1;
            local = seg_end;
            if i == self.times.len() {
                if !self.looping || per_period <= 0.0 {
                    return None;
                }
                base += self.period;
                local = 0.0;
                i = 0;
                // skip whole periods, keeping at least one partial pass
                let skip = ((remaining / per_period).floor() - 1.0).max(0.0);
                base += skip * self.period;
                remaining -= skip * per_period;
            }
        }
    }

    /// Reads the normal form `timestamp_s,bandwidth_kbps`.
    pub fn from_csv<R: Read>(reader: R, looping: bool) -> Result<Self, TraceError> {
        TraceConverter::default().convert(reader, looping)
    }

    pub fn from_csv_path(path: &Path, looping: bool) -> Result<Self, TraceError> {
        Self::from_csv(std::fs::File::open(path)?, looping)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_s,bandwidth_kbps\n");
        for (t, b) in self.samples() {
            out.push_str(&format!("{t:.3},{:.3}\n", b / 1000.0));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    Bps,
    Kbps,
    Mbps,
    /// Bytes received during the interval since the previous sample.
    BytesPerInterval,
}

/// Ingests third-party throughput logs into a [`BandwidthTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConverter {
    pub time_column: String,
    pub rate_column: String,
    pub time_unit: TimeUnit,
    pub rate_unit: RateUnit,
    pub delimiter: u8,
}

impl Default for TraceConverter {
    fn default() -> Self {
        Self {
            time_column: "timestamp_s".into(),
            rate_column: "bandwidth_kbps".into(),
            time_unit: TimeUnit::Seconds,
            rate_unit: RateUnit::Kbps,
            delimiter: b',',
        }
    }
}

impl TraceConverter {
    pub fn convert<R: Read>(&self, reader: R, looping: bool) -> Result<BandwidthTrace, TraceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(self.delimiter)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
        };
        let (tc, rc) = (col(&self.time_column)?, col(&self.rate_column)?);
        let parse = |rec: &csv::StringRecord, idx: usize, name: &str| -> Result<f64, TraceError> {
            let raw = rec.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| TraceError::BadValue {
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let mut raw = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t = parse(&rec, tc, &self.time_column)?;
            let r = parse(&rec, rc, &self.rate_column)?;
            let t = match self.time_unit {
                TimeUnit::Seconds => t,
                TimeUnit::Milliseconds => t / 1000.0,
            };
            raw.push((t, r));
        }
        let samples: Vec<(f64, f64)> = match self.rate_unit {
            RateUnit::Bps => raw,
            RateUnit::Kbps => raw.into_iter().map(|(t, r)| (t, r * 1e3)).collect(),
            RateUnit::Mbps => raw.into_iter().map(|(t, r)| (t, r * 1e6)).collect(),
            RateUnit::BytesPerInterval => {
                // bytes in (t_{i-1}, t_i] become the rate of the step starting at t_{i-1}
                let mut out = Vec::with_capacity(raw.len());
                for w in raw.windows(2) {
                    let dt = w[1].0 - w[0].0;
                    let rate = if dt > 0.0 { w[1].1 * 8.0 / dt } else { 0.0 };
                    out.push((w[0].0, rate));
                }
                out
            }
        };
        BandwidthTrace::new(&samples, looping)
    }
}

/// Log-normal AR(1) bandwidth process sampled on a fixed step, with
/// occasional deep fades. A stand-in for recorded mobile throughput logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTraceConfig {
    pub mean_bps: f64,
    /// Coefficient of variation of the stationary log-normal.
    pub cv: f64,
    /// Lag-one autocorrelation of log-bandwidth per step.
    pub correlation: f64,
    pub step_s: f64,
    pub duration_s: f64,
    pub min_bps: f64,
    pub max_bps: f64,
    /// Per-step probability of entering a fade.
    pub fade_probability: f64,
    pub fade_factor: f64,
    pub fade_steps: u32,
}

impl Default for SyntheticTraceConfig {
    fn default() -> Self {
        Self {
            mean_bps: 80e6,
            cv: 0.5,
            correlation: 0.9,
            step_s: 1.0,
            duration_s: 600.0,
            min_bps: 1e6,
            max_bps: 200e6,
            fade_probability: 0.01,
            fade_factor: 0.15,
            fade_steps: 3,
        }
    }
}

impl SyntheticTraceConfig {
    pub fn generate(&self, seed: u64) -> BandwidthTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma2 = (1.0 + self.cv * self.cv).ln();
        let sigma = sigma2.sqrt();
        let mu = self.mean_bps.ln() - sigma2 / 2.0;
        let phi = self.correlation.clamp(0.0, 0.999);
        let innov = sigma * (1.0 - phi * phi).sqrt();
        let n = (self.duration_s / self.step_s).ceil().max(1.0) as usize;
        let z0: f64 = StandardNormal.sample(&mut rng);
        let mut x = mu + sigma * z0;
        let mut fade_left = 0u32;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if fade_left == 0
                && rand::Rng::random_bool(&mut rng, self.fade_probability.clamp(0.0, 1.0))
            {
                fade_left = self.fade_steps;
            }
            let mut b = x.exp();
            if fade_left > 0 {
                b *= self.fade_factor;
                fade_left -= 1;
            }
            samples.push((i as f64 * self.step_s, b.clamp(self.min_bps, self.max_bps)));
            let z: f64 = StandardNormal.sample(&mut rng);
            x = mu + phi * (x - mu) + innov * z;
        }
        BandwidthTrace::with_period(&samples, n as f64 * self.step_s, true)
            .expect("generator emits a valid trace")
    }
}

/// Lists the `*.csv` traces in `dir`, sorted by file name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>, TraceError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Round-robin assignment of `traces` trace indices to `clients`, after a
/// seeded shuffle of the trace order.
pub fn assign_traces(traces: usize, clients: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..traces).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..clients).map(|c| order[c % traces.max(1)]).collect()
}

/// One client's emulated link: a trace anchored at `origin` on the
/// experiment clock, plus a fixed per-request latency floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub trace: BandwidthTrace,
    pub origin: Seconds,
    pub latency_floor: Seconds,
}

pub const DEFAULT_LATENCY_FLOOR: Seconds = 0.020;

impl Link {
    pub fn new(trace: BandwidthTrace, origin: Seconds, latency_floor: Seconds) -> Self {
        Self {
            trace,
            origin,
            latency_floor,
        }
    }

    /// Experiment time at which `bytes` finish arriving when the transfer
    /// begins at `start` (the latency floor is not included).
    pub fn completion_time(&self, bytes: u64, start: Seconds) -> Option<Seconds> {
        self.trace
            .completion_time(bytes as f64 * 8.0, start - self.origin)
            .map(|t| t + self.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("download cut off at {0:.3}s")]
pub struct CutOff(pub Seconds);

/// Waits until `bytes` have crossed the link, starting after the latency
/// floor. Gives up at `deadline`.
pub async fn shaped_download(
    link: &Link,
    bytes: u64,
    start: Seconds,
    rt: &dyn Runtime,
    deadline: Seconds,
) -> Result<Seconds, CutOff> {
    let done = link.completion_time(bytes, start + link.latency_floor);
    match done {
        Some(t) if t <= deadline => {
            rt.sleep_until(t).await;
            Ok(t)
        }
        _ => {
            rt.sleep_until(deadline).await;
            Err(CutOff(deadline))
        }
    }
}
