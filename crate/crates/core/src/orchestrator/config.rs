use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendPolicy, Variant, DEFAULT_CACHE_CAPACITY};
use crate::client::ClientConfig;
use crate::content::CatalogConfig;
use crate::netem::{SyntheticTraceConfig, DEFAULT_LATENCY_FLOOR};
use crate::runtime::Seconds;
use crate::transcode::LatencyModelConfig;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Discrete-event clock; runs as fast as the CPU allows.
    Virtual,
    /// Real time over loopback HTTP, optionally sped up by `time_scale`.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub catalog: u64,
    pub arrivals: u64,
    pub traces: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::all(1)
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            catalog: seed,
            arrivals: seed,
            traces: seed,
            noise: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    /// One generated trace per client.
    Synthetic(SyntheticTraceConfig),
    /// `*.csv` files in `timestamp_s,bandwidth_kbps` form, assigned
    /// round-robin after a seeded shuffle.
    Directory {
        path: PathBuf,
    },
    Constant {
        bandwidth_bps: f64,
    },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::Synthetic(SyntheticTraceConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub traces: TraceSource,
    pub latency_floor_s: Seconds,
    pub looping: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            traces: TraceSource::default(),
            latency_floor_s: DEFAULT_LATENCY_FLOOR,
            looping: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub clients: usize,
    /// Total transcoding workers K.
    pub workers: usize,
    pub segment_duration_s: Seconds,
    pub horizon_s: Seconds,
    /// Rate of the exponential inter-arrival distribution, per second.
    pub arrival_rate: f64,
    pub seeds: Seeds,
    pub clock: ClockMode,
    /// Experiment seconds per real second in wall mode.
    pub time_scale: f64,
    /// Sequences and ladder. Segment durations and stored ranks are replaced
    /// from `segment_duration_s` and `variant`.
    pub catalog: CatalogConfig,
    pub latency: LatencyModelConfig,
    pub cache_capacity_bytes: u64,
    /// 0 = unbounded.
    pub queue_bound: usize,
    pub prioritize_demand: bool,
    pub client: ClientConfig,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::T,
            clients: 4,
            workers: 4,
            segment_duration_s: 2.0,
            horizon_s: 600.0,
            arrival_rate: 0.1,
            seeds: Seeds::default(),
            clock: ClockMode::Virtual,
            time_scale: 1.0,
            catalog: CatalogConfig::default(),
            latency: LatencyModelConfig::default(),
            cache_capacity_bytes: DEFAULT_CACHE_CAPACITY,
            queue_bound: 0,
            prioritize_demand: false,
            client: ClientConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.clients == 0 {
            return bad("clients must be at least 1");
        }
        if !(self.horizon_s > 0.0) {
            return bad("horizon must be positive");
        }
        if !(self.arrival_rate > 0.0) {
            return bad("arrival rate must be positive");
        }
        if self.variant.transcodes() && self.workers == 0 {
            return bad("transcoding variants need at least one worker");
        }
        if !(self.segment_duration_s > 0.0) {
            return bad("segment duration must be positive");
        }
        if !(self.time_scale > 0.0) {
            return bad("time scale must be positive");
        }
        self.client
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// The catalog this experiment serves.
    pub fn catalog_config(&self) -> CatalogConfig {
        let mut c = self.catalog.clone();
        for s in &mut c.sequences {
            s.segment_duration_s = self.segment_duration_s;
        }
        c.stored_ranks = self
            .variant
            .stored_ranks(c.ladder.len() as u8)
            .into_iter()
            .collect();
        c.seed = self.seeds.catalog;
        c
    }

    pub fn latency_config(&self) -> LatencyModelConfig {
        LatencyModelConfig {
            seed: self.seeds.noise,
            ..self.latency.clone()
        }
    }

    pub fn backend_policy(&self) -> BackendPolicy {
        BackendPolicy {
            cache_capacity: self.cache_capacity_bytes,
            queue_bound: self.queue_bound,
            prioritize_demand: self.prioritize_demand,
            ..BackendPolicy::for_variant(self.variant, self.workers)
        }
    }

    /// Canonical JSON used for the output fingerprint.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Short label for directory names, e.g. `c24_k4_t2_TCP`.
    pub fn label(&self) -> String {
        format!(
            "c{}_k{}_t{}_{}",
            self.clients,
            self.workers,
            self.segment_duration_s,
            self.variant.as_str()
        )
    }
}

/// Axes of a scenario sweep. Each worker node contributes
/// `workers_per_node` workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixGrid {
    pub clients: Vec<usize>,
    pub worker_nodes: Vec<usize>,
    pub workers_per_node: usize,
    pub segment_durations_s: Vec<Seconds>,
    pub variants: Vec<Variant>,
}

pub const WORKERS_PER_NODE: usize = 4;

impl Default for MatrixGrid {
    fn default() -> Self {
        Self {
            clients: vec![4, 24, 40],
            worker_nodes: vec![1, 2],
            workers_per_node: WORKERS_PER_NODE,
            segment_durations_s: vec![2.0, 4.0],
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl MatrixGrid {
    /// A grid containing only `base`'s own point.
    pub fn singleton(base: &ExperimentConfig) -> Self {
        Self {
            clients: vec![base.clients],
            worker_nodes: vec![1],
            workers_per_node: base.workers,
            segment_durations_s: vec![base.segment_duration_s],
            variants: vec![base.variant],
        }
    }
}

/// On-disk layout: an `[experiment]` table and an optional `[matrix]` table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub matrix: MatrixGrid,
}

impl ConfigFile {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))
        }
    }
}
