//! Experiment driver: wires catalog, backend, server and a fleet of
//! clients together on one clock, runs to the horizon and collects records.

mod config;

pub use config::{
    ClockMode, ConfigFile, ExperimentConfig, MatrixGrid, NetworkConfig, Seeds, TraceSource,
    WORKERS_PER_NODE,
};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::backend::{Backend, BackendStats};
use crate::client::{Client, HttpTransport, InProcessTransport, SessionReport, Transport};
use crate::content::Catalog;
use crate::metrics::{
    self, JobRow, MetricsBundle, MetricsError, RequestRow, SegmentRow, SessionRow,
};
use crate::netem::{self, BandwidthTrace, Link};
use crate::runtime::{
    spawn_with_handle, RuntimeHandle, Seconds, SimError, VirtualRuntime, WallRuntime,
};
use crate::server::http::HttpServer;
use crate::server::{MediaServer, RequestRecord};
use crate::transcode::{LatencyModel, MockTranscoder, TranscodeJob};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("traces: {0}")]
    Trace(#[from] netem::TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("client task lost before finishing")]
    ClientLost,
}

/// Start times `Σ_{j≤i} X_j`, `X_j ~ Exp(rate)`.
pub fn arrival_times(clients: usize, rate: f64, seed: u64) -> Vec<Seconds> {
    let exp = Exp::new(rate).expect("positive arrival rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..clients)
        .map(|_| {
            t += exp.sample(&mut rng);
            t
        })
        .collect()
}

/// Per-client sequence-choice stream.
fn client_rng(seed: u64, client: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EC0_0000);
    rng.set_stream(client as u64 + 1);
    rng
}

/// One bandwidth trace per client.
pub fn client_traces(cfg: &ExperimentConfig) -> Result<Vec<BandwidthTrace>, ExperimentError> {
    let n = cfg.clients;
    let looping = cfg.network.looping;
    Ok(match &cfg.network.traces {
        TraceSource::Constant { bandwidth_bps } => {
            vec![BandwidthTrace::constant(*bandwidth_bps); n]
        }
        TraceSource::Synthetic(gen) => (0..n)
            .map(|i| {
                let t = gen.generate(
                    cfg.seeds
                        .traces
                        .wrapping_mul(1_000_003)
                        .wrapping_add(i as u64),
                );
                if looping {
                    t
                } else {
                    BandwidthTrace::with_period(&t.samples().collect::<Vec<_>>(), t.period(), false)
                        .expect("generated trace is valid")
                }
            })
            .collect(),
        TraceSource::Directory { path } => {
            let files = netem::trace_files(path)?;
            if files.is_empty() {
                return Err(ExperimentError::Config(format!(
                    "no *.csv traces in {}",
                    path.display()
                )));
            }
            let traces = files
                .iter()
                .map(|f| BandwidthTrace::from_csv_path(f, looping))
                .collect::<Result<Vec<_>, _>>()?;
            netem::assign_traces(traces.len(), n, cfg.seeds.traces)
                .into_iter()
                .map(|i| traces[i].clone())
                .collect()
        }
    })
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub requests: Vec<RequestRecord>,
    pub sessions: Vec<SessionReport>,
    pub jobs: Vec<TranscodeJob>,
    pub backend: BackendStats,
    pub start_times: Vec<Seconds>,
    pub elapsed: std::time::Duration,
}

impl ExperimentResult {
    pub fn bundle(&self) -> MetricsBundle {
        let variant = self.config.variant.label();
        MetricsBundle {
            requests: self.requests.iter().map(RequestRow::from).collect(),
            sessions: self
                .sessions
                .iter()
                .map(|s| SessionRow::from_report(s, variant))
                .collect(),
            segments: self
                .sessions
                .iter()
                .flat_map(SegmentRow::from_report)
                .collect(),
            jobs: self.jobs.iter().map(JobRow::from).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        Ok(self.bundle().write_dir(dir, &self.config.to_json())?)
    }

    /// Fraction of segment responses under the instantaneous epsilon.
    pub fn instantaneous_fraction(&self) -> f64 {
        metrics::request_cdf(&self.bundle().requests, metrics::DEFAULT_INSTANT_EPSILON)
            .map_or(0.0, |c| c.instantaneous)
    }

    pub fn mean_stalls(&self) -> f64 {
        metrics::stalls_per_session(self.sessions.iter().map(|s| s.stall_events))
            .map_or(0.0, |s| s.mean)
    }

    pub fn quality(&self) -> Option<metrics::QualitySummary> {
        let l = self.config.catalog.ladder.len();
        metrics::quality_proportions(
            self.sessions
                .iter()
                .flat_map(|s| s.segments.iter().map(|e| e.rank.rank())),
            l,
        )
        .ok()
    }
}

struct Stack {
    catalog: Arc<Catalog>,
    backend: Arc<Backend>,
    server: Arc<MediaServer>,
}

fn build_stack(cfg: &ExperimentConfig, rt: RuntimeHandle) -> Result<Stack, ExperimentError> {
    let catalog = Arc::new(
        Catalog::new(&cfg.catalog_config()).map_err(|e| ExperimentError::Config(e.to_string()))?,
    );
    if catalog.sequence_ids().next().is_none() {
        return Err(ExperimentError::Config("catalog has no sequences".into()));
    }
    let model = LatencyModel::new(&cfg.latency_config())
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    if cfg.variant.transcodes() {
        for (rep, _) in catalog
            .ladder()
            .iter()
            .filter(|(r, _)| !catalog.ladder().is_stored(*r))
        {
            model
                .rho(rep, cfg.segment_duration_s)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
    }
    let transcoder = Arc::new(MockTranscoder::new(catalog.clone(), model, rt.clone()));
    let backend = Backend::new(
        catalog.clone(),
        cfg.backend_policy(),
        transcoder,
        rt.clone(),
    );
    let server = MediaServer::new(catalog.clone(), backend.clone(), rt);
    Ok(Stack {
        catalog,
        backend,
        server,
    })
}

fn build_clients(
    cfg: &ExperimentConfig,
    transport: Arc<dyn Transport>,
    rt: &RuntimeHandle,
    starts: &[Seconds],
) -> Result<Vec<Client>, ExperimentError> {
    let traces = client_traces(cfg)?;
    Ok(traces
        .into_iter()
        .zip(starts)
        .enumerate()
        .map(|(id, (trace, &start))| Client {
            id,
            config: cfg.client,
            link: Link::new(trace, start, cfg.network.latency_floor_s),
            transport: transport.clone(),
            runtime: rt.clone(),
        })
        .collect())
}

async fn drive(
    clients: Vec<Client>,
    starts: Vec<Seconds>,
    sequences: Vec<String>,
    seed: u64,
    horizon: Seconds,
    rt: RuntimeHandle,
) -> Result<Vec<SessionReport>, ExperimentError> {
    let sequences = Arc::new(sequences);
    let handles: Vec<_> = clients
        .into_iter()
        .zip(starts)
        .map(|(client, start)| {
            let sequences = sequences.clone();
            spawn_with_handle(&*rt, async move {
                let mut rng = client_rng(seed, client.id);
                client.run(start, horizon, &sequences, &mut rng).await
            })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.extend(h.await.map_err(|_| ExperimentError::ClientLost)?);
    }
    Ok(out)
}

fn finish(
    cfg: &ExperimentConfig,
    stack: &Stack,
    sessions: Vec<SessionReport>,
    start_times: Vec<Seconds>,
    began: Instant,
) -> ExperimentResult {
    let horizon = cfg.horizon_s;
    let requests = stack
        .server
        .records()
        .into_iter()
        .filter(|r| r.response <= horizon)
        .collect();
    ExperimentResult {
        config: cfg.clone(),
        fingerprint: metrics::fingerprint(&cfg.to_json()),
        requests,
        sessions,
        jobs: stack.backend.jobs(),
        backend: stack.backend.stats(),
        start_times,
        elapsed: began.elapsed(),
    }
}

/// Runs one experiment to its horizon.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    match cfg.clock {
        ClockMode::Virtual => run_virtual(cfg),
        ClockMode::Wall => run_wall(cfg),
    }
}

fn run_virtual(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let began = Instant::now();
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let stack = build_stack(cfg, rt.clone())?;
    let starts = arrival_times(cfg.clients, cfg.arrival_rate, cfg.seeds.arrivals);
    let transport: Arc<dyn Transport> = Arc::new(InProcessTransport::new(stack.server.clone()));
    let clients = build_clients(cfg, transport, &rt, &starts)?;
    let sequences: Vec<String> = stack.catalog.sequence_ids().map(str::to_string).collect();
    let backend = stack.backend.clone();
    let main_rt = rt.clone();
    let (seed, horizon) = (cfg.seeds.arrivals, cfg.horizon_s);
    let task_starts = starts.clone();
    let sessions = vrt.block_on(async move {
        backend.start();
        drive(clients, task_starts, sequences, seed, horizon, main_rt).await
    })??;
    Ok(finish(cfg, &stack, sessions, starts, began))
}

fn run_wall(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let began = Instant::now();
    let tokio_rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    tokio_rt.block_on(async {
        let rt = WallRuntime::current(cfg.time_scale).handle();
        let stack = build_stack(cfg, rt.clone())?;
        let http = HttpServer::bind(stack.server.clone(), ([127, 0, 0, 1], 0).into()).await?;
        let starts = arrival_times(cfg.clients, cfg.arrival_rate, cfg.seeds.arrivals);
        let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(http.base_url()));
        let clients = build_clients(cfg, transport, &rt, &starts)?;
        let sequences: Vec<String> = stack.catalog.sequence_ids().map(str::to_string).collect();
        stack.backend.start();
        let sessions = drive(
            clients,
            starts.clone(),
            sequences,
            cfg.seeds.arrivals,
            cfg.horizon_s,
            rt,
        )
        .await?;
        drop(http);
        Ok(finish(cfg, &stack, sessions, starts, began))
    })
}

/// Cross product of `grid` applied to `base`.
pub fn scenario_matrix(base: &ExperimentConfig, grid: &MatrixGrid) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &seg in &grid.segment_durations_s {
        for &nodes in &grid.worker_nodes {
            for &clients in &grid.clients {
                for &variant in &grid.variants {
                    out.push(ExperimentConfig {
                        variant,
                        clients,
                        workers: nodes * grid.workers_per_node,
                        segment_duration_s: seg,
                        ..base.clone()
                    });
                }
            }
        }
    }
    out
}

/// Headline numbers of one configuration in a sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MatrixRow {
    pub label: String,
    pub variant: String,
    pub clients: usize,
    pub workers: usize,
    pub segment_duration_s: f64,
    pub sessions: usize,
    pub mean_stalls: f64,
    pub instantaneous_fraction: f64,
    pub mean_rank: f64,
    pub jobs: usize,
}

/// Runs every config (in parallel for virtual-clock runs), writing each
/// into `out/<label>/` and a `summary.csv` at the top.
pub fn run_matrix(
    configs: &[ExperimentConfig],
    out: &Path,
) -> Result<Vec<MatrixRow>, ExperimentError> {
    std::fs::create_dir_all(out)?;
    let one = |cfg: &ExperimentConfig| -> Result<MatrixRow, ExperimentError> {
        let res = run_experiment(cfg)?;
        let label = cfg.label();
        res.write(&out.join(&label))?;
        Ok(MatrixRow {
            label,
            variant: cfg.variant.label().to_string(),
            clients: cfg.clients,
            workers: cfg.workers,
            segment_duration_s: cfg.segment_duration_s,
            sessions: res.sessions.len(),
            mean_stalls: res.mean_stalls(),
            instantaneous_fraction: res.instantaneous_fraction(),
            mean_rank: res.quality().map_or(0.0, |q| q.mean_rank),
            jobs: res.jobs.len(),
        })
    };
    let rows: Vec<MatrixRow> = if configs.iter().all(|c| c.clock == ClockMode::Virtual) {
        configs.par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        configs.iter().map(one).collect::<Result<_, _>>()?
    };
    let mut w = csv::Writer::from_path(out.join("summary.csv")).map_err(MetricsError::from)?;
    for r in &rows {
        w.serialize(r).map_err(MetricsError::from)?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Variant;

    #[test]
    fn grid_sizes() {
        let base = ExperimentConfig::default();
        let all = scenario_matrix(&base, &MatrixGrid::default());
        assert_eq!(all.len(), 72);
        assert!(all.iter().any(|c| c.workers == 8));
        assert!(all.iter().all(|c| c.workers == 4 || c.workers == 8));
        let one = scenario_matrix(&base, &MatrixGrid::singleton(&base));
        assert_eq!(one, vec![base]);
    }

    #[test]
    fn arrivals_are_cumulative_and_seeded() {
        let a = arrival_times(1000, 0.1, 7);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(a, arrival_times(1000, 0.1, 7));
        let mean_gap = a.last().unwrap() / 1000.0;
        assert!((mean_gap - 10.0).abs() < 0.5, "mean gap {mean_gap}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let file = ConfigFile::default();
        let text = toml::to_string(&file).unwrap();
        let back: ConfigFile = toml::from_str(&text).unwrap();
        assert_eq!(back, file);
        let partial: ConfigFile =
            toml::from_str("[experiment]\nvariant = \"TCP\"\nclients = 24\n").unwrap();
        assert_eq!(partial.experiment.variant, Variant::Tcp);
        assert_eq!(partial.experiment.clients, 24);
        assert_eq!(partial.experiment.horizon_s, 600.0);
    }

    #[test]
    fn small_virtual_run_baseline() {
        let cfg = ExperimentConfig {
            variant: Variant::B,
            clients: 3,
            horizon_s: 120.0,
            network: NetworkConfig {
                traces: TraceSource::Constant { bandwidth_bps: 1e9 },
                ..NetworkConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let res = run_experiment(&cfg).unwrap();
        assert!(res.jobs.is_empty());
        assert!(!res.sessions.is_empty());
        assert!(res.sessions.iter().all(|s| s.stall_events == 0));
        assert!(res.requests.iter().all(|r| r.response <= cfg.horizon_s));
    }
}
