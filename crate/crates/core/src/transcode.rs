//! Transcoder abstraction and the latency-model mock.
//!
//! Service time for a target segment is `rho(rank) * T * (1 + eps)` where `T`
//! is the segment duration and `eps` is zero-mean Gaussian noise. The mock
//! waits that long on the experiment clock and returns the catalog's bytes
//! for the target descriptor.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use futures::FutureExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::content::{Catalog, RepresentationId, SegmentDescriptor, SegmentPayload};
use crate::runtime::{RuntimeHandle, Seconds};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranscodeError {
    #[error("no service ratio configured for {0}")]
    MissingRank(RepresentationId),
    #[error("{0} is stored at the origin; nothing to transcode")]
    Redundant(RepresentationId),
    #[error("source {0} is not stored at the origin")]
    SourceMissing(RepresentationId),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid latency model: {0}")]
    InvalidModel(String),
}

/// Override of the service ratio for one (rank, segment duration) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoOverride {
    pub rank: u8,
    pub segment_duration_s: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModelConfig {
    /// Keys are ranks as strings so the block reads naturally in TOML.
    pub per_rank_rho: BTreeMap<String, f64>,
    pub per_duration: Vec<RhoOverride>,
    pub noise_rel_std: f64,
    pub seed: u64,
}

impl Default for LatencyModelConfig {
    fn default() -> Self {
        Self {
            per_rank_rho: (1..=4).map(|r| (r.to_string(), 0.5)).collect(),
            per_duration: Vec::new(),
            noise_rel_std: 0.05,
            seed: 0,
        }
    }
}

impl LatencyModelConfig {
    pub fn uniform(rho: f64, ranks: std::ops::RangeInclusive<u8>, noise: f64) -> Self {
        Self {
            per_rank_rho: ranks.map(|r| (r.to_string(), rho)).collect(),
            noise_rel_std: noise,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    per_rank: BTreeMap<RepresentationId, f64>,
    per_duration: Vec<RhoOverride>,
    noise_rel_std: f64,
    seed: u64,
}

impl LatencyModel {
    pub fn new(config: &LatencyModelConfig) -> Result<Self, TranscodeError> {
        let mut per_rank = BTreeMap::new();
        for (key, &rho) in &config.per_rank_rho {
            let rep: RepresentationId = key.parse().map_err(TranscodeError::InvalidModel)?;
            if !(rho > 0.0) {
                return Err(TranscodeError::InvalidModel(format!(
                    "rho for {rep} must be positive, got {rho}"
                )));
            }
            per_rank.insert(rep, rho);
        }
        if config.per_duration.iter().any(|o| !(o.rho > 0.0)) {
            return Err(TranscodeError::InvalidModel(
                "override rho must be positive".into(),
            ));
        }
        if !(config.noise_rel_std >= 0.0) {
            return Err(TranscodeError::InvalidModel(
                "noise must be non-negative".into(),
            ));
        }
        Ok(Self {
            per_rank,
            per_duration: config.per_duration.clone(),
            noise_rel_std: config.noise_rel_std,
            seed: config.seed,
        })
    }

    /// Normalized service ratio t/T for `rep` at segment duration `duration`.
    pub fn rho(&self, rep: RepresentationId, duration: Seconds) -> Result<f64, TranscodeError> {
        if let Some(o) = self
            .per_duration
            .iter()
            .find(|o| o.rank == rep.rank() && (o.segment_duration_s - duration).abs() < 1e-9)
        {
            return Ok(o.rho);
        }
        self.per_rank
            .get(&rep)
            .copied()
            .ok_or(TranscodeError::MissingRank(rep))
    }

    /// True when every configured ratio is below 1 (transcoding outpaces playback).
    pub fn is_real_time(&self) -> bool {
        self.per_rank.values().all(|&r| r < 1.0) && self.per_duration.iter().all(|o| o.rho < 1.0)
    }

    /// Noise-free service time.
    pub fn nominal(&self, target: &SegmentDescriptor) -> Result<Seconds, TranscodeError> {
        Ok(self.rho(target.rep, target.duration)? * target.duration)
    }

    /// Draws one service time from `noise`.
    pub fn service_time(
        &self,
        target: &SegmentDescriptor,
        noise: &mut ChaCha8Rng,
    ) -> Result<Seconds, TranscodeError> {
        let base = self.nominal(target)?;
        if self.noise_rel_std == 0.0 {
            return Ok(base);
        }
        let eps = Normal::new(0.0, self.noise_rel_std)
            .expect("validated std")
            .sample(noise);
        Ok(base * (1.0 + eps).max(1e-3))
    }

    /// Independent noise stream for worker `worker`.
    pub fn worker_rng(&self, worker: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(worker as u64 + 1);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOrigin {
    Demand,
    Speculative,
}

impl JobOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            JobOrigin::Demand => "demand",
            JobOrigin::Speculative => "speculative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOutcome {
    Pending,
    Completed,
    Failed,
    /// Found in the cache at dequeue time; no work done.
    DroppedCached,
}

impl JobOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            JobOutcome::Pending => "pending",
            JobOutcome::Completed => "completed",
            JobOutcome::Failed => "failed",
            JobOutcome::DroppedCached => "dropped_cached",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscodeJob {
    pub id: u64,
    pub target: SegmentDescriptor,
    pub source: RepresentationId,
    pub origin: JobOrigin,
    pub enqueued_at: Seconds,
    pub started_at: Option<Seconds>,
    pub finished_at: Option<Seconds>,
    pub outcome: JobOutcome,
}

/// Per-worker state handed to the transcoder on every call.
pub struct WorkerContext {
    pub worker: usize,
    pub rng: ChaCha8Rng,
}

pub trait Transcoder: Send + Sync {
    /// Produces the target payload. The returned future occupies the calling
    /// worker until it resolves.
    fn transcode(
        &self,
        job: &TranscodeJob,
        ctx: &mut WorkerContext,
    ) -> BoxFuture<'static, Result<SegmentPayload, TranscodeError>>;

    fn latency_model(&self) -> &LatencyModel;
}

fn check_job(catalog: &Catalog, job: &TranscodeJob) -> Result<SegmentPayload, TranscodeError> {
    let ladder = catalog.ladder();
    if ladder.is_stored(job.target.rep) {
        return Err(TranscodeError::Redundant(job.target.rep));
    }
    if !ladder.is_stored(job.source) || job.source < job.target.rep {
        return Err(TranscodeError::SourceMissing(job.source));
    }
    catalog
        .synthesize(&job.target)
        .map_err(|e| TranscodeError::InvalidTarget(e.to_string()))
}

/// Latency-model mock that waits on the experiment clock.
pub struct MockTranscoder {
    catalog: Arc<Catalog>,
    model: LatencyModel,
    runtime: RuntimeHandle,
}

impl MockTranscoder {
    pub fn new(catalog: Arc<Catalog>, model: LatencyModel, runtime: RuntimeHandle) -> Self {
        Self {
            catalog,
            model,
            runtime,
        }
    }
}

impl Transcoder for MockTranscoder {
    fn transcode(
        &self,
        job: &TranscodeJob,
        ctx: &mut WorkerContext,
    ) -> BoxFuture<'static, Result<SegmentPayload, TranscodeError>> {
        let prepared = check_job(&self.catalog, job).and_then(|payload| {
            self.model
                .service_time(&job.target, &mut ctx.rng)
                .map(|t| (payload, t))
        });
        let rt = self.runtime.clone();
        async move {
            let (payload, service) = prepared?;
            rt.sleep_until(rt.now() + service).await;
            Ok(payload)
        }
        .boxed()
    }

    fn latency_model(&self) -> &LatencyModel {
        &self.model
    }
}

/// Burns CPU on the calling thread for the modeled service time. Used to
/// calibrate the latency model against real elapsed time.
pub struct BusyLoopTranscoder {
    catalog: Arc<Catalog>,
    model: LatencyModel,
}

impl BusyLoopTranscoder {
    pub fn new(catalog: Arc<Catalog>, model: LatencyModel) -> Self {
        Self { catalog, model }
    }
}

impl Transcoder for BusyLoopTranscoder {
    fn transcode(
        &self,
        job: &TranscodeJob,
        ctx: &mut WorkerContext,
    ) -> BoxFuture<'static, Result<SegmentPayload, TranscodeError>> {
        let result = check_job(&self.catalog, job).and_then(|payload| {
            let service = self.model.service_time(&job.target, &mut ctx.rng)?;
            let until = Instant::now() + Duration::from_secs_f64(service);
            let mut acc = 0u64;
            while Instant::now() < until {
                acc = std::hint::black_box(acc.wrapping_mul(6364136223846793005).wrapping_add(1));
            }
            Ok(payload)
        });
        futures::future::ready(result).boxed()
    }

    fn latency_model(&self) -> &LatencyModel {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub runs: usize,
    pub configured_rho: f64,
    /// Mean of measured t/T.
    pub measured_rho: f64,
    pub samples: Vec<Seconds>,
}

impl CalibrationReport {
    pub fn relative_error(&self) -> f64 {
        (self.measured_rho - self.configured_rho).abs() / self.configured_rho
    }
}

/// Runs `runs` consecutive transcodes of `target` and measures wall time.
pub fn calibrate(
    transcoder: &dyn Transcoder,
    target: &SegmentDescriptor,
    source: RepresentationId,
    runs: usize,
) -> Result<CalibrationReport, TranscodeError> {
    let configured_rho = transcoder
        .latency_model()
        .rho(target.rep, target.duration)?;
    let mut ctx = WorkerContext {
        worker: 0,
        rng: transcoder.latency_model().worker_rng(0),
    };
    let mut samples = Vec::with_capacity(runs);
    for i in 0..runs {
        let job = TranscodeJob {
            id: i as u64,
            target: target.clone(),
            source,
            origin: JobOrigin::Demand,
            enqueued_at: 0.0,
            started_at: None,
            finished_at: None,
            outcome: JobOutcome::Pending,
        };
        let start = Instant::now();
        futures::executor::block_on(transcoder.transcode(&job, &mut ctx))?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let measured_rho = samples.iter().sum::<f64>() / samples.len().max(1) as f64 / target.duration;
    Ok(CalibrationReport {
        runs,
        configured_rho,
        measured_rho,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::{build_catalog, CatalogConfig};
    use crate::runtime::VirtualRuntime;

    fn catalog(seg: f64) -> Arc<Catalog> {
        Arc::new(build_catalog(&CatalogConfig::fixture(seg)).unwrap())
    }

    fn job(catalog: &Catalog, rank: u8, index: u32) -> TranscodeJob {
        TranscodeJob {
            id: 0,
            target: catalog
                .descriptor("seq0", RepresentationId::new(rank), index)
                .unwrap(),
            source: RepresentationId::new(5),
            origin: JobOrigin::Demand,
            enqueued_at: 0.0,
            started_at: None,
            finished_at: None,
            outcome: JobOutcome::Pending,
        }
    }

    #[test]
    fn service_time_formula() {
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.6, 1..=4, 0.0)).unwrap();
        let mut rng = model.worker_rng(0);
        for (seg, expected) in [(2.0, 1.2), (4.0, 2.4)] {
            let c = catalog(seg);
            let d = c.descriptor("seq0", RepresentationId::new(2), 0).unwrap();
            let t = model.service_time(&d, &mut rng).unwrap();
            assert!((t - expected).abs() < 1e-12, "{t} vs {expected}");
        }
    }

    #[test]
    fn normalized_time_is_duration_invariant_without_noise() {
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=4, 0.0)).unwrap();
        let a = catalog(2.0)
            .descriptor("seq0", RepresentationId::new(3), 0)
            .unwrap();
        let b = catalog(4.0)
            .descriptor("seq0", RepresentationId::new(3), 0)
            .unwrap();
        assert_eq!(
            model.nominal(&a).unwrap() / 2.0,
            model.nominal(&b).unwrap() / 4.0
        );
    }

    #[test]
    fn duration_override_and_missing_rank() {
        let mut cfg = LatencyModelConfig::uniform(0.5, 1..=3, 0.0);
        cfg.per_duration.push(RhoOverride {
            rank: 2,
            segment_duration_s: 4.0,
            rho: 0.4,
        });
        let model = LatencyModel::new(&cfg).unwrap();
        assert_eq!(model.rho(RepresentationId::new(2), 4.0).unwrap(), 0.4);
        assert_eq!(model.rho(RepresentationId::new(2), 2.0).unwrap(), 0.5);
        assert_eq!(
            model.rho(RepresentationId::new(4), 2.0).unwrap_err(),
            TranscodeError::MissingRank(RepresentationId::new(4))
        );
        assert!(model.is_real_time());
        let bad = LatencyModelConfig::uniform(0.0, 1..=4, 0.0);
        assert!(LatencyModel::new(&bad).is_err());
    }

    #[test]
    fn noisy_times_are_positive_and_seeded() {
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=4, 0.5)).unwrap();
        let d = catalog(2.0)
            .descriptor("seq0", RepresentationId::new(1), 0)
            .unwrap();
        let draw = |w| {
            let mut rng = model.worker_rng(w);
            (0..100)
                .map(|_| model.service_time(&d, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert!(draw(0).iter().all(|&t| t > 0.0));
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn mock_waits_service_time_and_returns_target_bytes() {
        let c = catalog(4.0);
        let rt = VirtualRuntime::new();
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=4, 0.0)).unwrap();
        let mock = MockTranscoder::new(c.clone(), model.clone(), rt.handle());
        let j = job(&c, 2, 7);
        let expected_size = j.target.size;
        let h = rt.handle();
        let mut ctx = WorkerContext {
            worker: 0,
            rng: model.worker_rng(0),
        };
        let fut = mock.transcode(&j, &mut ctx);
        let (payload, at) = rt
            .block_on(async move {
                let p = fut.await.unwrap();
                (p, h.now())
            })
            .unwrap();
        assert_eq!(payload.len(), expected_size);
        assert_eq!(at, 2.0);
        assert_eq!(payload, c.synthesize(&j.target).unwrap());
    }

    #[test]
    fn redundant_and_missing_source_are_rejected() {
        let c = catalog(2.0);
        let rt = VirtualRuntime::new();
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=5, 0.0)).unwrap();
        let mock = MockTranscoder::new(c.clone(), model.clone(), rt.handle());
        let mut ctx = WorkerContext {
            worker: 0,
            rng: model.worker_rng(0),
        };
        let r5 = job(&c, 5, 0);
        let err = futures::executor::block_on(mock.transcode(&r5, &mut ctx)).unwrap_err();
        assert_eq!(err, TranscodeError::Redundant(RepresentationId::new(5)));
        let mut bad = job(&c, 2, 0);
        bad.source = RepresentationId::new(3);
        let err = futures::executor::block_on(mock.transcode(&bad, &mut ctx)).unwrap_err();
        assert_eq!(err, TranscodeError::SourceMissing(RepresentationId::new(3)));
    }

    #[test]
    fn busy_loop_calibration_mean_within_two_percent() {
        // Short segment keeps the test fast: rho * T = 12.5 ms per run.
        let cfg = CatalogConfig {
            sequences: vec![crate::content::SequenceConfig {
                id: "seq0".into(),
                duration_s: 1.0,
                segment_duration_s: 0.025,
            }],
            ..CatalogConfig::fixture(0.025)
        };
        let c = Arc::new(build_catalog(&cfg).unwrap());
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=4, 0.0)).unwrap();
        let busy = BusyLoopTranscoder::new(c.clone(), model);
        let target = c.descriptor("seq0", RepresentationId::new(2), 3).unwrap();
        let report = calibrate(&busy, &target, RepresentationId::new(5), 20).unwrap();
        assert_eq!(report.samples.len(), 20);
        assert!(
            report.relative_error() < 0.02,
            "measured {} vs {}",
            report.measured_rho,
            report.configured_rho
        );
    }
}
