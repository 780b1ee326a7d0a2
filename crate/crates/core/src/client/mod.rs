//! Emulated adaptive-streaming player.
//!
//! A session fetches a manifest, then downloads segments one at a time. Each
//! response is pushed through the client's shaped [`Link`]; playback is
//! modeled analytically by [`PlayerState`], so the buffer level is exact at
//! every event rather than sampled on a tick.

mod player;
mod transport;

pub use player::{Phase, PhaseChange, PlayerEvent, PlayerState, SegmentLogEntry};
pub use transport::{FetchError, Fetched, HttpTransport, InProcessTransport, Transport};

use std::future::Future;
use std::pin::pin;

use futures::future::{select, Either};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::content::{Manifest, RepresentationId};
use crate::netem::{shaped_download, Link};
use crate::runtime::{RuntimeHandle, Seconds};
use crate::server::ServicePath;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientConfigError {
    #[error("buffer thresholds must satisfy panic < startup <= safe < target and resume > 0")]
    Thresholds,
    #[error("ewma alpha must be in (0, 1]")]
    Alpha,
    #[error("headroom must be positive")]
    Headroom,
}

/// Buffer thresholds in seconds of media.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    pub target: Seconds,
    pub safe: Seconds,
    pub panic: Seconds,
    pub resume: Seconds,
    pub startup: Seconds,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            target: 12.0,
            safe: 8.0,
            panic: 2.0,
            resume: 2.0,
            startup: 3.0,
        }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<(), ClientConfigError> {
        let ok = self.panic < self.startup
            && self.startup <= self.safe
            && self.safe < self.target
            && self.resume > 0.0;
        ok.then_some(()).ok_or(ClientConfigError::Thresholds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbrConfig {
    pub ewma_alpha: f64,
    /// Throughput must exceed the next rank's bitrate by this factor to
    /// switch up.
    pub headroom: f64,
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            ewma_alpha: 0.3,
            headroom: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_s: Seconds,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_s: 0.5,
            multiplier: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub buffer: BufferConfig,
    pub abr: AbrConfig,
    pub retry: RetryPolicy,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientConfigError> {
        self.buffer.validate()?;
        if !(self.abr.ewma_alpha > 0.0 && self.abr.ewma_alpha <= 1.0) {
            return Err(ClientConfigError::Alpha);
        }
        if !(self.abr.headroom > 0.0) {
            return Err(ClientConfigError::Headroom);
        }
        Ok(())
    }
}

/// Rank for the next segment.
///
/// | buffer            | decision                                   |
/// |-------------------|--------------------------------------------|
/// | `< panic`         | lowest rank                                |
/// | `< safe`          | one rank down                              |
/// | `>= safe`         | one rank up if throughput covers headroom  |
/// | otherwise         | keep                                       |
///
/// `bitrates[i]` is the bitrate of rank `i + 1`.
pub fn select_quality(
    buffer: Seconds,
    current: RepresentationId,
    throughput_bps: Option<f64>,
    bitrates: &[u64],
    buffer_cfg: &BufferConfig,
    abr: &AbrConfig,
) -> RepresentationId {
    let top = RepresentationId::new(bitrates.len().max(1) as u8);
    if buffer < buffer_cfg.panic {
        return RepresentationId::new(1);
    }
    if buffer < buffer_cfg.safe {
        return current.lower();
    }
    let next = current.higher(top);
    match throughput_bps {
        Some(tp)
            if next != current
                && tp >= bitrates[next.rank() as usize - 1] as f64 * abr.headroom =>
        {
            next
        }
        _ => current.min(top),
    }
}

/// Everything one client session produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub client_id: usize,
    pub session: u32,
    pub sequence: String,
    pub started_at: Seconds,
    pub ended_at: Seconds,
    pub stall_events: u32,
    pub stall_time: Seconds,
    /// `None` if playback never started.
    pub startup_delay: Option<Seconds>,
    pub segments: Vec<SegmentLogEntry>,
    pub events: Vec<PlayerEvent>,
    pub completed: bool,
    pub aborted: Option<String>,
}

enum Fetch<T> {
    Done(T),
    CutOff,
    Failed(FetchError),
}

/// Runs `fut` unless the clock reaches `deadline` first.
async fn until<F: Future>(rt: &RuntimeHandle, deadline: Seconds, fut: F) -> Option<F::Output> {
    let fut = pin!(fut);
    match select(fut, rt.sleep_until(deadline)).await {
        Either::Left((out, _)) => Some(out),
        Either::Right(_) => None,
    }
}

struct Transfer {
    fetched: Fetched,
    response_at: Seconds,
    done_at: Seconds,
}

/// One emulated player bound to its link and a server endpoint.
pub struct Client {
    pub id: usize,
    pub config: ClientConfig,
    pub link: Link,
    pub transport: std::sync::Arc<dyn Transport>,
    pub runtime: RuntimeHandle,
}

impl Client {
    /// Issues `request` with retries and pushes the response through the link.
    async fn fetch<F, Fut>(&self, horizon: Seconds, mut request: F) -> Fetch<Transfer>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<Fetched, FetchError>>,
    {
        let rt = &self.runtime;
        let policy = self.config.retry;
        let mut backoff = policy.initial_backoff_s;
        let mut attempt = 0;
        loop {
            match until(rt, horizon, request()).await {
                None => return Fetch::CutOff,
                Some(Ok(fetched)) => {
                    let response_at = rt.now();
                    return match shaped_download(
                        &self.link,
                        fetched.bytes,
                        response_at,
                        &**rt,
                        horizon,
                    )
                    .await
                    {
                        Ok(done_at) => Fetch::Done(Transfer {
                            fetched,
                            response_at,
                            done_at,
                        }),
                        Err(_) => Fetch::CutOff,
                    };
                }
                Some(Err(e)) if e.is_retryable() && attempt < policy.max_retries => {
                    attempt += 1;
                    let wait = e.retry_after().map_or(backoff, |hint| hint.max(backoff));
                    let wake = rt.now() + wait;
                    if wake >= horizon {
                        rt.sleep_until(horizon).await;
                        return Fetch::CutOff;
                    }
                    rt.sleep_until(wake).await;
                    backoff *= policy.multiplier;
                }
                Some(Err(e)) => return Fetch::Failed(e),
            }
        }
    }

    /// Streams `sequence` until it finishes playing or `horizon` is reached.
    pub async fn run_session(
        &self,
        sequence: &str,
        session: u32,
        horizon: Seconds,
    ) -> SessionReport {
        let rt = &self.runtime;
        let started_at = rt.now();
        let mut report = SessionReport {
            client_id: self.id,
            session,
            sequence: sequence.to_string(),
            started_at,
            ended_at: started_at,
            stall_events: 0,
            stall_time: 0.0,
            startup_delay: None,
            segments: Vec::new(),
            events: Vec::new(),
            completed: false,
            aborted: None,
        };

        let transport = self.transport.clone();
        let seq = sequence.to_string();
        let manifest: Manifest = match self
            .fetch(horizon, || {
                let t = transport.clone();
                let s = seq.clone();
                async move { t.manifest(&s).await.map(Fetched::from_manifest) }
            })
            .await
        {
            Fetch::Done(t) => match t.fetched.manifest {
                Some(m) => m,
                None => {
                    report.aborted = Some("manifest missing from response".into());
                    report.ended_at = rt.now();
                    return report;
                }
            },
            Fetch::CutOff => {
                report.ended_at = rt.now();
                return report;
            }
            Fetch::Failed(e) => {
                report.aborted = Some(format!("manifest: {e}"));
                report.ended_at = rt.now();
                return report;
            }
        };

        let bitrates = manifest.bitrates();
        let cfg = self.config;
        let mut player = PlayerState::new(cfg.buffer, manifest.duration_s, started_at);
        let mut cut = false;

        for index in 0..manifest.segment_count {
            // target-capped fetching
            loop {
                let now = rt.now();
                player.advance(now);
                if player.buffer() < cfg.buffer.target {
                    break;
                }
                let wake = now + (player.buffer() - cfg.buffer.target) + 1e-9;
                if wake >= horizon {
                    rt.sleep_until(horizon).await;
                    cut = true;
                    break;
                }
                rt.sleep_until(wake).await;
            }
            if cut {
                break;
            }

            let rank = if index == 0 {
                RepresentationId::new(1)
            } else {
                select_quality(
                    player.buffer(),
                    player.current(),
                    player.throughput(),
                    &bitrates,
                    &cfg.buffer,
                    &cfg.abr,
                )
            };
            player.set_current(rank);
            let request_at = rt.now();
            let t = transport.clone();
            let s: std::sync::Arc<str> = std::sync::Arc::from(sequence);
            let outcome = self
                .fetch(horizon, || {
                    let t = t.clone();
                    let s = s.clone();
                    async move { t.segment(&s, rank, index).await }
                })
                .await;
            match outcome {
                Fetch::Done(tr) => {
                    let media = manifest.segment_duration(index);
                    let transfer = tr.done_at - tr.response_at;
                    if transfer > 0.0 {
                        player.observe_throughput(
                            tr.fetched.bytes as f64 * 8.0 / transfer,
                            cfg.abr.ewma_alpha,
                        );
                    }
                    player.on_segment(
                        SegmentLogEntry {
                            index,
                            rank,
                            request_at,
                            response_at: tr.response_at,
                            download_end: tr.done_at,
                            bytes: tr.fetched.bytes,
                            path: tr.fetched.path,
                        },
                        media,
                        index + 1 == manifest.segment_count,
                    );
                }
                Fetch::CutOff => {
                    cut = true;
                    break;
                }
                Fetch::Failed(e) => {
                    report.aborted = Some(format!("segment {index}: {e}"));
                    break;
                }
            }
        }

        if !cut && report.aborted.is_none() {
            // drain the remaining buffer
            let now = rt.now();
            player.advance(now);
            let end = now + player.buffer();
            let stop = end.min(horizon);
            rt.sleep_until(stop).await;
            player.advance(stop);
        }
        let now = rt.now().min(horizon);
        player.advance(now);
        report.completed = player.is_finished();
        report.ended_at = rt.now();
        report.stall_events = player.stall_events();
        report.stall_time = player.stall_time();
        report.startup_delay = player.startup_delay();
        let (segments, events) = player.into_logs();
        report.segments = segments;
        report.events = events;
        report
    }

    /// Starts at `start` and plays back-to-back sessions on sequences drawn
    /// uniformly from `sequences` until `horizon`.
    pub async fn run(
        &self,
        start: Seconds,
        horizon: Seconds,
        sequences: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Vec<SessionReport> {
        let rt = &self.runtime;
        let mut reports = Vec::new();
        if start >= horizon || sequences.is_empty() {
            return reports;
        }
        rt.sleep_until(start).await;
        let mut session = 0;
        while rt.now() < horizon {
            let seq = &sequences[rng.random_range(0..sequences.len())];
            let began = rt.now();
            let report = self.run_session(seq, session, horizon).await;
            let aborted = report.aborted.is_some();
            reports.push(report);
            session += 1;
            if aborted {
                // keep the clock moving after a failure that took no time
                let wake = rt.now().max(began) + self.config.retry.initial_backoff_s;
                if wake >= horizon {
                    break;
                }
                rt.sleep_until(wake).await;
            }
        }
        reports
    }
}

/// Service path of a logged segment, if the transport reported one.
pub fn segment_path_label(entry: &SegmentLogEntry) -> &'static str {
    entry.path.map_or("", ServicePath::as_str)
}
