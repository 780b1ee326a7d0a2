//! Transcoding backend: cache lookup, request coalescing, the FIFO job queue
//! with its worker pool, and speculative transcoding of the next segment.
//!
//! All shared state sits behind one mutex so that check-then-register steps
//! (cache miss -> in-flight lookup -> enqueue) are atomic. Requests wait on a
//! oneshot channel and never occupy a worker.

mod cache;
mod policy;
mod queue;

pub use cache::{SegmentCache, TooLarge};
pub use policy::{BackendPolicy, Variant, DEFAULT_CACHE_CAPACITY};
pub use queue::{JobQueue, QueueFull};

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::Poll;

use futures::channel::oneshot;
use futures::FutureExt;

use crate::content::{Catalog, ContentError, SegmentDescriptor, SegmentPayload};
use crate::runtime::{RuntimeHandle, Seconds};
use crate::transcode::{
    JobOrigin, JobOutcome, TranscodeError, TranscodeJob, Transcoder, WorkerContext,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    Invalid(#[from] ContentError),
    #[error("{0} is stored at the origin and must not reach the backend")]
    StoredAtOrigin(SegmentDescriptor),
    #[error("job queue full, retry after {retry_after:.3}s")]
    Overloaded { retry_after: Seconds },
    #[error("transcode failed: {0}")]
    Transcode(#[from] TranscodeError),
    #[error("backend shut down before the job completed")]
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponsePath {
    Cache,
    WaitedInFlight,
    Transcoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Disabled,
    EndOfSequence,
    Cached,
    StoredAtOrigin,
    Duplicate,
    QueueFull,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Speculation {
    Enqueued(SegmentDescriptor),
    Skipped(SkipReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOutcome {
    pub payload: SegmentPayload,
    pub path: ResponsePath,
    pub speculation: Option<Speculation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackendStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub coalesced: u64,
    pub demand_jobs: u64,
    pub speculative_jobs: u64,
    pub dropped_cached: u64,
    pub failed: u64,
    pub rejected: u64,
    pub max_running: usize,
}

type Waiter = oneshot::Sender<Result<SegmentPayload, BackendError>>;

/// Descriptors with a queued or running job, and the requests waiting on them.
#[derive(Default)]
pub struct InFlightTable {
    waiting: HashMap<SegmentDescriptor, Vec<Waiter>>,
}

impl InFlightTable {
    pub fn contains(&self, desc: &SegmentDescriptor) -> bool {
        self.waiting.contains_key(desc)
    }

    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    fn register(&mut self, desc: SegmentDescriptor) {
        let prev = self.waiting.insert(desc, Vec::new());
        debug_assert!(prev.is_none(), "second job for an in-flight descriptor");
    }

    fn attach(
        &mut self,
        desc: &SegmentDescriptor,
    ) -> Option<oneshot::Receiver<Result<SegmentPayload, BackendError>>> {
        let list = self.waiting.get_mut(desc)?;
        let (tx, rx) = oneshot::channel();
        list.push(tx);
        Some(rx)
    }

    fn take(&mut self, desc: &SegmentDescriptor) -> Vec<Waiter> {
        self.waiting.remove(desc).unwrap_or_default()
    }
}

struct State {
    cache: SegmentCache,
    inflight: InFlightTable,
    queue: JobQueue,
    jobs: Vec<TranscodeJob>,
    stats: BackendStats,
    running: usize,
}

enum Step {
    Hit(SegmentPayload),
    Wait(
        oneshot::Receiver<Result<SegmentPayload, BackendError>>,
        ResponsePath,
    ),
}

pub struct Backend {
    catalog: Arc<Catalog>,
    policy: BackendPolicy,
    runtime: RuntimeHandle,
    transcoder: Arc<dyn Transcoder>,
    state: Mutex<State>,
    started: AtomicBool,
}

impl Backend {
    pub fn new(
        catalog: Arc<Catalog>,
        policy: BackendPolicy,
        transcoder: Arc<dyn Transcoder>,
        runtime: RuntimeHandle,
    ) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(State {
                cache: SegmentCache::new(policy.cache_capacity),
                inflight: InFlightTable::default(),
                queue: JobQueue::new(policy.queue_bound, policy.prioritize_demand),
                jobs: Vec::new(),
                stats: BackendStats::default(),
                running: 0,
            }),
            catalog,
            policy,
            runtime,
            transcoder,
            started: AtomicBool::new(false),
        })
    }

    /// Spawns the worker pool. Idempotent.
    pub fn start(self: &Arc<Self>) {
        if self.started.swap(true, Ordering::SeqCst) {
            return;
        }
        for worker in 0..self.policy.workers {
            let this = self.clone();
            self.runtime.spawn(this.worker_loop(worker).boxed());
        }
    }

    pub fn policy(&self) -> &BackendPolicy {
        &self.policy
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("backend state poisoned")
    }

    pub fn stats(&self) -> BackendStats {
        self.lock().stats.clone()
    }

    /// Every job ever enqueued, in enqueue order.
    pub fn jobs(&self) -> Vec<TranscodeJob> {
        self.lock().jobs.clone()
    }

    pub fn queue_len(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn in_flight(&self) -> usize {
        self.lock().inflight.len()
    }

    pub fn cache_bytes(&self) -> u64 {
        self.lock().cache.current_bytes()
    }

    pub fn is_cached(&self, desc: &SegmentDescriptor) -> bool {
        self.lock().cache.contains(desc)
    }

    /// Inserts directly into the cache (warm-up and tests).
    pub fn cache_put(
        &self,
        desc: SegmentDescriptor,
        payload: SegmentPayload,
    ) -> Result<Vec<SegmentDescriptor>, TooLarge> {
        self.lock().cache.put(desc, payload)
    }

    fn enqueue_locked(
        &self,
        st: &mut State,
        desc: &SegmentDescriptor,
        origin: JobOrigin,
    ) -> Result<(), QueueFull> {
        let job = TranscodeJob {
            id: st.jobs.len() as u64,
            target: desc.clone(),
            source: self.catalog.ladder().highest(),
            origin,
            enqueued_at: self.runtime.now(),
            started_at: None,
            finished_at: None,
            outcome: JobOutcome::Pending,
        };
        st.queue.push(job.clone())?;
        st.jobs.push(job);
        st.inflight.register(desc.clone());
        match origin {
            JobOrigin::Demand => st.stats.demand_jobs += 1,
            JobOrigin::Speculative => st.stats.speculative_jobs += 1,
        }
        Ok(())
    }

    fn speculate_locked(&self, st: &mut State, current: &SegmentDescriptor) -> Speculation {
        if !self.policy.speculative_enabled {
            return Speculation::Skipped(SkipReason::Disabled);
        }
        let next = match self
            .catalog
            .descriptor(&current.sequence, current.rep, current.index + 1)
        {
            Ok(d) => d,
            Err(_) => return Speculation::Skipped(SkipReason::EndOfSequence),
        };
        if self.catalog.ladder().is_stored(next.rep) {
            return Speculation::Skipped(SkipReason::StoredAtOrigin);
        }
        if self.policy.cache_enabled && st.cache.contains(&next) {
            return Speculation::Skipped(SkipReason::Cached);
        }
        if st.inflight.contains(&next) {
            return Speculation::Skipped(SkipReason::Duplicate);
        }
        match self.enqueue_locked(st, &next, JobOrigin::Speculative) {
            Ok(()) => Speculation::Enqueued(next),
            Err(_) => Speculation::Skipped(SkipReason::QueueFull),
        }
    }

    /// Enqueues a speculative job for the segment after `current`, unless it
    /// is out of range, cached, stored, already in flight or the queue is full.
    pub fn maybe_speculate(&self, current: &SegmentDescriptor) -> Speculation {
        let mut st = self.lock();
        self.speculate_locked(&mut st, current)
    }

    /// Serves a request for a rank that is not stored at the origin.
    pub async fn handle(
        &self,
        request: &SegmentDescriptor,
    ) -> Result<ResponseOutcome, BackendError> {
        let desc = self
            .catalog
            .descriptor(&request.sequence, request.rep, request.index)?;
        if self.catalog.ladder().is_stored(desc.rep) {
            return Err(BackendError::StoredAtOrigin(desc));
        }

        let (step, speculation) = {
            let mut st = self.lock();
            st.stats.requests += 1;
            let cached = if self.policy.cache_enabled {
                st.cache.get(&desc)
            } else {
                None
            };
            let step = if let Some(payload) = cached {
                st.stats.cache_hits += 1;
                Step::Hit(payload)
            } else if let Some(rx) = st.inflight.attach(&desc) {
                st.stats.coalesced += 1;
                Step::Wait(rx, ResponsePath::WaitedInFlight)
            } else {
                if self
                    .enqueue_locked(&mut st, &desc, JobOrigin::Demand)
                    .is_err()
                {
                    st.stats.rejected += 1;
                    return Err(BackendError::Overloaded {
                        retry_after: desc.duration,
                    });
                }
                let rx = st.inflight.attach(&desc).expect("just registered");
                Step::Wait(rx, ResponsePath::Transcoded)
            };
            let speculation = self
                .policy
                .speculative_enabled
                .then(|| self.speculate_locked(&mut st, &desc));
            (step, speculation)
        };

        let (payload, path) = match step {
            Step::Hit(payload) => (payload, ResponsePath::Cache),
            Step::Wait(rx, path) => (rx.await.map_err(|_| BackendError::Shutdown)??, path),
        };
        Ok(ResponseOutcome {
            payload,
            path,
            speculation,
        })
    }

    async fn next_job(&self, worker: usize) -> TranscodeJob {
        futures::future::poll_fn(
            |cx| match self.lock().queue.pop_or_park(worker, cx.waker()) {
                Some(job) => Poll::Ready(job),
                None => Poll::Pending,
            },
        )
        .await
    }

    async fn worker_loop(self: Arc<Self>, worker: usize) {
        let mut ctx = WorkerContext {
            worker,
            rng: self.transcoder.latency_model().worker_rng(worker),
        };
        loop {
            let job = self.next_job(worker).await;
            let id = job.id as usize;

            let dropped = {
                let mut st = self.lock();
                let now = self.runtime.now();
                let cached = if self.policy.cache_enabled {
                    st.cache.get(&job.target)
                } else {
                    None
                };
                match cached {
                    Some(payload) => {
                        let rec = &mut st.jobs[id];
                        rec.started_at = Some(now);
                        rec.finished_at = Some(now);
                        rec.outcome = JobOutcome::DroppedCached;
                        st.stats.dropped_cached += 1;
                        Some((payload, st.inflight.take(&job.target)))
                    }
                    None => {
                        st.jobs[id].started_at = Some(now);
                        st.running += 1;
                        st.stats.max_running = st.stats.max_running.max(st.running);
                        None
                    }
                }
            };
            if let Some((payload, waiters)) = dropped {
                for w in waiters {
                    let _ = w.send(Ok(payload));
                }
                continue;
            }

            let result = self.transcoder.transcode(&job, &mut ctx).await;

            let waiters = {
                let mut st = self.lock();
                st.running -= 1;
                let now = self.runtime.now();
                let rec = &mut st.jobs[id];
                rec.finished_at = Some(now);
                rec.outcome = if result.is_ok() {
                    JobOutcome::Completed
                } else {
                    JobOutcome::Failed
                };
                match &result {
                    Ok(payload) if self.policy.cache_enabled => {
                        let _ = st.cache.put(job.target.clone(), *payload);
                    }
                    Ok(_) => {}
                    Err(_) => st.stats.failed += 1,
                }
                st.inflight.take(&job.target)
            };
            for w in waiters {
                let _ = w.send(result.clone().map_err(BackendError::from));
            }
        }
    }
}
