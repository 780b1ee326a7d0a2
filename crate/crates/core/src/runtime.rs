//! Experiment clocks and task spawning.
//!
//! Every component that waits on time (transcode service, shaped downloads,
//! playback drain) does so through a [`Runtime`]. Two implementations exist:
//!
//! - [`VirtualRuntime`]: a single-threaded discrete-event executor. Time only
//!   advances when every task is blocked, jumping straight to the earliest
//!   pending timer. Runs are fully deterministic.
//! - [`WallRuntime`]: backed by tokio, sleeping in real time (optionally
//!   sped up by a scale factor).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Wake, Waker};
use std::time::{Duration, Instant};

use futures::channel::oneshot;
use futures::future::BoxFuture;
use futures::FutureExt;

/// Experiment-clock instant or duration, in seconds.
pub type Seconds = f64;

/// Clock plus spawner shared by every experiment component.
pub trait Runtime: Send + Sync + 'static {
    /// Current experiment time in seconds.
    fn now(&self) -> Seconds;

    /// Resolves once the experiment clock reaches `deadline`.
    fn sleep_until(&self, deadline: Seconds) -> BoxFuture<'static, ()>;

    /// Runs `task` concurrently with the caller.
    fn spawn(&self, task: BoxFuture<'static, ()>);
}

pub type RuntimeHandle = Arc<dyn Runtime>;

/// Sleeps for `duration` seconds of experiment time.
pub fn sleep(rt: &dyn Runtime, duration: Seconds) -> BoxFuture<'static, ()> {
    rt.sleep_until(rt.now() + duration.max(0.0))
}

/// Spawns `fut` and returns a receiver for its output.
///
/// The receiver yields `Canceled` if the task is dropped before finishing
/// (e.g. the virtual executor shut down).
pub fn spawn_with_handle<T, F>(rt: &dyn Runtime, fut: F) -> oneshot::Receiver<T>
where
    T: Send + 'static,
    F: Future<Output = T> + Send + 'static,
{
    let (tx, rx) = oneshot::channel();
    rt.spawn(
        async move {
            let _ = tx.send(fut.await);
        }
        .boxed(),
    );
    rx
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("simulation deadlocked at t={now:.6}s: no runnable tasks and no pending timers")]
    Deadlock { now: Seconds },
}

// ---------------------------------------------------------------------------
// Virtual time
// ---------------------------------------------------------------------------

struct TimerSlot {
    waker: Mutex<Option<Waker>>,
}

struct TimerEntry {
    deadline: Seconds,
    seq: u64,
    slot: Arc<TimerSlot>,
}

impl PartialEq for TimerEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for TimerEntry {}
impl PartialOrd for TimerEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TimerEntry {
    // Reversed: BinaryHeap is a max-heap and we want the earliest deadline,
    // ties broken by registration order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .deadline
            .total_cmp(&self.deadline)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Timers {
    heap: BinaryHeap<TimerEntry>,
    next_seq: u64,
}

struct Shared {
    now_bits: AtomicU64,
    timers: Mutex<Timers>,
    ready: Mutex<VecDeque<usize>>,
    spawned: Mutex<Vec<BoxFuture<'static, ()>>>,
}

impl Shared {
    fn now(&self) -> Seconds {
        f64::from_bits(self.now_bits.load(AtomicOrdering::SeqCst))
    }
}

struct TaskWaker {
    id: usize,
    queued: AtomicBool,
    shared: Arc<Shared>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        if !self.queued.swap(true, AtomicOrdering::SeqCst) {
            self.shared.ready.lock().unwrap().push_back(self.id);
        }
    }
}

struct VirtualSleep {
    deadline: Seconds,
    shared: Arc<Shared>,
    slot: Option<Arc<TimerSlot>>,
}

impl Future for VirtualSleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        if self.shared.now() >= self.deadline {
            return Poll::Ready(());
        }
        match &self.slot {
            Some(slot) => {
                *slot.waker.lock().unwrap() = Some(cx.waker().clone());
            }
            None => {
                let slot = Arc::new(TimerSlot {
                    waker: Mutex::new(Some(cx.waker().clone())),
                });
                let mut timers = self.shared.timers.lock().unwrap();
                let seq = timers.next_seq;
                timers.next_seq += 1;
                timers.heap.push(TimerEntry {
                    deadline: self.deadline,
                    seq,
                    slot: slot.clone(),
                });
                drop(timers);
                self.slot = Some(slot);
            }
        }
        Poll::Pending
    }
}

/// Deterministic discrete-event executor.
///
/// Tasks are polled in FIFO wake order; when nothing is runnable the clock
/// jumps to the earliest timer. Identical programs produce identical
/// interleavings.
#[derive(Clone)]
pub struct VirtualRuntime {
    shared: Arc<Shared>,
}

impl Default for VirtualRuntime {
    fn default() -> Self {
        Self::new()
    }
}

impl VirtualRuntime {
    pub fn new() -> Self {
        Self {
            shared: Arc::new(Shared {
                now_bits: AtomicU64::new(0f64.to_bits()),
                timers: Mutex::new(Timers::default()),
                ready: Mutex::new(VecDeque::new()),
                spawned: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn handle(&self) -> RuntimeHandle {
        Arc::new(self.clone())
    }

    /// Drives `main` (and everything it spawns) to completion.
    ///
    /// Tasks still pending when `main` finishes are dropped.
    pub fn block_on<T, F>(&self, main: F) -> Result<T, SimError>
    where
        T: Send + 'static,
        F: Future<Output = T> + Send + 'static,
    {
        let output: Arc<Mutex<Option<T>>> = Arc::new(Mutex::new(None));
        let sink = output.clone();
        // Main always gets task id 0, even if tasks were spawned beforehand.
        self.shared.spawned.lock().unwrap().insert(
            0,
            async move {
                let value = main.await;
                *sink.lock().unwrap() = Some(value);
            }
            .boxed(),
        );

        let mut tasks: Vec<Option<BoxFuture<'static, ()>>> = Vec::new();
        let mut wakers: Vec<Arc<TaskWaker>> = Vec::new();
        let main_id = 0usize;

        loop {
            let fresh: Vec<_> = self.shared.spawned.lock().unwrap().drain(..).collect();
            for fut in fresh {
                let id = tasks.len();
                tasks.push(Some(fut));
                let waker = Arc::new(TaskWaker {
                    id,
                    queued: AtomicBool::new(false),
                    shared: self.shared.clone(),
                });
                waker.wake_by_ref();
                wakers.push(waker);
            }

            let next = self.shared.ready.lock().unwrap().pop_front();
            if let Some(id) = next {
                let waker_arc = wakers[id].clone();
                waker_arc.queued.store(false, AtomicOrdering::SeqCst);
                let Some(fut) = tasks[id].as_mut() else {
                    continue;
                };
                let waker = Waker::from(waker_arc);
                let mut cx = Context::from_waker(&waker);
                if fut.as_mut().poll(&mut cx).is_ready() {
                    tasks[id] = None;
                    if id == main_id {
                        drop(tasks);
                        self.clear();
                        let value = output.lock().unwrap().take();
                        return Ok(value.expect("main task stores its output"));
                    }
                }
                continue;
            }

            if !self.shared.spawned.lock().unwrap().is_empty() {
                continue;
            }

            let entry = self.shared.timers.lock().unwrap().heap.pop();
            match entry {
                Some(entry) => {
                    if entry.deadline > self.shared.now() {
                        self.shared
                            .now_bits
                            .store(entry.deadline.to_bits(), AtomicOrdering::SeqCst);
                    }
                    if let Some(w) = entry.slot.waker.lock().unwrap().take() {
                        w.wake();
                    }
                }
                None => {
                    drop(tasks);
                    self.clear();
                    return Err(SimError::Deadlock {
                        now: self.shared.now(),
                    });
                }
            }
        }
    }
}

impl VirtualRuntime {
    // Timer slots and queued spawns hold wakers that point back at `shared`;
    // dropping them breaks the reference cycle.
    fn clear(&self) {
        self.shared.spawned.lock().unwrap().clear();
        self.shared.timers.lock().unwrap().heap.clear();
        self.shared.ready.lock().unwrap().clear();
    }
}

impl Runtime for VirtualRuntime {
    fn now(&self) -> Seconds {
        self.shared.now()
    }

    fn sleep_until(&self, deadline: Seconds) -> BoxFuture<'static, ()> {
        VirtualSleep {
            deadline,
            shared: self.shared.clone(),
            slot: None,
        }
        .boxed()
    }

    fn spawn(&self, task: BoxFuture<'static, ()>) {
        self.shared.spawned.lock().unwrap().push(task);
    }
}

// ---------------------------------------------------------------------------
// Wall time
// ---------------------------------------------------------------------------

/// Real-time clock on a tokio runtime. Experiment time is
/// `elapsed_since_start * scale`.
#[derive(Clone)]
pub struct WallRuntime {
    handle: tokio::runtime::Handle,
    start: Instant,
    scale: f64,
}

impl WallRuntime {
    pub fn new(handle: tokio::runtime::Handle, scale: f64) -> Self {
        assert!(scale > 0.0, "time scale must be positive");
        Self {
            handle,
            start: Instant::now(),
            scale,
        }
    }

    /// Uses the ambient tokio runtime; panics outside one.
    pub fn current(scale: f64) -> Self {
        Self::new(tokio::runtime::Handle::current(), scale)
    }

    pub fn handle(&self) -> RuntimeHandle {
        Arc::new(self.clone())
    }
}

impl Runtime for WallRuntime {
    fn now(&self) -> Seconds {
        self.start.elapsed().as_secs_f64() * self.scale
    }

    fn sleep_until(&self, deadline: Seconds) -> BoxFuture<'static, ()> {
        let real = Duration::from_secs_f64((deadline / self.scale).max(0.0));
        let at = tokio::time::Instant::from_std(self.start + real);
        tokio::time::sleep_until(at).boxed()
    }

    fn spawn(&self, task: BoxFuture<'static, ()>) {
        self.handle.spawn(task);
    }
}
