//! FIFO job queue shared by all transcoding workers.

use std::collections::VecDeque;
use std::task::Waker;

use crate::transcode::{JobOrigin, TranscodeJob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("job queue full ({bound} jobs)")]
pub struct QueueFull {
    pub bound: usize,
}

/// Jobs are handed out in enqueue order. Idle workers park a waker here and
/// one of them is woken per enqueued job.
pub struct JobQueue {
    jobs: VecDeque<TranscodeJob>,
    bound: Option<usize>,
    prioritize_demand: bool,
    idle: Vec<(usize, Waker)>,
}

impl JobQueue {
    /// `bound == 0` means unbounded.
    pub fn new(bound: usize, prioritize_demand: bool) -> Self {
        Self {
            jobs: VecDeque::new(),
            bound: (bound > 0).then_some(bound),
            prioritize_demand,
            idle: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.bound.is_some_and(|b| self.jobs.len() >= b)
    }

    pub fn push(&mut self, job: TranscodeJob) -> Result<(), QueueFull> {
        if let Some(bound) = self.bound.filter(|&b| self.jobs.len() >= b) {
            return Err(QueueFull { bound });
        }
        if self.prioritize_demand && job.origin == JobOrigin::Demand {
            let at = self
                .jobs
                .iter()
                .position(|j| j.origin == JobOrigin::Speculative)
                .unwrap_or(self.jobs.len());
            self.jobs.insert(at, job);
        } else {
            self.jobs.push_back(job);
        }
        if let Some((_, waker)) = (!self.idle.is_empty()).then(|| self.idle.remove(0)) {
            waker.wake();
        }
        Ok(())
    }

    /// Pops the head job, or parks `waker` for worker `worker` if empty.
    pub fn pop_or_park(&mut self, worker: usize, waker: &Waker) -> Option<TranscodeJob> {
        if let Some(job) = self.jobs.pop_front() {
            return Some(job);
        }
        match self.idle.iter_mut().find(|(w, _)| *w == worker) {
            Some((_, slot)) => slot.clone_from(waker),
            None => self.idle.push((worker, waker.clone())),
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = &TranscodeJob> {
        self.jobs.iter()
    }

    pub fn contains(&self, pred: impl Fn(&TranscodeJob) -> bool) -> bool {
        self.jobs.iter().any(pred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::{RepresentationId, SegmentDescriptor};
    use crate::transcode::JobOutcome;
    use std::sync::Arc;

    fn job(id: u64, origin: JobOrigin) -> TranscodeJob {
        TranscodeJob {
            id,
            target: SegmentDescriptor {
                sequence: Arc::from("s"),
                rep: RepresentationId::new(1),
                index: id as u32,
                duration: 2.0,
                size: 1,
            },
            source: RepresentationId::new(5),
            origin,
            enqueued_at: 0.0,
            started_at: None,
            finished_at: None,
            outcome: JobOutcome::Pending,
        }
    }

    #[test]
    fn fifo_and_bound() {
        let mut q = JobQueue::new(2, false);
        q.push(job(1, JobOrigin::Speculative)).unwrap();
        q.push(job(2, JobOrigin::Demand)).unwrap();
        assert_eq!(
            q.push(job(3, JobOrigin::Demand)),
            Err(QueueFull { bound: 2 })
        );
        let w = futures::task::noop_waker();
        assert_eq!(q.pop_or_park(0, &w).unwrap().id, 1);
        assert_eq!(q.pop_or_park(0, &w).unwrap().id, 2);
        assert!(q.pop_or_park(0, &w).is_none());
    }

    #[test]
    fn demand_priority_jumps_speculative_jobs_only() {
        let mut q = JobQueue::new(0, true);
        q.push(job(1, JobOrigin::Demand)).unwrap();
        q.push(job(2, JobOrigin::Speculative)).unwrap();
        q.push(job(3, JobOrigin::Demand)).unwrap();
        let order: Vec<u64> = q.iter().map(|j| j.id).collect();
        assert_eq!(order, vec![1, 3, 2]);
    }

    #[test]
    fn parked_worker_is_registered_once() {
        let mut q = JobQueue::new(0, false);
        let w = futures::task::noop_waker();
        assert!(q.pop_or_park(3, &w).is_none());
        assert!(q.pop_or_park(3, &w).is_none());
        assert_eq!(q.idle.len(), 1);
        q.push(job(1, JobOrigin::Demand)).unwrap();
        assert!(q.idle.is_empty());
    }
}
