use crate::content::RepresentationId;
use crate::runtime::Seconds;
use crate::server::ServicePath;

use super::BufferConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Startup,
    Playing,
    Stalled,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseChange {
    PlaybackStarted,
    StallStarted,
    StallEnded,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerEvent {
    pub at: Seconds,
    pub change: PhaseChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLogEntry {
    pub index: u32,
    pub rank: RepresentationId,
    pub request_at: Seconds,
    pub response_at: Seconds,
    pub download_end: Seconds,
    pub bytes: u64,
    pub path: Option<ServicePath>,
}

/// Buffer and playback bookkeeping for one session.
///
/// Time only moves through [`PlayerState::advance`]; between calls playback
/// drains the buffer at one second of media per second.
#[derive(Debug, Clone)]
pub struct PlayerState {
    cfg: BufferConfig,
    total_media: Seconds,
    downloaded: Seconds,
    all_downloaded: bool,
    buffer: Seconds,
    position: Seconds,
    current: RepresentationId,
    phase: Phase,
    stall_events: u32,
    stall_time: Seconds,
    throughput: Option<f64>,
    clock: Seconds,
    session_start: Seconds,
    startup_delay: Option<Seconds>,
    log: Vec<SegmentLogEntry>,
    events: Vec<PlayerEvent>,
}

impl PlayerState {
    pub fn new(cfg: BufferConfig, total_media: Seconds, now: Seconds) -> Self {
        Self {
            cfg,
            total_media,
            downloaded: 0.0,
            all_downloaded: false,
            buffer: 0.0,
            position: 0.0,
            current: RepresentationId::new(1),
            phase: Phase::Startup,
            stall_events: 0,
            stall_time: 0.0,
            throughput: None,
            clock: now,
            session_start: now,
            startup_delay: None,
            log: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn buffer(&self) -> Seconds {
        self.buffer
    }

    pub fn position(&self) -> Seconds {
        self.position
    }

    pub fn downloaded(&self) -> Seconds {
        self.downloaded
    }

    pub fn total_media(&self) -> Seconds {
        self.total_media
    }

    pub fn current(&self) -> RepresentationId {
        self.current
    }

    pub fn set_current(&mut self, rep: RepresentationId) {
        self.current = rep;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn stall_events(&self) -> u32 {
        self.stall_events
    }

    pub fn stall_time(&self) -> Seconds {
        self.stall_time
    }

    pub fn startup_delay(&self) -> Option<Seconds> {
        self.startup_delay
    }

    pub fn throughput(&self) -> Option<f64> {
        self.throughput
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn log(&self) -> &[SegmentLogEntry] {
        &self.log
    }

    pub fn events(&self) -> &[PlayerEvent] {
        &self.events
    }

    pub fn into_logs(self) -> (Vec<SegmentLogEntry>, Vec<PlayerEvent>) {
        (self.log, self.events)
    }

    /// EWMA update; the first sample initializes the estimate.
    pub fn observe_throughput(&mut self, sample_bps: f64, alpha: f64) {
        self.throughput = Some(match self.throughput {
            None => sample_bps,
            Some(prev) => alpha * sample_bps + (1.0 - alpha) * prev,
        });
    }

    fn emit(&mut self, at: Seconds, change: PhaseChange) {
        self.events.push(PlayerEvent { at, change });
    }

    /// Plays out media up to `now`.
    pub fn advance(&mut self, now: Seconds) {
        if now <= self.clock {
            return;
        }
        let dt = now - self.clock;
        match self.phase {
            Phase::Playing if self.all_downloaded && dt >= self.buffer => {
                let end = self.clock + self.buffer;
                self.position += self.buffer;
                self.buffer = 0.0;
                self.phase = Phase::Finished;
                self.emit(end, PhaseChange::Finished);
            }
            Phase::Playing if dt > self.buffer => {
                let empty_at = self.clock + self.buffer;
                self.position += self.buffer;
                self.buffer = 0.0;
                self.phase = Phase::Stalled;
                self.stall_events += 1;
                self.stall_time += now - empty_at;
                self.emit(empty_at, PhaseChange::StallStarted);
            }
            Phase::Playing => {
                self.buffer -= dt;
                self.position += dt;
            }
            Phase::Stalled => self.stall_time += dt,
            Phase::Startup | Phase::Finished => {}
        }
        self.clock = now;
    }

    /// Appends a downloaded segment carrying `media` seconds.
    pub fn on_segment(&mut self, entry: SegmentLogEntry, media: Seconds, last: bool) {
        let now = entry.download_end;
        self.advance(now);
        self.buffer += media;
        self.downloaded += media;
        self.all_downloaded |= last;
        self.log.push(entry);
        match self.phase {
            Phase::Startup if self.buffer >= self.cfg.startup || self.all_downloaded => {
                self.phase = Phase::Playing;
                self.startup_delay = Some(now - self.session_start);
                self.emit(now, PhaseChange::PlaybackStarted);
            }
            Phase::Stalled if self.buffer >= self.cfg.resume || self.all_downloaded => {
                self.phase = Phase::Playing;
                self.emit(now, PhaseChange::StallEnded);
            }
            _ => {}
        }
    }
}
