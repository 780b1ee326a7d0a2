//! Record export and the three result aggregations: response-time CDF,
//! stalls per session and streamed-quality proportions.
//!
//! Every CSV starts with a `# schema=v1 fingerprint=<hex>` comment line so
//! downstream tools can reject files from a different configuration.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::client::SessionReport;
use crate::server::RequestRecord;
use crate::transcode::TranscodeJob;

pub const SCHEMA_VERSION: &str = "v1";
pub const DEFAULT_INSTANT_EPSILON: f64 = 0.010;

pub const REQUESTS_CSV: &str = "requests.csv";
pub const SESSIONS_CSV: &str = "sessions.csv";
pub const SEGMENTS_CSV: &str = "segments.csv";
pub const JOBS_CSV: &str = "jobs.csv";
pub const CONFIG_JSON: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file}: missing or malformed schema header")]
    MissingHeader { file: String },
    #[error("{file}: schema {found}, expected {SCHEMA_VERSION}")]
    Schema { file: String, found: String },
    #[error("fingerprint mismatch: {0} vs {1}")]
    Fingerprint(String, String),
}

/// Short hex digest identifying a configuration.
pub fn fingerprint(config_json: &str) -> String {
    let digest = Sha256::digest(config_json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn f6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:.6}"))
}

fn opt_f6<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&format!("{v:.6}")),
        None => s.serialize_str(""),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub request_id: u64,
    pub seq: String,
    pub rep: u8,
    pub index: u32,
    #[serde(serialize_with = "f6")]
    pub arrival_s: f64,
    #[serde(serialize_with = "f6")]
    pub response_s: f64,
    pub path: String,
    pub bytes: u64,
}

impl RequestRow {
    pub fn latency(&self) -> f64 {
        self.response_s - self.arrival_s
    }
}

impl From<&RequestRecord> for RequestRow {
    fn from(r: &RequestRecord) -> Self {
        Self {
            request_id: r.request_id,
            seq: r.descriptor.sequence.to_string(),
            rep: r.descriptor.rep.rank(),
            index: r.descriptor.index,
            arrival_s: r.arrival,
            response_s: r.response,
            path: r.path.as_str().to_string(),
            bytes: r.bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub client_id: usize,
    pub seq: String,
    pub variant: String,
    pub stalls: u32,
    #[serde(serialize_with = "f6")]
    pub stall_time_s: f64,
    #[serde(serialize_with = "opt_f6")]
    pub startup_delay_s: Option<f64>,
}

impl SessionRow {
    pub fn from_report(r: &SessionReport, variant: &str) -> Self {
        Self {
            client_id: r.client_id,
            seq: r.sequence.clone(),
            variant: variant.to_string(),
            stalls: r.stall_events,
            stall_time_s: r.stall_time,
            startup_delay_s: r.startup_delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub client_id: usize,
    pub seq: String,
    pub index: u32,
    pub rep: u8,
    #[serde(serialize_with = "f6")]
    pub dl_start_s: f64,
    #[serde(serialize_with = "f6")]
    pub dl_end_s: f64,
}

impl SegmentRow {
    pub fn from_report(r: &SessionReport) -> Vec<Self> {
        r.segments
            .iter()
            .map(|s| Self {
                client_id: r.client_id,
                seq: r.sequence.clone(),
                index: s.index,
                rep: s.rank.rank(),
                dl_start_s: s.request_at,
                dl_end_s: s.download_end,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRow {
    pub seq: String,
    pub rep: u8,
    pub index: u32,
    pub origin: String,
    #[serde(serialize_with = "f6")]
    pub enqueued_s: f64,
    #[serde(serialize_with = "opt_f6")]
    pub started_s: Option<f64>,
    #[serde(serialize_with = "opt_f6")]
    pub finished_s: Option<f64>,
    pub outcome: String,
}

impl From<&TranscodeJob> for JobRow {
    fn from(j: &TranscodeJob) -> Self {
        Self {
            seq: j.target.sequence.to_string(),
            rep: j.target.rep.rank(),
            index: j.target.index,
            origin: j.origin.as_str().to_string(),
            enqueued_s: j.enqueued_at,
            started_s: j.started_at,
            finished_s: j.finished_at,
            outcome: j.outcome.as_str().to_string(),
        }
    }
}

fn header_line(fp: &str) -> String {
    format!("# schema={SCHEMA_VERSION} fingerprint={fp}\n")
}

/// Serializes `rows` as a versioned CSV document.
pub fn to_csv_string<T: Serialize>(
    rows: &[T],
    fp: &str,
    empty_header: &[&str],
) -> Result<String, MetricsError> {
    let mut out = header_line(fp).into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(!rows.is_empty())
            .from_writer(&mut out);
        if rows.is_empty() {
            w.write_record(empty_header)?;
        }
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

/// Parses the leading schema comment, returning the fingerprint.
pub fn read_header(first_line: &str, file: &str) -> Result<String, MetricsError> {
    let bad = || MetricsError::MissingHeader {
        file: file.to_string(),
    };
    let rest = first_line.trim().strip_prefix('#').ok_or_else(bad)?;
    let mut schema = None;
    let mut fp = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("schema", v)) => schema = Some(v),
            Some(("fingerprint", v)) => fp = Some(v),
            _ => {}
        }
    }
    let schema = schema.ok_or_else(bad)?;
    if schema != SCHEMA_VERSION {
        return Err(MetricsError::Schema {
            file: file.to_string(),
            found: schema.to_string(),
        });
    }
    fp.map(str::to_string).ok_or_else(bad)
}

/// Reads a versioned CSV, returning its fingerprint and rows.
pub fn read_csv<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(String, Vec<T>), MetricsError> {
    let name = path.display().to_string();
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let fp = read_header(&first, &name)?;
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((fp, rows))
}

/// All tables of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsBundle {
    pub requests: Vec<RequestRow>,
    pub sessions: Vec<SessionRow>,
    pub segments: Vec<SegmentRow>,
    pub jobs: Vec<JobRow>,
}

impl MetricsBundle {
    /// Writes the four CSVs plus `config.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, config_json: &str) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        let fp = fingerprint(config_json);
        let files = [
            (
                REQUESTS_CSV,
                to_csv_string(
                    &self.requests,
                    &fp,
                    &[
                        "request_id",
                        "seq",
                        "rep",
                        "index",
                        "arrival_s",
                        "response_s",
                        "path",
                        "bytes",
                    ],
                )?,
            ),
            (
                SESSIONS_CSV,
                to_csv_string(
                    &self.sessions,
                    &fp,
                    &[
                        "client_id",
                        "seq",
                        "variant",
                        "stalls",
                        "stall_time_s",
                        "startup_delay_s",
                    ],
                )?,
            ),
            (
                SEGMENTS_CSV,
                to_csv_string(
                    &self.segments,
                    &fp,
                    &["client_id", "seq", "index", "rep", "dl_start_s", "dl_end_s"],
                )?,
            ),
            (
                JOBS_CSV,
                to_csv_string(
                    &self.jobs,
                    &fp,
                    &[
                        "seq",
                        "rep",
                        "index",
                        "origin",
                        "enqueued_s",
                        "started_s",
                        "finished_s",
                        "outcome",
                    ],
                )?,
            ),
        ];
        for (name, body) in files {
            File::create(dir.join(name))?.write_all(body.as_bytes())?;
        }
        File::create(dir.join(CONFIG_JSON))?.write_all(config_json.as_bytes())?;
        Ok(())
    }

    /// Loads a directory written by [`MetricsBundle::write_dir`], checking
    /// that all tables carry the same fingerprint.
    pub fn read_dir(dir: &Path) -> Result<(String, Self), MetricsError> {
        let (fp, requests) = read_csv(&dir.join(REQUESTS_CSV))?;
        let check = |other: String| {
            if other == fp {
                Ok(())
            } else {
                Err(MetricsError::Fingerprint(fp.clone(), other))
            }
        };
        let (f, sessions) = read_csv(&dir.join(SESSIONS_CSV))?;
        check(f)?;
        let (f, segments) = read_csv(&dir.join(SEGMENTS_CSV))?;
        check(f)?;
        let (f, jobs) = read_csv(&dir.join(JOBS_CSV))?;
        check(f)?;
        let bundle = Self {
            requests,
            sessions,
            segments,
            jobs,
        };
        Ok((fp, bundle))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    /// `(latency, cumulative fraction)` at each distinct latency.
    pub points: Vec<(f64, f64)>,
    /// Fraction of latencies below the epsilon.
    pub instantaneous: f64,
}

impl Cdf {
    /// Right-continuous step evaluation.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 <= x);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        self.points
            .iter()
            .find(|p| p.1 >= q - 1e-12)
            .or(self.points.last())
            .map_or(0.0, |p| p.0)
    }
}

/// Empirical CDF of response latencies.
pub fn response_time_cdf(
    latencies: impl IntoIterator<Item = f64>,
    epsilon: f64,
) -> Result<Cdf, MetricsError> {
    let mut xs: Vec<f64> = latencies.into_iter().collect();
    if xs.is_empty() {
        return Err(MetricsError::Empty);
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => points.push((x, frac)),
        }
    }
    let instantaneous = xs.iter().filter(|&&x| x < epsilon).count() as f64 / n;
    Ok(Cdf {
        points,
        instantaneous,
    })
}

/// CDF over non-error segment responses.
pub fn request_cdf(rows: &[RequestRow], epsilon: f64) -> Result<Cdf, MetricsError> {
    response_time_cdf(
        rows.iter()
            .filter(|r| r.path != "error")
            .map(RequestRow::latency),
        epsilon,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct StallSummary {
    pub mean: f64,
    pub std_err: f64,
    pub counts: Vec<u32>,
}

pub fn stalls_per_session(
    counts: impl IntoIterator<Item = u32>,
) -> Result<StallSummary, MetricsError> {
    let counts: Vec<u32> = counts.into_iter().collect();
    if counts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let std_err = if counts.len() > 1 {
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(StallSummary {
        mean,
        std_err,
        counts,
    })
}

pub fn session_stalls(rows: &[SessionRow]) -> Result<StallSummary, MetricsError> {
    stalls_per_session(rows.iter().map(|r| r.stalls))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualitySummary {
    /// `fractions[i]` is the share of segments at rank `i + 1`.
    pub fractions: Vec<f64>,
    pub mean_rank: f64,
    pub segments: usize,
}

pub fn quality_proportions(
    ranks: impl IntoIterator<Item = u8>,
    ladder_len: usize,
) -> Result<QualitySummary, MetricsError> {
    let mut counts = vec![0usize; ladder_len];
    let mut total = 0usize;
    for r in ranks {
        let i = (r as usize).clamp(1, ladder_len) - 1;
        counts[i] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mean_rank = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (i + 1) as f64 * f)
        .sum();
    Ok(QualitySummary {
        fractions,
        mean_rank,
        segments: total,
    })
}

/// Quality proportions over segment rows, optionally for one sequence only.
pub fn segment_quality(
    rows: &[SegmentRow],
    sequence: Option<&str>,
    ladder_len: usize,
) -> Result<QualitySummary, MetricsError> {
    quality_proportions(
        rows.iter()
            .filter(|r| sequence.is_none_or(|s| r.seq == s))
            .map(|r| r.rep),
        ladder_len,
    )
}

/// Half the L1 distance between two distributions over the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0
}
