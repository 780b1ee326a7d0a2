//! Media server front end: answers manifests and stored segments from the
//! catalog and forwards every other segment request to the backend.
//!
//! The same [`MediaServer::serve`] entry point backs the in-process transport
//! used under the virtual clock and the HTTP router in [`http`].

pub mod http;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, ResponsePath};
use crate::content::{
    Catalog, ContentError, Manifest, RepresentationId, SegmentDescriptor, SegmentLookup,
    SegmentPayload,
};
use crate::runtime::{RuntimeHandle, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServicePath {
    Storage,
    Cache,
    WaitedInFlight,
    Transcoded,
    Error,
}

impl ServicePath {
    pub fn as_str(self) -> &'static str {
        match self {
            ServicePath::Storage => "storage",
            ServicePath::Cache => "cache",
            ServicePath::WaitedInFlight => "waited_in_flight",
            ServicePath::Transcoded => "transcoded",
            ServicePath::Error => "error",
        }
    }
}

impl fmt::Display for ServicePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ServicePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ServicePath::Storage,
            ServicePath::Cache,
            ServicePath::WaitedInFlight,
            ServicePath::Transcoded,
            ServicePath::Error,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown service path `{s}`"))
    }
}

impl From<ResponsePath> for ServicePath {
    fn from(p: ResponsePath) -> Self {
        match p {
            ResponsePath::Cache => ServicePath::Cache,
            ResponsePath::WaitedInFlight => ServicePath::WaitedInFlight,
            ResponsePath::Transcoded => ServicePath::Transcoded,
        }
    }
}

/// One served segment request, timed on the experiment clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub request_id: u64,
    pub descriptor: SegmentDescriptor,
    pub arrival: Seconds,
    pub response: Seconds,
    pub path: ServicePath,
    pub bytes: u64,
}

impl RequestRecord {
    pub fn latency(&self) -> Seconds {
        self.response - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServeError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("overloaded, retry after {retry_after:.3}s")]
    Overloaded { retry_after: Seconds },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServeError {
    pub fn status(&self) -> u16 {
        match self {
            ServeError::BadRequest(_) => 400,
            ServeError::NotFound(_) => 404,
            ServeError::Overloaded { .. } => 503,
            ServeError::Internal(_) => 500,
        }
    }
}

impl From<ContentError> for ServeError {
    fn from(e: ContentError) -> Self {
        ServeError::NotFound(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Manifest(Manifest),
    Segment {
        payload: SegmentPayload,
        path: ServicePath,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Manifest(String),
    Segment {
        sequence: String,
        rep: RepresentationId,
        index: u32,
    },
}

/// Parses `/manifest/{seq}` and `/content/{seq}/{rep}/{index}`.
pub fn parse_route(path: &str) -> Result<Route, ServeError> {
    let path = path.split(['?', '#']).next().unwrap_or_default();
    let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    let bad = || ServeError::BadRequest(format!("malformed path `{path}`"));
    match parts.as_slice() {
        ["manifest", seq] if !seq.is_empty() => Ok(Route::Manifest(seq.to_string())),
        ["content", seq, rep, index] if !seq.is_empty() => Ok(Route::Segment {
            sequence: seq.to_string(),
            rep: rep.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

pub struct MediaServer {
    catalog: Arc<Catalog>,
    backend: Arc<Backend>,
    runtime: RuntimeHandle,
    next_id: AtomicU64,
    records: Mutex<Vec<RequestRecord>>,
}

impl MediaServer {
    pub fn new(catalog: Arc<Catalog>, backend: Arc<Backend>, runtime: RuntimeHandle) -> Arc<Self> {
        Arc::new(Self {
            catalog,
            backend,
            runtime,
            next_id: AtomicU64::new(0),
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    pub async fn serve(&self, path: &str) -> Result<Response, ServeError> {
        match parse_route(path)? {
            Route::Manifest(seq) => Ok(Response::Manifest(self.catalog.manifest_for(&seq)?)),
            Route::Segment {
                sequence,
                rep,
                index,
            } => self
                .serve_segment(&sequence, rep, index)
                .await
                .map(|(payload, path)| Response::Segment { payload, path }),
        }
    }

    /// Resolves one segment and appends its [`RequestRecord`]. Requests that
    /// do not address a catalog segment are rejected without a record.
    pub async fn serve_segment(
        &self,
        sequence: &str,
        rep: RepresentationId,
        index: u32,
    ) -> Result<(SegmentPayload, ServicePath), ServeError> {
        let arrival = self.runtime.now();
        let desc = self.catalog.descriptor(sequence, rep, index)?;
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);

        let result = match self.catalog.get_segment(&desc)? {
            SegmentLookup::Stored(payload) => Ok((payload, ServicePath::Storage)),
            SegmentLookup::NotStored => match self.backend.handle(&desc).await {
                Ok(outcome) => Ok((outcome.payload, outcome.path.into())),
                Err(BackendError::Overloaded { retry_after }) => {
                    Err(ServeError::Overloaded { retry_after })
                }
                Err(BackendError::Invalid(e)) => Err(ServeError::NotFound(e.to_string())),
                Err(e) => Err(ServeError::Internal(e.to_string())),
            },
        };

        let (path, bytes) = match &result {
            Ok((payload, path)) => (*path, payload.len()),
            Err(_) => (ServicePath::Error, 0),
        };
        let record = RequestRecord {
            request_id,
            descriptor: desc,
            arrival,
            response: self.runtime.now().max(arrival),
            path,
            bytes,
        };
        self.records
            .lock()
            .expect("record buffer poisoned")
            .push(record);
        result
    }

    /// Buffered records ordered by request id.
    pub fn records(&self) -> Vec<RequestRecord> {
        let mut out = self.records.lock().expect("record buffer poisoned").clone();
        out.sort_by_key(|r| r.request_id);
        out
    }

    pub fn request_count(&self) -> u64 {
        self.next_id.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendPolicy, Variant};
    use crate::content::CatalogConfig;
    use crate::runtime::{spawn_with_handle, VirtualRuntime};
    use crate::transcode::{LatencyModel, LatencyModelConfig, MockTranscoder};

    fn setup(variant: Variant, rt: &VirtualRuntime) -> Arc<MediaServer> {
        let mut cfg = CatalogConfig::fixture(2.0);
        cfg.stored_ranks = variant.stored_ranks(5).into_iter().collect();
        let catalog = Arc::new(Catalog::new(&cfg).unwrap());
        let model = LatencyModel::new(&LatencyModelConfig::uniform(0.5, 1..=4, 0.0)).unwrap();
        let tx = Arc::new(MockTranscoder::new(catalog.clone(), model, rt.handle()));
        let backend = Backend::new(
            catalog.clone(),
            BackendPolicy::for_variant(variant, 4),
            tx,
            rt.handle(),
        );
        backend.start();
        MediaServer::new(catalog, backend, rt.handle())
    }

    #[test]
    fn routes() {
        assert_eq!(
            parse_route("/manifest/seq0").unwrap(),
            Route::Manifest("seq0".into())
        );
        assert_eq!(
            parse_route("/content/seq0/R3/7?x=1").unwrap(),
            Route::Segment {
                sequence: "seq0".into(),
                rep: RepresentationId::new(3),
                index: 7
            }
        );
        for bad in [
            "/",
            "/content/seq0/3",
            "/content/seq0/x/1",
            "/content/seq0/3/-1",
            "/manifest/",
            "/other/a",
        ] {
            assert_eq!(parse_route(bad).unwrap_err().status(), 400, "{bad}");
        }
    }

    #[test]
    fn storage_cold_transcode_and_errors() {
        let rt = VirtualRuntime::new();
        let server = setup(Variant::T, &rt);
        let srv = server.clone();
        rt.block_on(async move {
            let Response::Segment { path, payload } = srv.serve("/content/seq0/5/0").await.unwrap() else {
                panic!()
            };
            assert_eq!(path, ServicePath::Storage);
            assert_eq!(payload, srv.catalog().synthesize(&srv.catalog().descriptor("seq0", RepresentationId::new(5), 0).unwrap()).unwrap());
            let Response::Segment { path, .. } = srv.serve("/content/seq0/3/0").await.unwrap() else {
                panic!()
            };
            assert_eq!(path, ServicePath::Transcoded);
            assert_eq!(srv.serve("/content/seq9/3/0").await.unwrap_err().status(), 404);
            assert_eq!(srv.serve("/content/seq0/3/40").await.unwrap_err().status(), 404);
            assert_eq!(srv.serve("/content/seq0/9/0").await.unwrap_err().status(), 404);
            assert_eq!(srv.serve("/content/seq0/0/0").await.unwrap_err().status(), 400);
            assert!(matches!(srv.serve("/manifest/seq1").await.unwrap(), Response::Manifest(m) if m.segment_count == 40));
        })
        .unwrap();
        let recs = server.records();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].latency(), 0.0);
        assert!(
            (recs[1].latency() - 1.0).abs() < 1e-9,
            "service time 0.5 * 2s"
        );
    }

    #[test]
    fn fallback_rank_is_served_from_storage() {
        let rt = VirtualRuntime::new();
        let server = setup(Variant::Tcf, &rt);
        let path = rt
            .block_on(async move {
                server
                    .serve_segment("seq2", RepresentationId::new(1), 3)
                    .await
                    .unwrap()
                    .1
            })
            .unwrap();
        assert_eq!(path, ServicePath::Storage);
    }

    #[test]
    fn storage_latency_below_transcoded_under_load() {
        let rt = VirtualRuntime::new();
        let server = setup(Variant::T, &rt);
        let h = rt.handle();
        let srv = server.clone();
        rt.block_on(async move {
            let mut rxs = Vec::new();
            for i in 0..40u32 {
                let srv = srv.clone();
                let rank = if i % 3 == 0 { 5 } else { 1 + (i % 4) as u8 };
                rxs.push(spawn_with_handle(&*h, async move {
                    srv.serve_segment("seq1", RepresentationId::new(rank), i % 40)
                        .await
                        .unwrap();
                }));
            }
            for rx in rxs {
                rx.await.unwrap();
            }
        })
        .unwrap();
        let recs = server.records();
        let stored_max = recs
            .iter()
            .filter(|r| r.path == ServicePath::Storage)
            .map(|r| r.latency())
            .fold(0.0, f64::max);
        let mut transcoded: Vec<f64> = recs
            .iter()
            .filter(|r| r.path == ServicePath::Transcoded)
            .map(|r| r.latency())
            .collect();
        transcoded.sort_by(f64::total_cmp);
        assert!(stored_max < transcoded[transcoded.len() / 100]);
        assert!(recs.iter().all(|r| r.response >= r.arrival));
    }
}
