use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;

use crate::content::{Manifest, RepresentationId};
use crate::runtime::Seconds;
use crate::server::http::{RETRY_HINT_HEADER, SERVICE_PATH_HEADER};
use crate::server::{MediaServer, Response, ServeError, ServicePath};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("status {status}: {message}")]
    Status {
        status: u16,
        message: String,
        retry_after: Option<Seconds>,
    },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl FetchError {
    /// 5xx and transport failures are retried; 4xx are final.
    pub fn is_retryable(&self) -> bool {
        match self {
            FetchError::Status { status, .. } => *status >= 500,
            FetchError::Transport(_) => true,
            FetchError::Protocol(_) => false,
        }
    }

    pub fn retry_after(&self) -> Option<Seconds> {
        match self {
            FetchError::Status { retry_after, .. } => *retry_after,
            _ => None,
        }
    }
}

impl From<ServeError> for FetchError {
    fn from(e: ServeError) -> Self {
        FetchError::Status {
            status: e.status(),
            retry_after: match e {
                ServeError::Overloaded { retry_after } => Some(retry_after),
                _ => None,
            },
            message: e.to_string(),
        }
    }
}

/// A response body as seen by the player: its size, and for manifests the
/// parsed document.
#[derive(Debug, Clone, PartialEq)]
pub struct Fetched {
    pub bytes: u64,
    pub path: Option<ServicePath>,
    pub manifest: Option<Manifest>,
}

impl Fetched {
    pub fn from_manifest(m: Manifest) -> Self {
        let bytes = serde_json::to_vec(&m).map_or(0, |v| v.len() as u64);
        Self {
            bytes,
            path: None,
            manifest: Some(m),
        }
    }
}

/// How a player reaches the media server. The returned futures resolve when
/// the server has produced its response; link shaping is applied by the
/// caller.
pub trait Transport: Send + Sync {
    fn manifest(&self, sequence: &str) -> BoxFuture<'static, Result<Manifest, FetchError>>;

    fn segment(
        &self,
        sequence: &str,
        rep: RepresentationId,
        index: u32,
    ) -> BoxFuture<'static, Result<Fetched, FetchError>>;
}

/// Direct calls into a [`MediaServer`] in the same process.
pub struct InProcessTransport {
    server: Arc<MediaServer>,
}

impl InProcessTransport {
    pub fn new(server: Arc<MediaServer>) -> Self {
        Self { server }
    }
}

impl Transport for InProcessTransport {
    fn manifest(&self, sequence: &str) -> BoxFuture<'static, Result<Manifest, FetchError>> {
        let server = self.server.clone();
        let path = format!("/manifest/{sequence}");
        async move {
            match server.serve(&path).await? {
                Response::Manifest(m) => Ok(m),
                Response::Segment { .. } => {
                    Err(FetchError::Protocol("segment body for manifest".into()))
                }
            }
        }
        .boxed()
    }

    fn segment(
        &self,
        sequence: &str,
        rep: RepresentationId,
        index: u32,
    ) -> BoxFuture<'static, Result<Fetched, FetchError>> {
        let server = self.server.clone();
        let sequence = sequence.to_string();
        async move {
            let (payload, path) = server.serve_segment(&sequence, rep, index).await?;
            Ok(Fetched {
                bytes: payload.len(),
                path: Some(path),
                manifest: None,
            })
        }
        .boxed()
    }
}

/// HTTP/1.1 client against a live server.
pub struct HttpTransport {
    client: reqwest::Client,
    base: String,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base: base_url.into().trim_end_matches('/').to_string(),
        }
    }

    fn get(
        &self,
        path: String,
    ) -> BoxFuture<'static, Result<(reqwest::header::HeaderMap, bytes::Bytes), FetchError>> {
        let req = self.client.get(format!("{}{path}", self.base));
        async move {
            let resp = req
                .send()
                .await
                .map_err(|e| FetchError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let headers = resp.headers().clone();
            let body = resp
                .bytes()
                .await
                .map_err(|e| FetchError::Transport(e.to_string()))?;
            if status != 200 {
                let retry_after = headers
                    .get(RETRY_HINT_HEADER)
                    .or_else(|| headers.get(reqwest::header::RETRY_AFTER))
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.parse::<f64>().ok());
                return Err(FetchError::Status {
                    status,
                    message: String::from_utf8_lossy(&body).into_owned(),
                    retry_after,
                });
            }
            Ok((headers, body))
        }
        .boxed()
    }
}

impl Transport for HttpTransport {
    fn manifest(&self, sequence: &str) -> BoxFuture<'static, Result<Manifest, FetchError>> {
        let fut = self.get(format!("/manifest/{sequence}"));
        async move {
            let (_, body) = fut.await?;
            serde_json::from_slice(&body).map_err(|e| FetchError::Protocol(e.to_string()))
        }
        .boxed()
    }

    fn segment(
        &self,
        sequence: &str,
        rep: RepresentationId,
        index: u32,
    ) -> BoxFuture<'static, Result<Fetched, FetchError>> {
        let fut = self.get(crate::content::segment_path(sequence, rep, index));
        async move {
            let (headers, body) = fut.await?;
            let path = headers
                .get(SERVICE_PATH_HEADER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok());
            Ok(Fetched {
                bytes: body.len() as u64,
                path,
                manifest: None,
            })
        }
        .boxed()
    }
}
