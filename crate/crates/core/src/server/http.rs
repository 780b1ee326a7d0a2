//! HTTP/1.1 binding of [`MediaServer`] for wall-clock runs.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::Router;

use super::{MediaServer, Response, ServeError};

/// Response header carrying the service path of a segment response.
pub const SERVICE_PATH_HEADER: &str = "x-service-path";
/// Fractional retry hint in experiment seconds; `Retry-After` carries the
/// same value rounded up to whole seconds.
pub const RETRY_HINT_HEADER: &str = "x-retry-after-s";

pub fn router(server: Arc<MediaServer>) -> Router {
    Router::new().fallback(dispatch).with_state(server)
}

async fn dispatch(
    State(server): State<Arc<MediaServer>>,
    method: Method,
    uri: Uri,
) -> HttpResponse {
    if method != Method::GET {
        return StatusCode::METHOD_NOT_ALLOWED.into_response();
    }
    match server.serve(uri.path()).await {
        Ok(Response::Manifest(m)) => match serde_json::to_vec(&m) {
            Ok(body) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
            Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        },
        Ok(Response::Segment { payload, path }) => (
            [
                (
                    header::CONTENT_TYPE,
                    HeaderValue::from_static("application/octet-stream"),
                ),
                (
                    header::HeaderName::from_static(SERVICE_PATH_HEADER),
                    HeaderValue::from_static(path.as_str()),
                ),
            ],
            payload.materialize(),
        )
            .into_response(),
        Err(e) => error_response(&e),
    }
}

fn error_response(e: &ServeError) -> HttpResponse {
    let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut resp = (status, e.to_string()).into_response();
    if let ServeError::Overloaded { retry_after } = e {
        let headers = resp.headers_mut();
        if let Ok(v) = HeaderValue::from_str(&format!("{}", retry_after.ceil().max(1.0) as u64)) {
            headers.insert(header::RETRY_AFTER, v);
        }
        if let Ok(v) = HeaderValue::from_str(&format!("{retry_after:.6}")) {
            headers.insert(header::HeaderName::from_static(RETRY_HINT_HEADER), v);
        }
    }
    resp
}

/// A listening server task; aborted on drop.
pub struct HttpServer {
    addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving on the
    /// ambient tokio runtime.
    pub async fn bind(server: Arc<MediaServer>, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let app = router(server);
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!("http server stopped: {e}");
            }
        });
        Ok(Self { addr, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}
