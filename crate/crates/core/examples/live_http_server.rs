//! Serves the fixture catalog over HTTP in real time and fetches a manifest
//! and a few segments with reqwest. Pass `--serve` to keep it running.

use std::sync::Arc;

use otfstream::backend::{Backend, BackendPolicy, Variant};
use otfstream::content::{Catalog, CatalogConfig};
use otfstream::runtime::WallRuntime;
use otfstream::server::http::{HttpServer, SERVICE_PATH_HEADER};
use otfstream::server::MediaServer;
use otfstream::transcode::{LatencyModel, LatencyModelConfig, MockTranscoder};

#[tokio::main]
async fn main() {
    let variant = Variant::Tcp;
    let rt = WallRuntime::current(1.0).handle();
    let mut cfg = CatalogConfig::fixture(2.0);
    cfg.stored_ranks = variant.stored_ranks(5).into_iter().collect();
    let catalog = Arc::new(Catalog::new(&cfg).unwrap());
    let model = LatencyModel::new(&LatencyModelConfig::default()).unwrap();
    let tx = Arc::new(MockTranscoder::new(catalog.clone(), model, rt.clone()));
    let backend = Backend::new(
        catalog.clone(),
        BackendPolicy::for_variant(variant, 4),
        tx,
        rt.clone(),
    );
    backend.start();
    let server = MediaServer::new(catalog, backend, rt);
    let http = HttpServer::bind(server.clone(), ([127, 0, 0, 1], 0).into())
        .await
        .unwrap();
    let base = http.base_url();
    println!("listening on {base}");

    let client = reqwest::Client::new();
    let manifest = client
        .get(format!("{base}/manifest/seq0"))
        .send()
        .await
        .unwrap();
    println!(
        "manifest: {} {} bytes",
        manifest.status(),
        manifest.bytes().await.unwrap().len()
    );
    // index 1 follows index 0 at the same rank, so speculation makes it fast
    for path in [
        "/content/seq0/5/0",
        "/content/seq0/3/0",
        "/content/seq0/3/1",
        "/content/seq0/9/0",
    ] {
        let t0 = std::time::Instant::now();
        let resp = client.get(format!("{base}{path}")).send().await.unwrap();
        let status = resp.status();
        let how = resp
            .headers()
            .get(SERVICE_PATH_HEADER)
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let len = resp.bytes().await.unwrap().len();
        println!(
            "{path:<20} {status} {len:>8} bytes {how:<10} {:.0?}",
            t0.elapsed()
        );
        if path.ends_with("/3/0") {
            tokio::time::sleep(std::time::Duration::from_millis(1100)).await;
        }
    }

    if std::env::args().any(|a| a == "--serve") {
        println!("serving until killed");
        std::future::pending::<()>().await;
    }
}
