//! One player streaming one sequence over a constant-rate link, first with
//! plenty of bandwidth then with a squeeze, on the virtual clock.

use std::sync::Arc;

use otfstream::backend::{Backend, BackendPolicy, Variant};
use otfstream::client::{
    select_quality, AbrConfig, BufferConfig, Client, ClientConfig, InProcessTransport,
};
use otfstream::content::{Catalog, CatalogConfig, RepresentationId};
use otfstream::netem::{BandwidthTrace, Link, DEFAULT_LATENCY_FLOOR};
use otfstream::runtime::VirtualRuntime;
use otfstream::server::MediaServer;
use otfstream::transcode::{LatencyModel, LatencyModelConfig, MockTranscoder};

fn session(bandwidth_bps: f64) {
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let variant = Variant::Tcf;
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
    let server = MediaServer::new(catalog, backend, rt.clone());
    let client = Client {
        id: 0,
        config: ClientConfig::default(),
        link: Link::new(
            BandwidthTrace::constant(bandwidth_bps),
            0.0,
            DEFAULT_LATENCY_FLOOR,
        ),
        transport: Arc::new(InProcessTransport::new(server)),
        runtime: rt,
    };
    let report = vrt
        .block_on(async move { client.run_session("seq0", 0, 600.0).await })
        .unwrap();
    let ranks: String = report
        .segments
        .iter()
        .map(|s| char::from(b'0' + s.rank.rank()))
        .collect();
    println!(
        "{:>4.0} Mbps: ranks {ranks} stalls={} startup={:.2?}s ended={:.1}s",
        bandwidth_bps / 1e6,
        report.stall_events,
        report.startup_delay,
        report.ended_at
    );
}

fn main() {
    let bitrates = [8_000_000, 13_500_000, 22_500_000, 38_000_000, 64_000_000];
    let (buf, abr) = (BufferConfig::default(), AbrConfig::default());
    let current = RepresentationId::new(3);
    for (buffer, tput) in [(1.0, 90e6), (5.0, 90e6), (9.0, 90e6), (9.0, 30e6)] {
        let next = select_quality(buffer, current, Some(tput), &bitrates, &buf, &abr);
        println!(
            "buffer {buffer:>4}s, {:>3.0} Mbps at R3 -> R{}",
            tput / 1e6,
            next.rank()
        );
    }
    for bw in [200e6, 60e6, 12e6] {
        session(bw);
    }
}
