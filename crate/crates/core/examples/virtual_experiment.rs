//! A full fleet run on the virtual clock, written out as CSVs.

use otfstream::backend::Variant;
use otfstream::metrics::{request_cdf, DEFAULT_INSTANT_EPSILON};
use otfstream::orchestrator::{run_experiment, ExperimentConfig};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/virtual_experiment".into());
    let cfg = ExperimentConfig {
        variant: Variant::Tcpf,
        clients: 24,
        ..ExperimentConfig::default()
    };
    let res = run_experiment(&cfg).expect("experiment");
    res.write(out.as_ref()).expect("write csvs");
    let bundle = res.bundle();
    let cdf = request_cdf(&bundle.requests, DEFAULT_INSTANT_EPSILON).expect("requests");
    println!("{} in {:.2?}", cfg.label(), res.elapsed);
    println!(
        "{} sessions, {} requests, {} jobs",
        res.sessions.len(),
        res.requests.len(),
        res.jobs.len()
    );
    println!("stalls/session {:.3}", res.mean_stalls());
    println!(
        "response time p50 {:.3}s p90 {:.3}s, {:.1}% instantaneous",
        cdf.quantile(0.5),
        cdf.quantile(0.9),
        cdf.instantaneous * 100.0
    );
    println!("wrote {out}");
}
