//! All six variants on the same seeds and load, side by side.

use otfstream::backend::Variant;
use otfstream::metrics::session_stalls;
use otfstream::orchestrator::{run_experiment, ExperimentConfig, Seeds};
use rayon::prelude::*;

fn main() {
    let clients: usize = std::env::args()
        .nth(1)
        .map_or(24, |s| s.parse().expect("client count"));
    let workers: usize = std::env::args()
        .nth(2)
        .map_or(4, |s| s.parse().expect("worker count"));
    println!("{clients} clients, K={workers}, seeds 1..=3");
    println!(
        "{:<8} {:>8} {:>8} {:>8} {:>6}  per-rank share",
        "variant", "stalls", "stderr", "instant", "rank"
    );
    let rows: Vec<_> = Variant::ALL
        .par_iter()
        .map(|&v| {
            let runs: Vec<_> = (1..=3)
                .map(|s| {
                    let cfg = ExperimentConfig {
                        variant: v,
                        clients,
                        workers,
                        seeds: Seeds::all(s),
                        ..ExperimentConfig::default()
                    };
                    run_experiment(&cfg).expect("experiment")
                })
                .collect();
            let sessions: Vec<_> = runs.iter().flat_map(|r| r.bundle().sessions).collect();
            let stalls = session_stalls(&sessions).expect("sessions");
            let inst =
                runs.iter().map(|r| r.instantaneous_fraction()).sum::<f64>() / runs.len() as f64;
            let q = runs[0].quality().expect("segments");
            (v, stalls, inst, q)
        })
        .collect();
    for (v, stalls, inst, q) in rows {
        let shares: Vec<String> = q.fractions.iter().map(|f| format!("{f:.2}")).collect();
        println!(
            "{:<8} {:>8.3} {:>8.3} {:>8.3} {:>6.2}  [{}]",
            v.label(),
            stalls.mean,
            stalls.std_err,
            inst,
            q.mean_rank,
            shares.join(" ")
        );
    }
}
