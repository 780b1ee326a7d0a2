//! A reduced scenario grid, written as one directory per configuration plus
//! summary.csv.

use otfstream::backend::Variant;
use otfstream::orchestrator::{run_matrix, scenario_matrix, ExperimentConfig, MatrixGrid};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/scenario_matrix".into());
    let grid = MatrixGrid {
        clients: vec![4, 24],
        worker_nodes: vec![1, 2],
        segment_durations_s: vec![2.0],
        variants: vec![Variant::T, Variant::Tcp, Variant::Tcpf],
        ..MatrixGrid::default()
    };
    let configs = scenario_matrix(&ExperimentConfig::default(), &grid);
    let t0 = std::time::Instant::now();
    let rows = run_matrix(&configs, out.as_ref()).expect("matrix");
    for r in &rows {
        println!(
            "{:<20} stalls={:<7.3} instant={:.3}",
            r.label, r.mean_stalls, r.instantaneous_fraction
        );
    }
    println!(
        "{} configurations in {:.2?}, written to {out}",
        rows.len(),
        t0.elapsed()
    );
}
