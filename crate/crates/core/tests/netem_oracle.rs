mod common;

use common::{grid_trace, integrate_1ms, STEP};
use otfstream::netem::{shaped_download, BandwidthTrace, Link};
use otfstream::runtime::VirtualRuntime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_completion_matches_1ms_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let limit = 60.0;
    let mut compared = 0;
    for case in 0..300 {
        let trace = grid_trace(&mut rng);
        let bits = rng.random_range(1e3..2e8);
        let start_ms = rng.random_range(0..5000u64);
        let exact = trace.completion_time(bits, start_ms as f64 * STEP);
        let oracle = integrate_1ms(&trace, bits, start_ms, limit);
        match (exact, oracle) {
            (Some(t), Some(o)) => {
                assert!((o - t).abs() <= STEP + 1e-9, "case {case}: {t} vs {o}");
                compared += 1;
            }
            (Some(t), None) => assert!(t > start_ms as f64 * STEP + limit - STEP, "case {case}"),
            (None, Some(o)) => panic!("case {case}: oracle finished at {o}"),
            (None, None) => {}
        }
    }
    assert!(compared > 200);
}

#[test]
fn shaped_download_waits_on_the_clock() {
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let link = Link::new(
        BandwidthTrace::new(&[(0.0, 8e6), (0.5, 0.0), (1.5, 8e6)], true).unwrap(),
        0.0,
        0.0,
    );
    let h = rt.clone();
    let (done, now) = vrt
        .block_on(async move {
            let done = shaped_download(&link, 1_000_000, 0.0, &*h, 100.0).await;
            (done, h.now())
        })
        .unwrap();
    assert_eq!(done, Ok(2.0));
    assert_eq!(now, 2.0);
}

#[test]
fn dead_link_is_cut_off_at_deadline() {
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let link = Link::new(BandwidthTrace::constant(0.0), 0.0, 0.02);
    let h = rt.clone();
    let out = vrt
        .block_on(async move { shaped_download(&link, 10, 0.0, &*h, 30.0).await })
        .unwrap();
    assert!(out.is_err());
}

#[test]
fn links_do_not_share_capacity() {
    let a = Link::new(BandwidthTrace::constant(8e6), 0.0, 0.0);
    let b = Link::new(BandwidthTrace::constant(16e6), 0.0, 0.0);
    let alone = a.completion_time(2_000_000, 1.0);
    let _ = b.completion_time(2_000_000, 1.0);
    assert_eq!(alone, Some(3.0));
    assert_eq!(b.completion_time(2_000_000, 1.0), Some(2.0));
}
