//! Completion times over a step bandwidth trace, analytic and on the
//! virtual clock.

use otfstream::netem::{
    shaped_download, BandwidthTrace, Link, SyntheticTraceConfig, DEFAULT_LATENCY_FLOOR,
};
use otfstream::runtime::VirtualRuntime;

fn main() {
    // 40 Mbps for 2 s, a 1 s outage, then 10 Mbps; repeats every 5 s
    let trace =
        BandwidthTrace::with_period(&[(0.0, 40e6), (2.0, 0.0), (3.0, 10e6)], 5.0, true).unwrap();
    println!(
        "mean {:.1} Mbps over a {} s period",
        trace.mean_bps() / 1e6,
        trace.period()
    );
    for bytes in [1_000_000u64, 10_000_000, 12_000_000] {
        let t = trace.completion_time(bytes as f64 * 8.0, 0.0).unwrap();
        println!("{bytes:>10} bytes from t=0 done at {t:.3}s");
    }

    let link = Link::new(trace, 0.0, DEFAULT_LATENCY_FLOOR);
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let (done, now) = vrt
        .block_on(async move {
            let done = shaped_download(&link, 12_000_000, 0.5, &*rt, 60.0).await;
            (done, rt.now())
        })
        .unwrap();
    println!("shaped download from t=0.5 with floor: {done:?}, clock at {now:.3}");

    let synth = SyntheticTraceConfig::default().generate(7);
    println!("synthetic trace: mean {:.1} Mbps", synth.mean_bps() / 1e6);
    print!(
        "{}",
        synth
            .to_csv()
            .lines()
            .take(6)
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!();
}
