//! Acceptance harness: one line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use futures::future::join_all;
use otfstream::backend::{Backend, BackendPolicy, SegmentCache, Variant};
use otfstream::content::{Catalog, CatalogConfig, SegmentPayload};
use otfstream::metrics::{JOBS_CSV, REQUESTS_CSV, SESSIONS_CSV};
use otfstream::orchestrator::{
    arrival_times, run_experiment, ExperimentConfig, NetworkConfig, Seeds, TraceSource,
};
use otfstream::runtime::WallRuntime;
use otfstream::server::http::HttpServer;
use otfstream::server::MediaServer;
use otfstream::transcode::{LatencyModel, LatencyModelConfig, MockTranscoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn config(variant: Variant, clients: usize, workers: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        clients,
        workers,
        segment_duration_s: 2.0,
        seeds: Seeds::all(seed),
        ..ExperimentConfig::default()
    }
}

/// Mean stalls per session, averaged over [`SEEDS`].
fn mean_stalls(variant: Variant, clients: usize, workers: usize) -> f64 {
    let per_seed: Vec<f64> = SEEDS
        .par_iter()
        .map(|&s| {
            run_experiment(&config(variant, clients, workers, s))
                .unwrap()
                .mean_stalls()
        })
        .collect();
    per_seed.iter().sum::<f64>() / per_seed.len() as f64
}

fn stall_table(variants: &[Variant], clients: usize, workers: usize) -> BTreeMap<Variant, f64> {
    variants
        .par_iter()
        .map(|&v| (v, mean_stalls(v, clients, workers)))
        .collect()
}

fn fmt_table(t: &BTreeMap<Variant, f64>) -> String {
    t.iter()
        .map(|(v, s)| format!("{v}={s:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn instantaneous_band() -> Outcome {
    let t0 = Instant::now();
    let fractions: Vec<f64> = SEEDS
        .iter()
        .map(|&s| {
            run_experiment(&config(Variant::T, 4, 4, s))
                .unwrap()
                .instantaneous_fraction()
        })
        .collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    check(
        (0.30..=0.55).contains(&mean) && secs < 30.0,
        format!("fraction={mean:.3} per-seed={fractions:.3?} wall={secs:.1}s"),
    )
}

fn variant_ordering() -> Outcome {
    let t0 = Instant::now();
    let t = stall_table(
        &[Variant::T, Variant::Tc, Variant::Tcf, Variant::Tcpf],
        24,
        4,
    );
    let secs = t0.elapsed().as_secs_f64();
    let (s_t, s_tc, s_tcf, s_tcpf) = (
        t[&Variant::T],
        t[&Variant::Tc],
        t[&Variant::Tcf],
        t[&Variant::Tcpf],
    );
    check(
        s_t >= s_tc && s_tc >= s_tcf && s_t >= s_tcpf && s_tcpf <= 0.5 * s_t && secs < 300.0,
        format!("{} wall={secs:.1}s", fmt_table(&t)),
    )
}

/// Mean stall time per session over [`SEEDS`]; reported alongside counts.
fn mean_stall_time(variant: Variant, clients: usize, workers: usize) -> f64 {
    let per_seed: Vec<f64> = SEEDS
        .par_iter()
        .map(|&s| {
            let r = run_experiment(&config(variant, clients, workers, s)).unwrap();
            r.sessions.iter().map(|s| s.stall_time).sum::<f64>() / r.sessions.len().max(1) as f64
        })
        .collect();
    per_seed.iter().sum::<f64>() / per_seed.len() as f64
}

fn speculation_crossover() -> Outcome {
    let low = stall_table(&[Variant::Tc, Variant::Tcp], 4, 4);
    let high = stall_table(&[Variant::Tc, Variant::Tcp], 40, 4);
    let low_ok = low[&Variant::Tcp] <= low[&Variant::Tc];
    let high_ok = high[&Variant::Tcp] >= high[&Variant::Tc];
    let time_tc = mean_stall_time(Variant::Tc, 40, 4);
    let time_tcp = mean_stall_time(Variant::Tcp, 40, 4);
    check(
        low_ok && high_ok,
        format!(
            "4 clients: {} | 40 clients: {} (stall time/session T+C={time_tc:.1}s T+C+P={time_tcp:.1}s)",
            fmt_table(&low),
            fmt_table(&high)
        ),
    )
}

fn baseline_purity() -> Outcome {
    let mut jobs = 0;
    let mut stalls = 0;
    let mut sessions = 0;
    for clients in [4, 24, 40] {
        for &s in &SEEDS {
            let mut cfg = config(Variant::B, clients, 4, s);
            jobs += run_experiment(&cfg).unwrap().jobs.len();
            cfg.network = NetworkConfig {
                traces: TraceSource::Constant {
                    bandwidth_bps: 1e12,
                },
                ..NetworkConfig::default()
            };
            let res = run_experiment(&cfg).unwrap();
            jobs += res.jobs.len();
            sessions += res.sessions.len();
            stalls += res
                .sessions
                .iter()
                .map(|s| s.stall_events as usize)
                .sum::<usize>();
        }
    }
    check(
        jobs == 0 && stalls == 0 && sessions > 0,
        format!("jobs={jobs} stalls={stalls} over {sessions} unconstrained sessions"),
    )
}

fn quality_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut per_seed = Vec::new();
    for &s in &SEEDS {
        let b = run_experiment(&config(Variant::B, 4, 4, s))
            .unwrap()
            .quality()
            .unwrap();
        let f = run_experiment(&config(Variant::Tcpf, 4, 4, s))
            .unwrap()
            .quality()
            .unwrap();
        let tv = otfstream::metrics::total_variation(&b.fractions, &f.fractions);
        worst = worst.max(tv);
        per_seed.push(tv);
    }
    check(
        worst <= 0.15,
        format!("max TV={worst:.3} per-seed={per_seed:.3?}"),
    )
}

fn single_flight() -> Outcome {
    let tokio_rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(8)
        .enable_all()
        .build()
        .unwrap();
    tokio_rt.block_on(async {
        let rt = WallRuntime::current(20.0).handle();
        let variant = Variant::Tc;
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
        let client = reqwest::Client::new();
        let url = format!("{}/content/seq2/2/11", http.base_url());
        let reqs = (0..64).map(|_| {
            let c = client.clone();
            let url = url.clone();
            tokio::spawn(async move {
                let r = c.get(url).send().await.ok()?;
                if r.status() != 200 {
                    return None;
                }
                r.bytes().await.ok()
            })
        });
        let bodies: Vec<_> = join_all(reqs)
            .await
            .into_iter()
            .filter_map(|r| r.ok().flatten())
            .collect();
        let jobs = server.backend().jobs().len();
        let identical = bodies.iter().all(|b| b == &bodies[0]);
        check(
            jobs == 1 && bodies.len() == 64 && identical,
            format!(
                "jobs={jobs} ok_responses={} identical={identical}",
                bodies.len()
            ),
        )
    })
}

fn lru_oracle() -> Outcome {
    let capacity = 1_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cache = SegmentCache::new(capacity);
    let mut oracle = common::ReferenceLru::new(capacity);
    let (mut hits, mut misses, mut evictions) = (0, 0, 0);
    for step in 0..10_000 {
        let key = rng.random_range(0..40u32);
        if rng.random_bool(0.5) {
            let size = rng.random_range(1..=430);
            let got = cache
                .put(common::key_desc(key), SegmentPayload::new(size, key as u64))
                .ok()
                .map(|v| v.into_iter().map(|d| d.index).collect::<Vec<_>>());
            let want = oracle.put(key, size);
            if got != want {
                return Err(format!("put diverged at step {step}: {got:?} vs {want:?}"));
            }
            evictions += want.map_or(0, |v| v.len());
        } else {
            let got = cache.get(&common::key_desc(key)).map(|p| p.len());
            let want = oracle.get(key);
            if got != want {
                return Err(format!("get diverged at step {step}"));
            }
            if want.is_some() {
                hits += 1
            } else {
                misses += 1
            }
        }
        if cache.current_bytes() > capacity {
            return Err(format!("capacity exceeded at step {step}"));
        }
    }
    Ok(format!("hits={hits} misses={misses} evictions={evictions}"))
}

fn determinism() -> Outcome {
    let configs = [
        config(Variant::Tcpf, 8, 4, 11),
        config(Variant::T, 24, 4, 12),
        config(Variant::Tcp, 40, 8, 13),
        config(Variant::B, 4, 4, 14),
    ];
    for cfg in &configs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(cfg).unwrap().write(a.path()).unwrap();
        run_experiment(cfg).unwrap().write(b.path()).unwrap();
        for f in [REQUESTS_CSV, SESSIONS_CSV, JOBS_CSV] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            if x != y {
                return Err(format!("{} {f} differs", cfg.label()));
            }
        }
    }
    Ok(format!("{} configs byte-identical", configs.len()))
}

fn netem_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let limit = 60.0;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for case in 0..1000 {
        let trace = common::grid_trace(&mut rng);
        let bits = rng.random_range(1e3..2e8);
        let start_ms = rng.random_range(0..5000u64);
        let start = start_ms as f64 * common::STEP;
        let exact = trace.completion_time(bits, start);
        match (exact, common::integrate_1ms(&trace, bits, start_ms, limit)) {
            (Some(t), Some(o)) => {
                worst = worst.max((o - t).abs());
                compared += 1;
            }
            // beyond the integration window
            (Some(t), None) if t > start + limit - common::STEP => {}
            (None, None) => {}
            (e, o) => return Err(format!("case {case}: analytic {e:?} vs oracle {o:?}")),
        }
    }
    check(
        worst <= common::STEP + 1e-9,
        format!(
            "{compared} finite cases, max deviation {:.3} ms",
            worst * 1e3
        ),
    )
}

fn arrival_ks() -> Outcome {
    let rate = 0.1;
    let starts = arrival_times(1000, rate, 99);
    let gaps: Vec<f64> = std::iter::once(starts[0])
        .chain(starts.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let d = common::ks_statistic(&gaps, |x| 1.0 - (-rate * x).exp());
    let crit = common::ks_critical(gaps.len(), 0.01);
    check(
        d < crit,
        format!("D={d:.4} critical={crit:.4} n={}", gaps.len()),
    )
}

fn worker_sensitivity() -> Outcome {
    let variants = [
        Variant::T,
        Variant::Tc,
        Variant::Tcp,
        Variant::Tcf,
        Variant::Tcpf,
    ];
    let k4 = stall_table(&variants, 24, 4);
    let k8 = stall_table(&variants, 24, 8);
    let ok = variants.iter().all(|v| k8[v] <= k4[v]);
    check(
        ok,
        format!("K=4: {} | K=8: {}", fmt_table(&k4), fmt_table(&k8)),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "instantaneous fraction band", instantaneous_band),
        (2, "variant ordering at high load", variant_ordering),
        (3, "speculation crossover", speculation_crossover),
        (4, "baseline purity", baseline_purity),
        (5, "quality distribution fidelity", quality_fidelity),
        (6, "single flight", single_flight),
        (7, "LRU oracle equivalence", lru_oracle),
        (8, "determinism", determinism),
        (9, "netem integral oracle", netem_oracle),
        (10, "arrival process KS", arrival_ks),
        (11, "worker count sensitivity", worker_sensitivity),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {id:>2} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name} ({secs:.1}s): {d}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
