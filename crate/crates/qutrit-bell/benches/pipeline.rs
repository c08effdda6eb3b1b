//! Throughput of the simulation and analysis stages, parallel vs sequential.
//! Build with `--no-default-features` to measure the fallback path under the
//! same harness.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use qutrit_bell::analysis::{count_coincidences, full_report, HistogramSpec};
use qutrit_bell::montecarlo::{
    run_manifest, simulate_run, simulate_run_seq, ScanPlan, SimConfig,
};

fn bench_config() -> SimConfig {
    SimConfig {
        pair_rate: 4.0e5,
        duration_per_step: 0.01,
        efficiency_a: 0.25,
        efficiency_b: 0.25,
        dark_rate_per_detector: 2.0e5,
        scan: ScanPlan {
            n_steps: 16,
            ..ScanPlan::default()
        },
        seed: 8,
        ..SimConfig::default()
    }
}

fn simulate(c: &mut Criterion) {
    let config = bench_config();
    let mut group = c.benchmark_group("simulate_run");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(4));
    group.bench_function("parallel", |b| b.iter(|| simulate_run(&config).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| simulate_run_seq(&config).unwrap())
    });
    group.finish();
}

fn analyze(c: &mut Criterion) {
    let config = bench_config();
    let (stream, _) = simulate_run(&config).unwrap();
    let manifest = run_manifest(&config).unwrap();
    let spec = HistogramSpec::for_delta_tau(config.delta_tau_ps);
    let mut group = c.benchmark_group("analysis");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(4));
    group.bench_function("count_and_report", |b| {
        b.iter(|| {
            let data = count_coincidences(&stream, &spec, &manifest).unwrap();
            full_report(&data).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, simulate, analyze);
criterion_main!(benches);
