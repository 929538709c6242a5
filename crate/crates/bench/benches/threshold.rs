use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ebr_guard::threshold::{percentile_target, DEFAULT_P};
use ebr_guard::{fit, segment_targets, sigmoid_transform, SigmoidParams, TargetOptions};
use ebr_guard_bench::fixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn percentile(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("percentile_target");
    for n in [100, 10_000] {
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &scores, |b, s| {
            b.iter(|| percentile_target(black_box(s), DEFAULT_P))
        });
    }
    group.finish();
}

fn fit_model(c: &mut Criterion) {
    let fx = fixture(10_000);
    let opts = TargetOptions::default();
    c.bench_function("segment_targets_and_fit_10k_log", |b| {
        b.iter(|| {
            let targets =
                segment_targets(black_box(&fx.data.engagement), DEFAULT_P, &opts).unwrap();
            fit(&targets, DEFAULT_P, opts.calibration).unwrap()
        })
    });
}

fn sigmoid(c: &mut Criterion) {
    let params = SigmoidParams::new(4.0, -2.0).unwrap();
    let scores: Vec<f64> = (0..1000).map(|i| i as f64 / 500.0 - 1.0).collect();
    c.bench_function("sigmoid_1000", |b| {
        b.iter(|| {
            scores
                .iter()
                .map(|&s| sigmoid_transform(s, params))
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, percentile, fit_model, sigmoid);
criterion_main!(benches);
