use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use derisk_core::kernels::{budget_top_n, build_synthetic_objective, log_sum_exp, softmax, SmoothObjective};
use derisk_core::red::{multistart_boost, RedConfig};

fn values(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919) % 1000) as f64 / 10.0).collect()
}

fn separation(c: &mut Criterion) {
    let mut g = c.benchmark_group("separation");
    for n in [64, 1024, 20_000] {
        let v = values(n);
        g.bench_with_input(BenchmarkId::new("log_sum_exp", n), &v, |b, v| b.iter(|| log_sum_exp(black_box(3.0), v)));
        g.bench_with_input(BenchmarkId::new("softmax", n), &v, |b, v| b.iter(|| softmax(black_box(3.0), v)));
        g.bench_with_input(BenchmarkId::new("budget_top_n", n), &v, |b, v| b.iter(|| budget_top_n(v, 8)));
    }
    g.finish();
}

fn synthetic(c: &mut Criterion) {
    let v = values(200);
    let obj = build_synthetic_objective(&v, 0.2, 1.0, 1.0, &[1.0; 200]).unwrap();
    let zeta = vec![0.002; 200];
    c.bench_function("synthetic_gradient_200", |b| b.iter(|| obj.gradient(black_box(&zeta))));

    let labels: Vec<String> = (0..200).map(|i| format!("f{i}")).collect();
    let cfg = RedConfig { n_runs: 8, ..RedConfig::default() };
    c.bench_function("red_multistart_200", |b| b.iter(|| multistart_boost(&v, &labels, 0.2, &cfg)));
}

criterion_group!(benches, separation, synthetic);
criterion_main!(benches);
