use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dsaga::baselines::{lbfgs_run, LbfgsConfig};
use dsaga::data::{generate_gaussian, partition, Covariance, Labeling};
use dsaga::dsaga::run_dsaga;
use dsaga::saga::init_saga;
use dsaga::theory::{sample_wishart, spectral_norm};
use dsaga::{ClusterConfig, Dataset, Objective, StepRule};
use std::hint::black_box;

fn logistic_data(n: usize, d: usize) -> Dataset {
    generate_gaussian(n, d, &Covariance::Identity, &Labeling::Classification, 1).unwrap()
}

fn saga_pass(c: &mut Criterion) {
    let obj = Objective::logistic(1e-3);
    let data = logistic_data(10_000, 50);
    let state = init_saga(&obj, &data, &[0.0; 50], StepRule::Auto, 0).unwrap();
    c.bench_function("saga pass n=10000 d=50", |b| {
        b.iter_batched(|| state.clone(), |mut s| s.run_steps(&obj, &data, data.len()), BatchSize::SmallInput)
    });
}

fn dsaga_round(c: &mut Criterion) {
    let obj = Objective::logistic(1e-3);
    let data = logistic_data(12_000, 100);
    let mut group = c.benchmark_group("dsaga round n=12000 d=100 U=1");
    group.sample_size(10);
    for k in [1usize, 8] {
        let shards = partition(&data, k, 0).unwrap();
        let config = ClusterConfig::new(k, 1, 1, 0);
        group.bench_function(format!("K={k}"), |b| b.iter(|| run_dsaga(&obj, &shards, &config, &[0.0; 100]).unwrap()));
    }
    group.finish();
}

fn pair_norm(c: &mut Criterion) {
    let m = sample_wishart(200, 2000, 0, 0) - sample_wishart(200, 2000, 0, 1);
    c.bench_function("spectral norm d=200", |b| b.iter(|| spectral_norm(black_box(&m))));
}

fn lbfgs(c: &mut Criterion) {
    let obj = Objective::logistic(1e-2);
    let data = logistic_data(5_000, 50);
    let mut group = c.benchmark_group("lbfgs");
    group.sample_size(10);
    group.bench_function("n=5000 d=50 to 1e-8", |b| {
        b.iter(|| lbfgs_run(&obj, &data, &[0.0; 50], LbfgsConfig { tol: 1e-8, ..LbfgsConfig::default() }).unwrap())
    });
    group.finish();
}

criterion_group!(benches, saga_pass, dsaga_round, pair_norm, lbfgs);
criterion_main!(benches);
