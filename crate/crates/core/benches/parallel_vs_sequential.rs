use std::hint::black_box;

use byzrl::adversary::{AttackKind, AttackSpec};
use byzrl::harness::{run_estimate, EstimatorBlock};
use byzrl::mdp::envs;
use byzrl::online::{run_byzan_ucbvi, Aggregator, OnlineConfig};
use byzrl::par;
use byzrl::seed::{stream, StreamKind};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pools() -> [(&'static str, usize); 2] {
    let default = std::thread::available_parallelism().map_or(1, usize::from);
    [("sequential", 1), ("parallel", default)]
}

fn monte_carlo(c: &mut Criterion) {
    let block = EstimatorBlock {
        sigma: 1.0,
        alpha: 0.25,
        delta: 0.1,
        epsilon: 0.0,
        value_bounds: None,
        num_batches: 20,
        num_bad: 5,
        min_size: 1,
        max_size: 50,
        true_mean: 0.0,
        sample_sigma: None,
        trials: 500,
        attack: AttackSpec::new(AttackKind::FixedValue {
            value: 100.0,
            count: 50,
        }),
    };
    let mut group = c.benchmark_group("estimate_500_trials");
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::new(name, threads), |b| {
            b.iter(|| par::with_threads(threads, || run_estimate(black_box(&block), 1).unwrap()))
        });
    }
    group.finish();
}

fn online(c: &mut Criterion) {
    let mdp = envs::random_gapped(6, 3, 4, &mut stream(1, StreamKind::MdpSampling, 0)).unwrap();
    let config = OnlineConfig {
        num_agents: 16,
        true_bad: 4,
        alpha_param: 0.25,
        episodes: 500,
        delta: 0.05,
        seed: 1,
        attack: AttackSpec::new(AttackKind::MeanShift { delta: 2.0 }),
        aggregator: Aggregator::WeightedClique,
    };
    let mut group = c.benchmark_group("online_m16_k500");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::new(name, threads), |b| {
            b.iter(|| par::with_threads(threads, || run_byzan_ucbvi(&mdp, black_box(&config)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, online);
criterion_main!(benches);
