//! Sequential vs rayon execution of the data-parallel hot paths.
//!
//! Without the `parallel` feature both variants run sequentially, which makes
//! the fallback's overhead visible as well.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dppsi::group::{batch_exp_with, gen_secret, hash_items, GroupElement};
use dppsi::oracles::{monte_carlo_pmf, sim_alg3, OracleScenario};
use dppsi::par::Parallelism;
use dppsi::RngMode;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn points(n: usize) -> Vec<GroupElement> {
    let items: Vec<Vec<u8>> = (0..n).map(|i| format!("bench-{i}").into_bytes()).collect();
    hash_items(&items, Parallelism::Parallel)
        .unwrap()
        .into_iter()
        .map(|h| h.point)
        .collect()
}

fn batch_exp(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_exp");
    group.sample_size(10);
    let k = gen_secret(&mut RngMode::Seeded(1).stream(0));
    for n in [1usize << 10, 1 << 13] {
        let es = points(n);
        group.throughput(Throughput::Elements(n as u64));
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &es, |b, es| {
                b.iter(|| batch_exp_with(es, &k, mode))
            });
        }
    }
    group.finish();
}

fn hashing(c: &mut Criterion) {
    let mut group = c.benchmark_group("hash_to_group");
    group.sample_size(10);
    let items: Vec<Vec<u8>> = (0..4096)
        .map(|i| format!("item-{i}").into_bytes())
        .collect();
    group.throughput(Throughput::Elements(items.len() as u64));
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| hash_items(&items, mode).unwrap()));
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo_alg3");
    group.sample_size(10);
    let scn = OracleScenario::new(40, 25, 0.9).unwrap();
    let samples = 100_000;
    group.throughput(Throughput::Elements(samples as u64));
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| monte_carlo_pmf(25, samples, 7, mode, |r| sim_alg3(&scn, r)))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_exp, hashing, monte_carlo);
criterion_main!(benches);
