//! Sequential vs rayon oracle sweeps over a slice of the equivalence corpus.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use convbench::verify::{oracle_corpus, sweep_sequential, OracleConfig};

fn sweeps(c: &mut Criterion) {
    let corpus: Vec<_> = oracle_corpus().into_iter().step_by(8).collect();
    let cfg = OracleConfig::default();
    let mut group = c.benchmark_group("oracle_sweep");
    group.sample_size(10);

    group.bench_with_input(BenchmarkId::new("sequential", corpus.len()), &corpus, |b, corpus| {
        b.iter(|| black_box(sweep_sequential::<f32>(corpus, &cfg)))
    });

    #[cfg(feature = "parallel")]
    group.bench_with_input(BenchmarkId::new("parallel", corpus.len()), &corpus, |b, corpus| {
        b.iter(|| black_box(convbench::verify::sweep_parallel::<f32>(corpus, &cfg)))
    });

    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
