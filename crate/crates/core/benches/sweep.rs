use criterion::{criterion_group, criterion_main, Criterion};

use budget_mcts::config::RunConfig;
use budget_mcts::sweep::{sweep, sweep_sequential};

fn seeds(c: &mut Criterion) {
    let base = RunConfig::default();
    let seeds: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("sim_sweep_16_seeds");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| sweep_sequential(&base, &seeds).unwrap())
    });
    // identical to `sequential` when built without the `parallel` feature
    group.bench_function("rayon", |b| b.iter(|| sweep(&base, &seeds).unwrap()));
    group.finish();
}

criterion_group!(benches, seeds);
criterion_main!(benches);
