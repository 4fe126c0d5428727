use criterion::{criterion_group, criterion_main, Criterion};
use refshare_bench::scenario;
use refshare_core::runner::simulate;

fn session(c: &mut Criterion) {
    let mut group = c.benchmark_group("session");
    group.sample_size(10);
    for name in ["two_player", "honest_three", "forge_output"] {
        let s = scenario(name);
        group.bench_function(name, |b| b.iter(|| simulate(&s, false)));
    }
    group.finish();
}

criterion_group!(benches, session);
criterion_main!(benches);
