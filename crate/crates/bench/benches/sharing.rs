use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use refshare_bench::{dealt, holders};
use refshare_core::crypto::seeded_rng;
use refshare_core::sharing::{evaluate_event, reconstruct, split, threshold_policy, verify_share_consistency};
use refshare_core::{FieldElement, PrimeField, RoundEvent};

fn sharing(c: &mut Criterion) {
    let mut group = c.benchmark_group("sharing");
    for n in [3usize, 5, 8] {
        let k = threshold_policy(n, 1);
        let hs = holders(n);
        let mut rng = seeded_rng(1);
        let secret = FieldElement::random(&mut rng);
        group.bench_with_input(BenchmarkId::new("split", n), &n, |b, _| {
            b.iter(|| split(black_box(&secret), hs[0], 1, &hs, k, &mut rng).unwrap())
        });
        let (_, shares) = dealt(n, k);
        group.bench_with_input(BenchmarkId::new("reconstruct", n), &n, |b, _| {
            b.iter(|| reconstruct(black_box(&shares), k).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("verify_consistency", n), &n, |b, _| {
            b.iter(|| verify_share_consistency(black_box(&shares), k, None).unwrap())
        });
    }
    let (_, shares) = dealt(3, 3);
    let event = RoundEvent::random(&mut seeded_rng(2));
    group.bench_function("evaluate_event", |b| b.iter(|| evaluate_event(black_box(&shares[0]), &event)));
    group.finish();
}

criterion_group!(benches, sharing);
criterion_main!(benches);
