use criterion::{black_box, criterion_group, criterion_main, Criterion};
use refshare_core::wire::{canonical_protocol_messages, deserialize, serialize};

fn wire(c: &mut Criterion) {
    let mut group = c.benchmark_group("wire");
    for msg in canonical_protocol_messages() {
        let name = msg.message_type().name();
        let bytes = serialize(&msg);
        group.bench_function(format!("serialize/{name}"), |b| b.iter(|| serialize(black_box(&msg))));
        group.bench_function(format!("deserialize/{name}"), |b| {
            b.iter(|| deserialize(black_box(&bytes)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, wire);
criterion_main!(benches);
