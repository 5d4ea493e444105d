use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ketm::Tape;
use ketm_bench::{model, pair};

fn bench_predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    group.sample_size(20);
    for width in [64, 200] {
        let (net, store) = model(width);
        let input = pair(16, 7);
        group.bench_with_input(BenchmarkId::new("width", width), &width, |bench, _| {
            bench.iter(|| net.predict(&store, black_box(&input)).unwrap())
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    let (net, mut store) = model(200);
    let inputs: Vec<_> = (0..8).map(|i| pair(16, i)).collect();
    let batch: Vec<_> = inputs.iter().enumerate().map(|(i, x)| (x, i % 3)).collect();
    group.bench_function("batch8_width200", |bench| {
        bench.iter(|| {
            store.zero_grad();
            let mut tape = Tape::new();
            let loss = net
                .batch_loss(
                    &mut tape,
                    &store,
                    black_box(&batch),
                    net.default_options(),
                    None,
                )
                .unwrap();
            tape.backward(loss, &mut store).unwrap();
        })
    });
    group.finish();
}

criterion_group!(benches, bench_predict, bench_train_step);
criterion_main!(benches);
