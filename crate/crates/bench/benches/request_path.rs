use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use semrouter_bench::{chat_body, sample_router, vocabulary_prompt};
use semrouter_core::{classify, RequestEnvelope};

fn request_path(c: &mut Criterion) {
    let router = sample_router();
    let mut group = c.benchmark_group("request_path");
    for len in [256usize, 1024, 4096] {
        let prompt = vocabulary_prompt(&router, len);
        let body = chat_body(&prompt);
        group.throughput(Throughput::Bytes(len as u64));

        group.bench_with_input(BenchmarkId::new("embed", len), &prompt, |b, p| {
            b.iter(|| router.encoder().encode(black_box(p)))
        });
        let embedding = router.encoder().encode(&prompt);
        group.bench_with_input(BenchmarkId::new("classify", len), &embedding, |b, e| {
            b.iter(|| classify(black_box(e), router.table()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decide_mutate", len), &body, |b, body| {
            b.iter(|| {
                let request = RequestEnvelope::from_slice(black_box(body)).unwrap();
                let decision = router.decide_request(&request);
                router.mutate(request, &decision).unwrap().to_vec()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, request_path);
criterion_main!(benches);
