use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use writeback_core::backends::mock::{mock_embed, MockEmbedder};
use writeback_core::harness::{generate_synthetic, SyntheticSpec};
use writeback_core::index::{build_index, merged_search};
use writeback_core::{Source, VectorIndex};

fn indexes(n_queries: usize) -> (VectorIndex, VectorIndex) {
    let spec = SyntheticSpec {
        n_queries,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let embedder = MockEmbedder::new(spec.embed_dim);
    let original = build_index(&data.corpus, &embedder, Source::Original, 128).unwrap();
    let mut writeback = VectorIndex::new(spec.embed_dim, Source::Writeback);
    for (id, v) in original.entries().iter().step_by(4) {
        writeback.append(format!("wb-{id}"), v.clone()).unwrap();
    }
    (original, writeback)
}

fn search(c: &mut Criterion) {
    let mut group = c.benchmark_group("search");
    for n in [40, 200] {
        let (original, writeback) = indexes(n);
        let q = mock_embed("tell me about the capital of somewhere", original.dim());
        group.bench_with_input(BenchmarkId::new("original", original.len()), &original, |b, idx| {
            b.iter(|| idx.search(black_box(&q), 5).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("merged", original.len() + writeback.len()),
            &(original, writeback),
            |b, (o, w)| b.iter(|| merged_search(o, w, black_box(&q), 5).unwrap()),
        );
    }
    group.finish();
}

fn embed(c: &mut Criterion) {
    let text = "The capital of Freedonia is Fredville. It sits on a river and has many bridges.";
    c.bench_function("mock_embed/256", |b| b.iter(|| mock_embed(black_box(text), 256)));
    c.bench_function("mock_embed/4096", |b| b.iter(|| mock_embed(black_box(text), 4096)));
}

criterion_group!(benches, search, embed);
criterion_main!(benches);
