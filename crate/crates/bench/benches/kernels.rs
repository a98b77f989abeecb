use std::hint::black_box;

use amlcgl_bench::{gem_instance, BenchGraph};
use amlcgl_core::autodiff::{Mode, Tape};
use amlcgl_core::model::TaskMode;
use amlcgl_core::strategy::gem_project;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    for &(nodes, edges) in &[(2_000, 30_000), (20_000, 300_000)] {
        let g = BenchGraph::new(nodes, edges, 128, 1, 1);
        group.bench_with_input(BenchmarkId::from_parameter(edges), &g, |b, g| b.iter(|| g.adj.spmm(black_box(&g.x)).unwrap()));
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let g = BenchGraph::new(4_000, 60_000, 4, 16, 2);
    let mut group = c.benchmark_group("forward");
    for layers in [1, 2, 3] {
        let model = g.model(TaskMode::EdgeMulticlass, layers, 128, 9, 3);
        let ids: Vec<usize> = (0..g.edges.len()).collect();
        group.bench_with_input(BenchmarkId::new("edge-eval", layers), &model, |b, m| b.iter(|| m.logits(&g.inputs(), black_box(&ids)).unwrap()));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let g = BenchGraph::new(4_000, 60_000, 4, 16, 4);
    let model = g.model(TaskMode::EdgeMulticlass, 2, 128, 9, 5);
    let ids: Vec<usize> = (0..g.edges.len()).step_by(2).collect();
    let labels: Vec<usize> = ids.iter().map(|i| i % 9).collect();
    let inputs = g.inputs();
    c.bench_function("forward-backward/edge-2x128", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let f = model.forward(&mut tape, &params, &inputs, &ids, Mode::Train, &mut rng).unwrap();
            let loss = tape.cross_entropy_rows(f.logits, (0..ids.len()).collect(), labels.clone()).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn gem(c: &mut Criterion) {
    let mut group = c.benchmark_group("gem_project");
    for k in [1, 7, 48] {
        let (g, mem) = gem_instance(20_000, k, k as u64);
        group.bench_with_input(BenchmarkId::from_parameter(k), &(g, mem), |b, (g, mem)| b.iter(|| gem_project(black_box(g), mem, 0.0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, spmm, forward, train_step, gem);
criterion_main!(benches);
