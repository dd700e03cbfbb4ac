use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use graphmind::graph::{chebyshev_conv, dense_lambda_max, graclus_coarsen, normalized_laplacian, scale_laplacian};
use graphmind::recurrent::{Stage1Config, Stage1Model};
use graphmind::tensor::Tape;
use graphmind::SeedStream;
use graphmind_bench::{random_adjacency, random_tensor, rng};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let mut r = rng(1);
        let a = random_tensor(&mut r, &[n, n]);
        let b = random_tensor(&mut r, &[n, n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
                black_box(tape.matmul(x, y).unwrap())
            })
        });
    }
    group.finish();
}

fn chebyshev(c: &mut Criterion) {
    let mut group = c.benchmark_group("chebyshev_conv");
    let mut r = rng(2);
    let a = random_adjacency(&mut r, 64, 0.3);
    let (l, _) = normalized_laplacian(&a);
    let scaled = scale_laplacian(&l, dense_lambda_max(&l)).unwrap();
    let lap = Arc::new(scaled.transpose().iter().copied().collect::<Vec<f64>>());
    let x = random_tensor(&mut r, &[16, 64, 16]);
    for k in [2, 4] {
        let theta = random_tensor(&mut r, &[k, 16, 32]);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |bench, &k| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (t, v) = (tape.constant(theta.clone()), tape.constant(x.clone()));
                black_box(chebyshev_conv(&mut tape, t, &lap, v, k).unwrap())
            })
        });
    }
    group.finish();
}

fn lstm_forward(c: &mut Criterion) {
    let cfg = Stage1Config::default();
    let model = Stage1Model::new(&cfg, &SeedStream::new(3)).unwrap();
    let x = random_tensor(&mut rng(3), &[8, 64, 64]);
    c.bench_function("stage1_infer/8x64x64", |bench| bench.iter(|| black_box(model.infer(&x).unwrap())));
}

fn graclus(c: &mut Criterion) {
    let a = random_adjacency(&mut rng(4), 64, 0.5);
    c.bench_function("graclus_coarsen/64x3", |bench| {
        bench.iter(|| black_box(graclus_coarsen(&a, 3).unwrap()))
    });
}

criterion_group!(benches, matmul, chebyshev, lstm_forward, graclus);
criterion_main!(benches);
