use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netmerge::kernels::{batch_matmul, conv2d, group_norm, grouped_conv2d, layer_norm, matmul, pack};
use netmerge_bench::{conv_case, tensor};

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv");
    for m in [1, 4, 8] {
        let case = conv_case(m, 8, 16);
        group.bench_with_input(BenchmarkId::new("per_model", m), &case, |b, case| {
            b.iter(|| {
                for (x, w) in case.xs.iter().zip(&case.ws) {
                    black_box(conv2d(x, w, None, 1, 1).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("grouped", m), &case, |b, case| {
            b.iter(|| black_box(grouped_conv2d(&case.x, &case.w, None, 1, 1, m).unwrap()))
        });
    }
    group.finish();
}

fn matmuls(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for m in [1, 4, 8] {
        let xs: Vec<_> = (0..m).map(|i| tensor(&[16, 64], i as u64)).collect();
        let ws: Vec<_> = (0..m).map(|i| tensor(&[64, 64], 50 + i as u64)).collect();
        let x = pack(&xs.iter().collect::<Vec<_>>(), 0).unwrap();
        let w = pack(&ws.iter().collect::<Vec<_>>(), 0).unwrap();
        group.bench_function(BenchmarkId::new("per_model", m), |b| {
            b.iter(|| {
                for (x, w) in xs.iter().zip(&ws) {
                    black_box(matmul(x, w, None).unwrap());
                }
            })
        });
        group.bench_function(BenchmarkId::new("batched", m), |b| {
            b.iter(|| black_box(batch_matmul(&x, &w, None).unwrap()))
        });
    }
    group.finish();
}

fn norms(c: &mut Criterion) {
    let x = tensor(&[32, 256], 1);
    let (g, beta) = (tensor(&[256], 2), tensor(&[256], 3));
    c.bench_function("norm/layer_norm", |b| {
        b.iter(|| black_box(layer_norm(&x, &g, &beta, 1e-5).unwrap()))
    });
    c.bench_function("norm/group_norm_g8", |b| {
        b.iter(|| black_box(group_norm(&x, &g, &beta, 8, 1e-5).unwrap()))
    });
}

criterion_group!(benches, convolution, matmuls, norms);
criterion_main!(benches);
