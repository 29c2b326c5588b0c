use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array4;
use pdeq::tensor_ops::{correlate2d_backward, correlate2d_forward, groupconv_forward, lifting_forward};
use pdeq::{FeatureMap, Group2D, GroupConvBank, LiftingBank};

fn input(dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(dim, |(b, c, r, q)| ((b * 31 + c * 17 + r * 7 + q * 3) % 13) as f64 / 13.0 - 0.5)
}

fn correlate(c: &mut Criterion) {
    let mut group = c.benchmark_group("correlate2d 5x5");
    for size in [14usize, 28] {
        let x = input((32, 8, size, size));
        let w: Vec<f64> = (0..16 * 8 * 25).map(|i| (i % 11) as f64 / 11.0 - 0.5).collect();
        group.bench_with_input(BenchmarkId::new("forward", size), &x, |b, x| {
            b.iter(|| correlate2d_forward(black_box(x), &w, 16, 5).unwrap())
        });
        let g = input((32, 16, size, size));
        group.bench_with_input(BenchmarkId::new("backward", size), &x, |b, x| {
            b.iter(|| correlate2d_backward(&g, black_box(x), &w, 5).unwrap())
        });
    }
    group.finish();
}

fn layers(c: &mut Criterion) {
    let p4 = Group2D::new(4, false).unwrap();
    let images = FeatureMap::planar(input((32, 1, 28, 28)));
    let lift = LiftingBank::init(p4.clone(), 8, 1, 0).unwrap();
    c.bench_function("lifting forward p4 batch 32", |b| b.iter(|| lifting_forward(black_box(&images), &lift).unwrap()));

    let feat = FeatureMap::new(input((32, 8 * 4, 14, 14)), 4, 1.0).unwrap();
    let bank = GroupConvBank::init(p4, 15, 8, 1).unwrap();
    c.bench_function("group conv forward p4 batch 32", |b| {
        b.iter(|| groupconv_forward(black_box(&feat), &bank).unwrap())
    });
}

criterion_group!(benches, correlate, layers);
criterion_main!(benches);
