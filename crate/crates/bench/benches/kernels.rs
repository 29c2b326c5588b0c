use criterion::{black_box, criterion_group, criterion_main, Criterion};
use pdeq::kernels::init_beta;
use pdeq::{synthesize_kernel, Group2D, GroupConvBank, SynthesisMap};

fn synthesis(c: &mut Criterion) {
    let group = Group2D::new(8, true).unwrap();
    let beta = init_beta(1, 1, 1, 0).unwrap()[0];
    let g = group.element(3);
    c.bench_function("synthesize_kernel p8m", |b| b.iter(|| synthesize_kernel(black_box(&beta), &group, g, 1.0)));

    let map = SynthesisMap::new(&group, g, 1.0);
    c.bench_function("synthesis map apply", |b| b.iter(|| map.apply(black_box(&beta))));

    let bank = GroupConvBank::init(group.clone(), 15, 15, 1).unwrap();
    c.bench_function("group conv dense weights p8m 15x15", |b| b.iter(|| black_box(&bank).dense_weights()));
}

criterion_group!(benches, synthesis);
criterion_main!(benches);
