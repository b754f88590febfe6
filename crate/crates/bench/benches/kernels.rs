use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use oocs_core::data::{synth_spot, SpotPolarity, SpotShape};
use oocs_core::imageops::{convolve2d, on_off_responses, Padding};
use oocs_core::kernels::{build_oocs_kernel, DogParams, Polarity};

fn kernel_build(c: &mut Criterion) {
    for (k, g) in [(3usize, 0.5), (5, 2.0 / 3.0), (7, 2.0 / 3.0)] {
        c.bench_function(&format!("build_oocs_kernel {k}x{k}"), |b| {
            b.iter(|| build_oocs_kernel(black_box(k), black_box(g), Polarity::On).unwrap())
        });
    }
}

fn filtering(c: &mut Criterion) {
    let img = synth_spot(28, SpotShape::Block3x3, SpotPolarity::BrightOnDark, (14, 14)).unwrap();
    let params = DogParams::new(5, 2.0 / 3.0, Polarity::On).unwrap();
    let kernel = params.kernel(Default::default()).unwrap();
    c.bench_function("convolve2d 28x28 k5 same", |b| {
        b.iter(|| convolve2d(black_box(&img), &kernel, Padding::Same, 1).unwrap())
    });
    c.bench_function("on_off_responses 28x28 k5", |b| {
        b.iter(|| on_off_responses(black_box(&img), &params).unwrap())
    });
}

criterion_group!(benches, kernel_build, filtering);
criterion_main!(benches);
