use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use oocs_core::kernels::KernelProfile;
use oocs_core::nn::{adam_step, backward, forward, init_params, AdamHyper, AdamState, Graph, Mode, Params, Tensor};
use oocs_core::{mnist_base, mnist_oocs};

fn batch(n: usize) -> Tensor<f32> {
    let data = (0..n * 784).map(|i| ((i * 7919) % 256) as f32 / 255.0).collect();
    Tensor::from_vec(n, 28, 28, 1, data).unwrap()
}

fn train_step(c: &mut Criterion) {
    let x = batch(64);
    let labels: Vec<u8> = (0..64).map(|i| (i % 10) as u8).collect();
    let nets = [
        ("base", mnist_base()),
        ("oocs", mnist_oocs(3, 0.5, KernelProfile::Dog).unwrap()),
    ];
    let mut group = c.benchmark_group("mnist batch 64");
    group.sample_size(10);
    for (name, spec) in nets {
        let g = Graph::new(spec).unwrap();
        let p: Params<f32> = init_params(g.spec(), 0).unwrap();
        group.bench_function(format!("{name} forward eval"), |b| {
            b.iter(|| forward(&g, &p, black_box(&x), Mode::Eval, 0).unwrap())
        });
        group.bench_function(format!("{name} forward+backward+adam"), |b| {
            b.iter_batched(
                || (p.clone(), AdamState::new(&p, AdamHyper::default())),
                |(mut p, mut st)| {
                    let (_, cache) = forward(&g, &p, &x, Mode::Train, 1).unwrap();
                    let (_, grads) = backward(&g, &p, &cache, &labels).unwrap();
                    adam_step(&mut p, &grads, &mut st).unwrap();
                    p
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
