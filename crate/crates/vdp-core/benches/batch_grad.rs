//! Batch-gradient throughput: rayon chunked reduction vs the sequential
//! fallback, on an MNIST-shaped MLP and a small conv net.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vdp_core::continual::one_hot;
use vdp_core::network::{MultiHeadNetwork, NetworkMode, Scope};
use vdp_core::training::{batch_gradient, batch_gradient_serial, TrainSample};
use vdp_core::{SeededRng, Tensor};

fn mlp_fixture(n_in: usize, hidden: usize, n_classes: usize, batch: usize) -> (MultiHeadNetwork, Vec<TrainSample>) {
    let mut rng = SeededRng::new(1);
    let mut net = MultiHeadNetwork::mlp(n_in, &[hidden], NetworkMode::Variational, -6.0, &mut rng);
    net.attach_head(0, n_classes, -6.0, &mut rng).unwrap();
    let samples = (0..batch)
        .map(|_| TrainSample {
            x: Tensor::from_vec((0..n_in).map(|_| rng.next_f64()).collect()),
            y: one_hot(n_classes, rng.next_below(n_classes as u64) as usize),
            task: 0,
        })
        .collect();
    (net, samples)
}

fn bench_batch_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for &batch in &[32usize, 128] {
        let (net, samples) = mlp_fixture(784, 256, 10, batch);
        let refs: Vec<&TrainSample> = samples.iter().collect();
        let layout = net.scope_layout(&Scope::task(0)).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", batch), &batch, |b, _| {
            b.iter(|| batch_gradient(&net, &refs, &layout).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("serial", batch), &batch, |b, _| {
            b.iter(|| batch_gradient_serial(&net, &refs, &layout).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batch_gradient);
criterion_main!(benches);
