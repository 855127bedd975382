use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng as _, SeedableRng};

use convpoint::conv::{ConvPoint, OutputPoints};
use convpoint::networks::{ClassificationConfig, ClassificationNet};
use convpoint::pipeline::{evaluate, train, Dataset, EvalConfig, Sample, Target, TrainConfig};
use convpoint::{Execution, PointCloud, Rng, Tensor};

fn cloud(n: usize, rng: &mut Rng) -> PointCloud {
    let p = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let f = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    PointCloud::new(Tensor::new(&[n, 2], p).unwrap(), Tensor::new(&[n, 1], f).unwrap()).unwrap()
}

fn dataset(samples: usize, points: usize) -> Dataset {
    let mut rng = Rng::seed_from_u64(3);
    let samples = (0..samples)
        .map(|i| Sample {
            cloud: cloud(points, &mut rng),
            target: Target::Class(i % 10),
        })
        .collect();
    Dataset::new(samples, 10).unwrap()
}

fn single_layer(c: &mut Criterion) {
    let mut rng = Rng::seed_from_u64(1);
    let input = cloud(1024, &mut rng);
    let features = Tensor::new(&[1024, 32], (0..1024 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let conv = ConvPoint::new(32, 64, 16, 2, &mut rng).unwrap();
    c.bench_function("conv_1024_to_256_k16", |b| {
        b.iter(|| {
            let mut r = Rng::seed_from_u64(2);
            conv.apply(input.positions(), &features, OutputPoints::Sample(256), 16, &mut r)
                .unwrap()
        })
    });
}

fn modes(c: &mut Criterion) {
    let data = dataset(32, 784);
    let net = ClassificationNet::new(ClassificationConfig::desk(10, 1, 2), &mut Rng::seed_from_u64(1)).unwrap();
    let mut group = c.benchmark_group("execution");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let name = format!("{exec:?}");
        group.bench_with_input(BenchmarkId::new("evaluate_32", &name), &exec, |b, &exec| {
            let cfg = EvalConfig {
                execution: exec,
                ..EvalConfig::default()
            };
            b.iter(|| evaluate(&net, &data, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("train_epoch_32", &name), &exec, |b, &exec| {
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 8,
                execution: exec,
                ..TrainConfig::default()
            };
            b.iter(|| {
                let mut n = net.clone();
                train(&mut n, &data, None, &cfg).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, single_layer, modes);
criterion_main!(benches);
