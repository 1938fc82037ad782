use std::hint::black_box;

use criterion::Criterion;
use lfsr_core::angular::{self, AngularNetBundle};
use lfsr_core::nn::{NetworkConfig, TrainConfig, Trainer};
use lfsr_core::spatial;
use lfsr_core::synthetic;

pub fn angular_step(c: &mut Criterion) {
    let lf = synthetic::smooth_field(1, 8, 8, 14, 1);
    let samples = angular::make_angular_training_set(&lf).unwrap();
    let data = angular::angular_dataset(&samples, 0).unwrap();
    let net = angular::build_angular_net(7, &NetworkConfig::default(), 0, 1e-3).unwrap();
    let mut trainer = Trainer::new(net, TrainConfig::default()).unwrap();
    c.bench_function("angular sgd step, batch 64", |b| {
        b.iter(|| black_box(trainer.train_step(&data).unwrap()))
    });
}

pub fn spatial_forward(c: &mut Criterion) {
    let net = spatial::build_spatial_net(14, &NetworkConfig::default(), 0, 1e-3).unwrap();
    let input = vec![0.5; 64 * 4 * 14 * 14];
    c.bench_function("spatial forward, batch 64", |b| {
        b.iter(|| black_box(net.forward_batch(&input, 64).unwrap()))
    });
}

pub fn angular_field(c: &mut Criterion) {
    let bundle =
        AngularNetBundle::initialized(1, 7, &NetworkConfig::default(), &TrainConfig::default()).unwrap();
    let lf = synthetic::smooth_field(1, 32, 32, 7, 2);
    c.bench_function("angular field 32x32 lenslets", |b| {
        b.iter(|| black_box(bundle.upsample_field(&lf).unwrap()))
    });
}
