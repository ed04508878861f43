use std::hint::black_box;

use beaconpark_core::eddystone::{decode_frame, encode_frame, BeaconFrame};
use beaconpark_core::filter::{FilterConfig, FilterState, ParticleFilter};
use beaconpark_core::pathloss::{fit_model, PathLossModel};
use beaconpark_core::simulator::{calibration_distances, generate_calibration, Scenario};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn filter_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter_update");
    for n in [200usize, 1000, 2000] {
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut f = ParticleFilter::new(FilterConfig::default().with_particles(n)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            b.iter(|| f.update(black_box(1.5 + rng.random_range(-0.5..0.5))).unwrap());
        });
    }
    group.finish();
}

fn resample(c: &mut Criterion) {
    let mut group = c.benchmark_group("resample");
    for n in [200usize, 1000, 2000] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let particles: Vec<f64> = (0..n).map(|i| 4.0 * i as f64 / n as f64).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let state = FilterState::from_parts(particles, weights).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &state, |b, state| {
            b.iter_batched(
                || state.clone(),
                |mut s| s.resample(&mut rng),
                criterion::BatchSize::SmallInput,
            );
        });
    }
    group.finish();
}

fn codec(c: &mut Criterion) {
    let frames: Vec<Vec<u8>> = [
        BeaconFrame::url("https://www.example.com/pk", -20).unwrap(),
        BeaconFrame::Uid {
            namespace: "edd1ebeac04e5defa017".parse().unwrap(),
            instance: "410000000003".parse().unwrap(),
            tx_power_at_0m: -59,
        },
    ]
    .iter()
    .map(|f| encode_frame(f).unwrap())
    .collect();
    c.bench_function("decode_frame", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(decode_frame(black_box(f)).unwrap());
            }
        })
    });
}

fn fit(c: &mut Criterion) {
    let scenario = Scenario::new(PathLossModel::INDOOR, 2.0, 60.0, 3);
    let data = generate_calibration(&scenario, &calibration_distances()).unwrap();
    c.bench_function("fit_model", |b| b.iter(|| fit_model(black_box(&data)).unwrap()));
}

criterion_group!(benches, filter_update, resample, codec, fit);
criterion_main!(benches);
