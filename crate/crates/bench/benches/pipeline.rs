use criterion::{criterion_group, criterion_main, Criterion};
use kinetrack_core::outlier::{clean_stream, fit_mixture_em, EmConfig, OutlierConfig};
use kinetrack_core::synth::{
    arm_raise_spec_with, corrupt_stream, generate_motion, random_state, ArmRaise, CorruptionSpec,
};
use kinetrack_core::ukf::{unscented_transform, SigmaParams};
use kinetrack_core::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::sync::Arc;

fn fk(c: &mut Criterion) {
    let topo = SkeletonTopology::default();
    let state = random_state(&topo, &mut ChaCha8Rng::seed_from_u64(0));
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(black_box(&state), &topo).unwrap())
    });
}

fn ut(c: &mut Criterion) {
    // full filter state size
    let n = 98;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = DMatrix::from_fn(60, n, |_, _| rng.random_range(-1.0..1.0));
    let belief = GaussianBelief {
        mean: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        cov: DMatrix::identity(n, n) * 0.01,
    };
    c.bench_function("unscented_transform_98", |b| {
        b.iter(|| unscented_transform(black_box(&belief), |x| &a * x, &SigmaParams::default()).unwrap())
    });
}

fn em(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<f64> = (0..10_000)
        .map(|_| {
            if rng.random::<f64>() < 0.8 {
                rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)
            } else {
                rng.random_range(-10.0..10.0)
            }
        })
        .collect();
    c.bench_function("mixture_em_10k", |b| {
        b.iter(|| fit_mixture_em(black_box(&samples), &EmConfig::default()).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let topo = Arc::new(SkeletonTopology::default());
    let motion = ArmRaise {
        duration: 3.0,
        ..ArmRaise::default()
    };
    let (clean, _) = generate_motion(&arm_raise_spec_with(&topo, &motion).unwrap(), topo).unwrap();
    let (noisy, _) = corrupt_stream(&clean, &CorruptionSpec::default()).unwrap();
    c.bench_function("clean_stream_60", |b| {
        b.iter(|| clean_stream(black_box(&noisy), &OutlierConfig::default()).unwrap())
    });
    let mut g = c.benchmark_group("filter");
    g.sample_size(10);
    g.bench_function("four_pass_60", |b| {
        b.iter(|| four_pass_filter(black_box(&noisy), &UkfConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, fk, ut, em, pipeline);
criterion_main!(benches);
