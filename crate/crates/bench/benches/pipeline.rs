use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stairtoken_core::ppo::gae;
use stairtoken_core::{
    estimate_token, project, scan, EstimatorConfig, Mlp, Pose, SensorModel, StairClass, StairSpec, TerrainProfile,
};

fn stair_cloud() -> stairtoken_core::PointCloud {
    let spec = StairSpec::stairs(StairClass::StairsUp, 0.15, 0.30, 8);
    let profile = TerrainProfile::new(spec).unwrap();
    let xy = profile.point_on_axis(-0.3);
    scan(&profile, Pose::new(xy[0], xy[1], 0.1), &SensorModel::default(), 7).unwrap()
}

fn bench_perception(c: &mut Criterion) {
    let cloud = stair_cloud();
    let grid = project(&cloud).unwrap();
    let cfg = EstimatorConfig::default();
    c.bench_function("project", |b| b.iter(|| project(black_box(&cloud)).unwrap()));
    c.bench_function("estimate_token", |b| b.iter(|| estimate_token(black_box(&grid), &cfg)));
}

fn bench_learning(c: &mut Criterion) {
    let n = 4096;
    let rewards: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 0.1).collect();
    let values: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.2).collect();
    let dones: Vec<bool> = (0..n).map(|i| i % 97 == 96).collect();
    c.bench_function("gae_4096", |b| {
        b.iter(|| gae(black_box(&rewards), &values, &dones, 0.0, 0.99, 0.95))
    });

    let net = Mlp::new(&[32, 64, 64, 3], 1).unwrap();
    let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut grads = vec![0.0; net.param_count()];
    c.bench_function("mlp_forward_backward", |b| {
        b.iter(|| {
            let cache = net.forward_cached(black_box(&x)).unwrap();
            net.backward(&cache, &[1.0, -1.0, 0.5], &mut grads)
        })
    });
}

criterion_group!(benches, bench_perception, bench_learning);
criterion_main!(benches);
