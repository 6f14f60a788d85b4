use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grfnet_core::cleanup::{cleanup_with_contacts, IkWeights};
use grfnet_core::grf::contact_labels;
use grfnet_core::kinematics::forward_kinematics;
use grfnet_core::nn::{predict, Model, ModelConfig};
use grfnet_core::rng;
use grfnet_core::synth::{generate_gait, GaitConfig};
use grfnet_core::{ContactParams, Take};

fn take(seconds: f64) -> Take {
    generate_gait(&GaitConfig {
        duration_s: seconds,
        ..GaitConfig::default()
    })
    .expect("synthetic take")
}

fn contact_function(c: &mut Criterion) {
    let mut group = c.benchmark_group("contact_labels");
    for seconds in [10.0, 60.0] {
        let t = take(seconds);
        let vgrf = t.vgrf.clone().unwrap();
        let layout = t.layout_or_default();
        let params = ContactParams::default();
        group.bench_with_input(BenchmarkId::from_parameter(seconds), &vgrf, |b, v| {
            b.iter(|| contact_labels(black_box(v), &layout, &params).unwrap())
        });
    }
    group.finish();
}

fn kinematics(c: &mut Criterion) {
    let t = take(60.0);
    let motion = t.local_motion.clone().unwrap();
    c.bench_function("forward_kinematics_60s", |b| {
        b.iter(|| forward_kinematics(&t.skeleton, black_box(&motion)).unwrap())
    });
}

fn conv_forward(c: &mut Criterion) {
    let t = take(10.0);
    let window = t.poses.window(0, 240);
    let mut group = c.benchmark_group("vgrf_forward_240");
    group.sample_size(10);
    for scale in [0.25, 1.0] {
        let cfg = ModelConfig {
            width_scale: scale,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, &mut rng::stream(0, &[1])).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(scale), &window, |b, w| {
            b.iter(|| predict(&model, black_box(w)).unwrap())
        });
    }
    group.finish();
}

fn ik(c: &mut Criterion) {
    let t = take(3.0);
    let motion = t.local_motion.clone().unwrap();
    let contacts = t.contacts.clone().unwrap();
    let weights = IkWeights {
        iterations: 50,
        ..IkWeights::default()
    };
    let mut group = c.benchmark_group("cleanup_ik");
    group.sample_size(10);
    group.bench_function("3s_50_iterations", |b| {
        b.iter(|| cleanup_with_contacts(black_box(&motion), &t.skeleton, &contacts, None, &weights).unwrap())
    });
    group.finish();
}

criterion_group!(benches, contact_function, kinematics, conv_forward, ik);
criterion_main!(benches);
