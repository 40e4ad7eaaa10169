use std::hint::black_box;

use alikekit::backbone::{Model, ModelConfig};
use alikekit::detect::{detect_keypoints, similarity_map, DetectorConfig};
use alikekit::geometry::Mat3;
use alikekit::matchmetrics::{estimate_homography, mutual_match, RansacConfig};
use alikekit::pipeline::extract;
use alikekit::trainer::{generate_pair, pair_gradient, TrainConfig};
use alikekit_bench::{descriptor_map, descriptors, hashed, score_map};
use criterion::{criterion_group, criterion_main, Criterion};

fn backbone(c: &mut Criterion) {
    let model = Model::<f32>::init(&ModelConfig::tiny(), 0);
    let mut group = c.benchmark_group("backbone");
    group.sample_size(10);
    for (w, h) in [(96, 96), (320, 224)] {
        let image = generate_pair(1, w, h).unwrap().image_a;
        let det = DetectorConfig::default();
        group.bench_function(format!("extract tiny {w}x{h}"), |b| {
            b.iter(|| extract(&model, black_box(&image), &det).unwrap())
        });
    }
    group.finish();
}

fn detection(c: &mut Criterion) {
    let map = score_map(640, 480);
    let det = DetectorConfig::default();
    c.bench_function("detect_keypoints 640x480", |b| {
        b.iter(|| detect_keypoints(black_box(&map), &det))
    });
    let dmap = descriptor_map(96, 96, 64);
    let query = &descriptors(1, 64, 3)[0];
    c.bench_function("similarity_map 96x96x64", |b| {
        b.iter(|| similarity_map(black_box(query), &dmap, 0.0).unwrap())
    });
}

fn matching(c: &mut Criterion) {
    let (a, b) = (descriptors(1000, 64, 1), descriptors(1000, 64, 2));
    c.bench_function("mutual_match 1000x1000x64", |bench| {
        bench.iter(|| mutual_match(black_box(&a), &b))
    });

    let h = Mat3::new(0.95, -0.1, 12.0, 0.1, 0.95, -7.0, 1e-4, -5e-5, 1.0);
    let src: Vec<[f64; 2]> = (0..500)
        .map(|i| [320.0 + 300.0 * hashed(11, i), 240.0 + 220.0 * hashed(12, i)])
        .collect();
    let dst: Vec<[f64; 2]> = src
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 10 < 3 {
                [
                    320.0 + 300.0 * hashed(13, i as u64),
                    240.0 + 220.0 * hashed(14, i as u64),
                ]
            } else {
                let z = h[(2, 0)] * p[0] + h[(2, 1)] * p[1] + h[(2, 2)];
                [
                    (h[(0, 0)] * p[0] + h[(0, 1)] * p[1] + h[(0, 2)]) / z,
                    (h[(1, 0)] * p[0] + h[(1, 1)] * p[1] + h[(1, 2)]) / z,
                ]
            }
        })
        .collect();
    let cfg = RansacConfig::default();
    c.bench_function("ransac 500 correspondences 30% outliers", |bench| {
        bench.iter(|| estimate_homography(black_box(&src), &dst, &cfg).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let mut cfg = TrainConfig::default();
    cfg.detector.top_k = 100;
    cfg.n_random = 100;
    let model = Model::<f32>::init(&cfg.model, 0);
    let pair = generate_pair(5, cfg.width, cfg.height).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("pair_gradient tiny 96x96", |b| {
        b.iter(|| pair_gradient(&model, black_box(&pair), &cfg, 1.0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, backbone, detection, matching, training);
criterion_main!(benches);
