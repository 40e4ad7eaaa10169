use std::path::Path;

use alikekit::backbone::{Model, ModelConfig};
use alikekit::detect::{
    detect_keypoints, nms, parse_keypoints, sample_descriptors, similarity_map, softargmax_offset, softargmax_weights,
    write_keypoints, DetectorConfig, Keypoint,
};
use alikekit::geometry::{
    format_homography, parse_homography, reprojection_probability, warp, Direction, Mat3, WarpSpec,
};
use alikekit::losses::matching_probability;
use alikekit::matchmetrics::{compute_metrics, fit_homography, mutual_match};
use alikekit::trainer::TrainConfig;
use alikekit::{DescriptorMap, ScoreMap, Tensor};
use proptest::prelude::*;

fn score_map() -> impl Strategy<Value = ScoreMap> {
    (6usize..20, 6usize..20).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| ScoreMap::new(w, h, d).unwrap())
    })
}

fn detector() -> impl Strategy<Value = DetectorConfig> {
    (
        prop_oneof![Just(3usize), Just(5)],
        0.01f64..1.0,
        0.0f64..0.5,
        1usize..30,
        0usize..3,
    )
        .prop_map(|(window, t_det, threshold, top_k, extra)| DetectorConfig {
            window,
            t_det,
            threshold,
            top_k,
            margin: window / 2 + extra,
        })
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

fn descriptor_map(w: usize, h: usize, dim: usize) -> impl Strategy<Value = DescriptorMap> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), w * h).prop_map(move |px| {
        let px: Vec<Vec<f64>> = px.into_iter().map(unit).collect();
        DescriptorMap::from_fn(w, h, dim, |x, y| px[y * w + x].clone())
    })
}

fn homography() -> impl Strategy<Value = Mat3> {
    (
        -0.5f64..0.5,
        0.7f64..1.4,
        -10.0f64..10.0,
        -10.0f64..10.0,
        -1e-3f64..1e-3,
        -1e-3f64..1e-3,
    )
        .prop_map(|(a, s, tx, ty, px, py)| {
            Mat3::new(s * a.cos(), -s * a.sin(), tx, s * a.sin(), s * a.cos(), ty, px, py, 1.0)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn keypoints_respect_margin_offset_and_top_k(map in score_map(), det in detector()) {
        let seeds = nms(&map, &det);
        let kps = detect_keypoints(&map, &det);
        prop_assert!(kps.len() <= det.top_k);
        prop_assert_eq!(kps.len(), seeds.len());
        let (w, h) = (map.width() as f64, map.height() as f64);
        let (m, r) = (det.margin as f64, det.radius() as f64);
        for (k, &(row, col)) in kps.iter().zip(&seeds) {
            prop_assert!(k.u >= m && k.u <= w - 1.0 - m && k.v >= m && k.v <= h - 1.0 - m);
            prop_assert!((k.u - col as f64).abs() <= r && (k.v - row as f64).abs() <= r);
            prop_assert!(k.score >= 0.0 && k.score <= 1.0);
        }
        for (i, a) in seeds.iter().enumerate() {
            prop_assert!(map.get(a.1, a.0) > det.threshold);
            for b in &seeds[i + 1..] {
                prop_assert!(a != b);
            }
        }
        let scores: Vec<f64> = seeds.iter().map(|&(row, col)| map.get(col, row)).collect();
        prop_assert!(scores.windows(2).all(|s| s[0] >= s[1]));
    }

    #[test]
    fn softargmax_weights_are_a_distribution(patch in prop::collection::vec(0.0f64..1.0, 25), t in 1e-3f64..1.0) {
        let w = softargmax_weights(&patch, t);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let o = softargmax_offset(&patch, 5, t);
        prop_assert!(o[0].abs() <= 2.0 && o[1].abs() <= 2.0);
    }

    #[test]
    fn sampled_descriptors_are_unit(map in descriptor_map(7, 5, 4), pts in prop::collection::vec((0.0f64..6.0, 0.0f64..4.0), 1..8)) {
        let kps: Vec<Keypoint> = pts.iter().map(|&(u, v)| Keypoint::new(u, v, 0.5)).collect();
        for d in sample_descriptors(&map, &kps).unwrap() {
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
        }
    }

    #[test]
    fn similarities_are_bounded(map in descriptor_map(6, 6, 5), q in prop::collection::vec(-1.0f64..1.0, 5)) {
        let s = similarity_map(&unit(q), &map, 0.0).unwrap();
        prop_assert!(s.values.iter().all(|v| (-1.0 - 1e-5..=1.0 + 1e-5).contains(v)));
    }

    #[test]
    fn probabilities_sum_to_one(
        map in descriptor_map(5, 4, 3),
        q in prop::collection::vec(-1.0f64..1.0, 3),
        t in 0.01f64..1.0,
        u in -1.0f64..5.0,
        v in -1.0f64..4.0,
    ) {
        let qm = matching_probability(&unit(q), &map, t, 0.0).unwrap();
        prop_assert_eq!(qm.len(), 21);
        prop_assert!((qm.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let qr: f64 = reprojection_probability(Some([u, v]), 5, 4).iter().map(|b| b.1).sum();
        prop_assert!((qr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mutual_matches_are_one_to_one_and_symmetric(
        a in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..12),
        b in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..12),
    ) {
        let ab = mutual_match(&a, &b);
        let mut pairs: Vec<(usize, usize)> = ab.pairs.iter().map(|m| (m.a, m.b)).collect();
        let mut seen_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        seen_b.sort();
        seen_b.dedup();
        prop_assert_eq!(seen_b.len(), pairs.len());
        let mut swapped: Vec<(usize, usize)> = mutual_match(&b, &a).pairs.iter().map(|m| (m.b, m.a)).collect();
        pairs.sort();
        swapped.sort();
        prop_assert_eq!(pairs, swapped);
    }

    #[test]
    fn metric_ratios_are_fractions(
        h in homography(),
        ka in prop::collection::vec((0.0f64..31.0, 0.0f64..23.0), 0..10),
        kb in prop::collection::vec((0.0f64..31.0, 0.0f64..23.0), 0..10),
    ) {
        let spec = WarpSpec::homography(h, (32, 24), (32, 24)).unwrap();
        let ka: Vec<[f64; 2]> = ka.into_iter().map(|(x, y)| [x, y]).collect();
        let kb: Vec<[f64; 2]> = kb.into_iter().map(|(x, y)| [x, y]).collect();
        let da: Vec<Vec<f64>> = ka.iter().map(|p| vec![p[0].sin(), p[1].cos(), 1.0]).collect();
        let db: Vec<Vec<f64>> = kb.iter().map(|p| vec![p[0].sin(), p[1].cos(), 1.0]).collect();
        let c = compute_metrics(&ka, &kb, &mutual_match(&da, &db), &spec);
        prop_assert!(c.n_inlier[0] <= c.n_inlier[1] && c.n_inlier[1] <= c.n_inlier[2]);
        prop_assert!(c.n_inlier[2] <= c.n_putative && c.n_gt <= c.n_cov);
        for r in [c.rep, c.mma[0], c.mma[1], c.mma[2]].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn homography_warp_round_trips(h in homography(), u in 0.5f64..62.5, v in 0.5f64..46.5) {
        let spec = WarpSpec::homography(h, (64, 48), (64, 48)).unwrap();
        if let Some(fwd) = warp([u, v], &spec, Direction::AToB) {
            let back = warp(fwd.p, &spec, Direction::BToA).expect("source point is in view");
            prop_assert!((back.p[0] - u).abs() < 1e-9 && (back.p[1] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn dlt_recovers_exact_homographies(h in homography(), seed in any::<u64>()) {
        let src: Vec<[f64; 2]> = (0..8u64)
            .map(|i| {
                let r = seed.wrapping_add(i).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                [(r >> 40) as f64 % 640.0, (r >> 20) as f64 % 480.0]
            })
            .collect();
        let dst: Vec<[f64; 2]> = src
            .iter()
            .map(|p| {
                let z = h[(2, 0)] * p[0] + h[(2, 1)] * p[1] + h[(2, 2)];
                [(h[(0, 0)] * p[0] + h[(0, 1)] * p[1] + h[(0, 2)]) / z, (h[(1, 0)] * p[0] + h[(1, 1)] * p[1] + h[(1, 2)]) / z]
            })
            .collect();
        let est = fit_homography(&src, &dst).unwrap();
        let est = est / est[(2, 2)];
        for (a, b) in est.iter().zip(h.iter()) {
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{est} vs {h}");
        }
    }

    #[test]
    fn homography_text_is_bit_exact(h in homography()) {
        prop_assert_eq!(parse_homography(&format_homography(&h), Path::new("mem")).unwrap(), h);
    }

    #[test]
    fn keypoint_files_round_trip_to_nine_digits(
        pts in prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0, 0.0f64..1.0), 0..10),
        dim in 1usize..6,
    ) {
        let kps: Vec<Keypoint> = pts
            .iter()
            .map(|&(u, v, s)| Keypoint { descriptor: Some(unit((0..dim).map(|k| (u + k as f64).sin()).collect())), ..Keypoint::new(u, v, s) })
            .collect();
        let mut bytes = Vec::new();
        write_keypoints(&mut bytes, &kps, dim).unwrap();
        let back = parse_keypoints(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.dim, dim);
        prop_assert_eq!(back.keypoints.len(), kps.len());
        for (a, b) in back.keypoints.iter().zip(&kps) {
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-8 * y.abs().max(1e-30) + 1e-300;
            prop_assert!(close(a.u, b.u) && close(a.v, b.v) && close(a.score, b.score));
            let (da, db) = (a.descriptor.as_ref().unwrap(), b.descriptor.as_ref().unwrap());
            prop_assert!(da.iter().zip(db).all(|(x, y)| (x - y).abs() <= 1e-8));
        }
    }

    #[test]
    fn learning_rate_warms_up_then_holds(peak in 1e-5f64..1e-1, warmup in 1usize..1000, step in 0usize..5000) {
        let cfg = TrainConfig { lr_peak: peak, warmup_steps: warmup, ..TrainConfig::default() };
        prop_assert_eq!(cfg.learning_rate(0), 0.0);
        prop_assert!((cfg.learning_rate(warmup) - peak).abs() <= 1e-15 * peak);
        let lr = cfg.learning_rate(step);
        prop_assert!(lr <= peak * (1.0 + 1e-15) && lr >= 0.0);
        prop_assert!(cfg.learning_rate(step + 1) >= lr);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Keypoints from an untrained backbone obey the margin and offset bounds.
    #[test]
    fn backbone_keypoints_respect_bounds(seed in any::<u64>(), img_seed in any::<u64>()) {
        let model = Model::<f32>::init(&ModelConfig::tiny(), seed);
        let image = Tensor::<f32>::from_fn(&[1, 3, 32, 64], |i| {
            ((img_seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40) as f32) / (1u64 << 24) as f32
        });
        let out = model.forward(&image).unwrap();
        let det = DetectorConfig { threshold: 0.0, ..DetectorConfig::default() };
        let seeds = nms(&out.score_map, &det);
        for (k, &(row, col)) in detect_keypoints(&out.score_map, &det).iter().zip(&seeds) {
            prop_assert!(k.u >= 2.0 && k.u <= 61.0 && k.v >= 2.0 && k.v <= 29.0);
            prop_assert!((k.u - col as f64).abs() <= 2.0 && (k.v - row as f64).abs() <= 2.0);
        }
    }
}
