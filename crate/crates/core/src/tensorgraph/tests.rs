use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::grad_check;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn conv2d_all_ones_center_and_corner() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    let out = g.data(y);
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert_eq!(out[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(out[corner], 4.0);
    }
    assert_eq!(out[1], 6.0);
}

#[test]
fn conv2d_zero_weights_and_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random(&[1, 2, 5, 6], &mut rng);
    let mut g = Graph::<f64>::new();
    let x = g.constant(input.clone());
    let zw = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
    let zb = g.constant(Tensor::zeros(&[3]));
    let y = g.conv2d(x, zw, Some(zb), 1, 1).unwrap();
    assert!(g.data(y).iter().all(|&v| v == 0.0));

    // per-channel identity: weight[o][c] has a 1 at the center iff o == c
    let id = Tensor::from_fn(&[2, 2, 3, 3], |i| {
        let (o, c, k) = (i / 18, (i / 9) % 2, i % 9);
        if o == c && k == 4 {
            1.0
        } else {
            0.0
        }
    });
    let iw = g.constant(id);
    let y = g.conv2d(x, iw, None, 1, 1).unwrap();
    assert_eq!(g.data(y), input.data());
}

#[test]
fn conv2d_shape_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(crate::Error::Config(_))));
}

#[test]
fn conv2d_output_extent_with_stride() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 7, 9]));
    let w = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 5]);
}

#[test]
fn pointwise_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[0.0, 0.0]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.data(s), &[0.5, 0.5]);
    let z = g.constant(Tensor::scalar(0.0));
    let sg = g.sigmoid(z);
    assert_eq!(g.data(sg), &[0.5]);
    let m = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.maxpool2d(m, 2).unwrap();
    assert_eq!(g.shape(p), &[1, 1, 1, 1]);
    assert_eq!(g.data(p), &[4.0]);
}

#[test]
fn l2_normalize_guards_zero_vector() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2, 3], &[0.0, 0.0, 0.0, 3.0, 0.0, 4.0]));
    let y = g.l2_normalize(x, 1).unwrap();
    assert_eq!(g.data(y), &[0.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let root = g.sum(sq);
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);

    let mut g = Graph::<f64>::new();
    let z = g.param(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    g.backward(s).unwrap();
    assert_eq!(g.grad(z).unwrap(), &[0.25]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(crate::Error::Usage(_))));
}

#[test]
fn second_backward_doubles_leaf_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[1, 2, 4, 4], &mut rng));
    let w = g.param(random(&[3, 2, 3, 3], &mut rng));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let y = g.sigmoid(y);
    let root = g.sum(y);
    g.backward(root).unwrap();
    let first: Vec<f64> = g.grad(w).unwrap().to_vec();
    g.backward(root).unwrap();
    for (a, b) in g.grad(w).unwrap().iter().zip(&first) {
        assert_eq!(*a, 2.0 * b);
    }
    g.zero_grad();
    assert!(g.grad(w).is_none());
}

#[test]
fn shared_use_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.5, -2.0]));
    let a = g.scale(x, 3.0);
    let b = g.add(a, x).unwrap();
    let root = g.sum(b);
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 4.0]);
}

#[test]
fn composite_conv_relu_softmax_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            random(&[1, 2, 8, 8], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
            random(&[3 * 64], &mut rng),
        ];
        let err = grad_check(&inputs, 1e-4, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap();
            let y = g.relu(y);
            let y = g.reshape(y, &[3 * 64]).unwrap();
            let y = g.softmax(y, 0).unwrap();
            let y = g.mul(y, v[3]).unwrap();
            g.sum(y)
        });
        assert!(err < 1e-5, "seed {seed}: rel err {err}");
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;
    let positive = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::from_fn(shape, |_| rng.gen_range(0.5..2.0));
    let cases: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
        (
            "conv2d stride 2",
            vec![random(&[1, 2, 7, 6], &mut rng), random(&[2, 2, 3, 3], &mut rng)],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], None, 2, 1).unwrap();
                let y = g.mul(y, y).unwrap();
                g.sum(y)
            }),
        ),
        (
            "conv2d 1x1",
            vec![
                random(&[1, 3, 4, 5], &mut rng),
                random(&[2, 3, 1, 1], &mut rng),
                random(&[2], &mut rng),
            ],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap();
                let y = g.exp(y);
                g.sum(y)
            }),
        ),
        (
            "maxpool + upsample",
            vec![random(&[1, 2, 8, 8], &mut rng), random(&[1, 2, 8, 8], &mut rng)],
            Box::new(|g, v| {
                let p = g.maxpool2d(v[0], 4).unwrap();
                let u = g.upsample_bilinear(p, 8, 8).unwrap();
                let y = g.mul(u, v[1]).unwrap();
                g.sum(y)
            }),
        ),
        (
            "elementwise broadcast",
            vec![random(&[3, 1, 4], &mut rng), positive(&[2, 1], &mut rng)],
            Box::new(|g, v| {
                let a = g.sub(v[0], v[1]).unwrap();
                let b = g.div(a, v[1]).unwrap();
                let c = g.add(b, v[0]).unwrap();
                let d = g.mul(c, c).unwrap();
                let e = g.abs(d);
                g.mean(e).unwrap()
            }),
        ),
        (
            "log sqrt sigmoid",
            vec![positive(&[6], &mut rng)],
            Box::new(|g, v| {
                let a = g.log(v[0]);
                let b = g.sqrt(v[0]);
                let c = g.sigmoid(a);
                let d = g.mul(b, c).unwrap();
                let e = g.add_scalar(d, 0.3);
                g.sum(e)
            }),
        ),
        (
            "l2 normalize + concat + slice",
            vec![
                random(&[1, 3, 2, 2], &mut rng),
                random(&[1, 2, 2, 2], &mut rng),
                random(&[1, 4, 2, 2], &mut rng),
            ],
            Box::new(|g, v| {
                let c = g.concat(&[v[0], v[1]], 1).unwrap();
                let n = g.l2_normalize(c, 1).unwrap();
                let s = g.slice(n, 1, 1, 4).unwrap();
                let y = g.mul(s, v[2]).unwrap();
                g.sum(y)
            }),
        ),
        (
            "matmul transposes + sum axis + max",
            vec![random(&[4, 3], &mut rng), random(&[5, 4], &mut rng)],
            Box::new(|g, v| {
                let m = g.matmul_t(v[0], true, v[1], true).unwrap();
                let s = g.sum_axis(m, 1).unwrap();
                let q = g.mul(s, s).unwrap();
                let mx = g.max(q).unwrap();
                let tot = g.sum(q);
                g.add(mx, tot).unwrap()
            }),
        ),
        (
            "index select + row norm",
            vec![random(&[4, 3], &mut rng)],
            Box::new(|g, v| {
                let r = g.index_select(v[0], &[2, 0, 2]).unwrap();
                let n1 = g.row_norm(r, 1.0).unwrap();
                let n2 = g.row_norm(r, 2.0).unwrap();
                let n3 = g.row_norm(r, 3.0).unwrap();
                let a = g.sum(n1);
                let b = g.sum(n2);
                let c = g.sum(n3);
                let ab = g.add(a, b).unwrap();
                g.add(ab, c).unwrap()
            }),
        ),
        (
            "gather windows + softmax",
            vec![random(&[1, 1, 6, 7], &mut rng)],
            Box::new(|g, v| {
                let w = g.gather_windows(v[0], &[(2, 2), (3, 4)], 3).unwrap();
                let s = g.softmax(w, 1).unwrap();
                let s2 = g.mul(s, w).unwrap();
                g.sum(s2)
            }),
        ),
        (
            "bilinear sampling wrt map and coords",
            vec![
                random(&[1, 2, 5, 6], &mut rng),
                t(&[3, 2], &[1.3, 2.6, 4.2, 0.7, 0.4, 3.9]),
            ],
            Box::new(|g, v| {
                let s = g.sample_bilinear(v[0], v[1]).unwrap();
                let q = g.mul(s, s).unwrap();
                g.sum(q)
            }),
        ),
        (
            "row bilinear sampling",
            vec![random(&[2, 12], &mut rng), t(&[2, 2], &[1.25, 0.5, 2.6, 1.7])],
            Box::new(|g, v| {
                let s = g.sample_rows_bilinear(v[0], v[1], 3, 4).unwrap();
                let e = g.exp(s);
                g.sum(e)
            }),
        ),
        (
            "sparse cross entropy",
            vec![random(&[3, 5], &mut rng)],
            Box::new(|g, v| {
                let targets = vec![
                    vec![(1, 1.0)],
                    vec![(0, 0.25), (4, 0.75)],
                    vec![(2, 0.1), (3, 0.2), (1, 0.3), (0, 0.4)],
                ];
                let ce = g.sparse_cross_entropy(v[0], targets).unwrap();
                g.sum(ce)
            }),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = grad_check(&inputs, 1e-5, build);
        assert!(err < 1e-6, "{name}: rel err {err}");
    }
}

#[test]
fn point_map_applies_transposed_jacobian() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1, 2], &[1.0, 2.0]));
    // y = (2u + 3v, 5u - v)
    let y = g.point_map(x, vec![8.0, 3.0], vec![[2.0, 3.0, 5.0, -1.0]]).unwrap();
    let w = g.constant(t(&[1, 2], &[1.0, 10.0]));
    let p = g.mul(y, w).unwrap();
    let root = g.sum(p);
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[52.0, -7.0]);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[1, 3, 16, 16], |_| rng.gen_range(0.0..1.0)));
        let w = g.constant(Tensor::from_fn(&[4, 3, 3, 3], |_| rng.gen_range(-1.0..1.0)));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.maxpool2d(y, 2).unwrap();
        let y = g.upsample_bilinear(y, 16, 16).unwrap();
        g.data(y).to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn single_precision_gradients_within_loose_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<f32> = (0..2 * 36).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ws: Vec<f32> = (0..2 * 2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |x: &[f32], w: &[f32]| -> (f32, Vec<f32>) {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(Tensor::new(&[1, 2, 6, 6], x.to_vec()).unwrap());
        let wv = g.param(Tensor::new(&[2, 2, 3, 3], w.to_vec()).unwrap());
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let y = g.sigmoid(y);
        let r = g.sum(y);
        g.backward(r).unwrap();
        (g.value(r).item().unwrap(), g.grad(wv).unwrap().to_vec())
    };
    let (_, analytic) = loss(&xs, &ws);
    let h = 1e-2f32;
    let mut numeric = Vec::new();
    for i in 0..ws.len() {
        let mut wp = ws.clone();
        wp[i] += h;
        let mut wm = ws.clone();
        wm[i] -= h;
        numeric.push(((loss(&xs, &wp).0 - loss(&xs, &wm).0) / (2.0 * h)) as f64);
    }
    let analytic: Vec<f64> = analytic.iter().map(|&v| v as f64).collect();
    let err = crate::testutil::relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "rel err {err}");
}
