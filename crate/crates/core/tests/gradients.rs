//! Analytic gradients against central finite differences, h = 1e-5.

use har_core::gradcheck::{central_difference, max_relative_error};
use har_core::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout, dropout_backward,
    embedding_backward, embedding_forward, maxpool1d, maxpool1d_backward, relu, relu_backward,
    softmax_cross_entropy,
};
use har_core::model::build_network;
use har_core::rng::{seeded, HarRng};
use har_core::{ActivityLabel, ConvBlock, Mode, NetworkConfig, SegmentTensor, Tensor};
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const CASES: u64 = 20;

fn random_vec(rng: &mut HarRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_tensor(rng: &mut HarRng, shape: &[usize]) -> Tensor {
    Tensor::new(shape, random_vec(rng, shape.iter().product())).unwrap()
}

/// Values bounded away from zero and pairwise at least `gap` apart, so
/// ReLU and max-pool are differentiable with margin at every entry.
fn separated_vec(rng: &mut HarRng, n: usize, gap: f64) -> Vec<f64> {
    let mut levels: Vec<f64> = (0..n)
        .map(|i| (i as f64 + 1.0) * gap * if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        levels.swap(i, j);
    }
    levels
}

/// `sum(out * r)`: a scalar whose gradient with respect to `out` is `r`.
fn weighted_sum(out: &Tensor, r: &[f64]) -> f64 {
    out.values().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn check(label: &str, case: u64, analytic: &[f64], numeric: &[f64]) {
    let err = max_relative_error(analytic, numeric);
    assert!(err < TOL, "{label} case {case}: relative error {err:e}");
}

#[test]
fn conv1d_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(case);
        let c = rng.random_range(1..4);
        let f = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let len = rng.random_range(k..k + 8);
        let x = random_tensor(&mut rng, &[c, len]);
        let w = random_tensor(&mut rng, &[f, c, k]);
        let b = random_tensor(&mut rng, &[f]);
        let r = random_vec(&mut rng, f * (len - k + 1));
        let g = conv1d_backward(&x, &w, &Tensor::new(&[f, len - k + 1], r.clone()).unwrap()).unwrap();

        let mut xv = x.values().to_vec();
        let num = central_difference(&mut xv, H, |v| {
            weighted_sum(
                &conv1d_forward(&Tensor::new(&[c, len], v.to_vec()).unwrap(), &w, &b).unwrap(),
                &r,
            )
        });
        check("conv input", case, g.input.values(), &num);

        let mut wv = w.values().to_vec();
        let num = central_difference(&mut wv, H, |v| {
            weighted_sum(
                &conv1d_forward(&x, &Tensor::new(&[f, c, k], v.to_vec()).unwrap(), &b).unwrap(),
                &r,
            )
        });
        check("conv kernels", case, g.kernels.values(), &num);

        let mut bv = b.values().to_vec();
        let num = central_difference(&mut bv, H, |v| {
            weighted_sum(
                &conv1d_forward(&x, &w, &Tensor::new(&[f], v.to_vec()).unwrap()).unwrap(),
                &r,
            )
        });
        check("conv bias", case, g.bias.values(), &num);
    }
}

#[test]
fn relu_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(100 + case);
        let n = rng.random_range(1..30);
        let x = Tensor::new(&[n], separated_vec(&mut rng, n, 1e-2)).unwrap();
        let r = random_vec(&mut rng, n);
        let analytic = relu_backward(&x, &Tensor::new(&[n], r.clone()).unwrap()).unwrap();
        let mut xv = x.values().to_vec();
        let num = central_difference(&mut xv, H, |v| {
            weighted_sum(&relu(&Tensor::new(&[n], v.to_vec()).unwrap()), &r)
        });
        check("relu", case, analytic.values(), &num);
    }
}

#[test]
fn maxpool_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(200 + case);
        let c = rng.random_range(1..4);
        let p = rng.random_range(1..4);
        let len = rng.random_range(p..p + 10);
        let x = Tensor::new(&[c, len], separated_vec(&mut rng, c * len, 1e-2)).unwrap();
        let out_len = len / p;
        let r = random_vec(&mut rng, c * out_len);
        let analytic = maxpool1d_backward(&x, p, &Tensor::new(&[c, out_len], r.clone()).unwrap()).unwrap();
        let mut xv = x.values().to_vec();
        let num = central_difference(&mut xv, H, |v| {
            weighted_sum(
                &maxpool1d(&Tensor::new(&[c, len], v.to_vec()).unwrap(), p).unwrap(),
                &r,
            )
        });
        check("maxpool", case, analytic.values(), &num);
    }
}

#[test]
fn embedding_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(300 + case);
        let rows = rng.random_range(2..8);
        let dim = rng.random_range(1..5);
        let len = rng.random_range(1..12);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..rows)).collect();
        let table = random_tensor(&mut rng, &[rows, dim]);
        let r = random_vec(&mut rng, dim * len);
        let analytic = embedding_backward(&ids, &Tensor::new(&[dim, len], r.clone()).unwrap(), rows).unwrap();
        let mut tv = table.values().to_vec();
        let num = central_difference(&mut tv, H, |v| {
            weighted_sum(
                &embedding_forward(&ids, &Tensor::new(&[rows, dim], v.to_vec()).unwrap()).unwrap(),
                &r,
            )
        });
        check("embedding", case, analytic.values(), &num);
    }
}

#[test]
fn dense_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(400 + case);
        let m = rng.random_range(1..6);
        let d = rng.random_range(1..10);
        let x = random_tensor(&mut rng, &[d]);
        let w = random_tensor(&mut rng, &[m, d]);
        let b = random_tensor(&mut rng, &[m]);
        let r = random_vec(&mut rng, m);
        let g = dense_backward(&x, &w, &Tensor::new(&[m], r.clone()).unwrap()).unwrap();

        let mut xv = x.values().to_vec();
        let num = central_difference(&mut xv, H, |v| {
            weighted_sum(
                &dense_forward(&Tensor::new(&[d], v.to_vec()).unwrap(), &w, &b).unwrap(),
                &r,
            )
        });
        check("dense input", case, g.input.values(), &num);

        let mut wv = w.values().to_vec();
        let num = central_difference(&mut wv, H, |v| {
            weighted_sum(
                &dense_forward(&x, &Tensor::new(&[m, d], v.to_vec()).unwrap(), &b).unwrap(),
                &r,
            )
        });
        check("dense weight", case, g.weight.values(), &num);

        let mut bv = b.values().to_vec();
        let num = central_difference(&mut bv, H, |v| {
            weighted_sum(
                &dense_forward(&x, &w, &Tensor::new(&[m], v.to_vec()).unwrap()).unwrap(),
                &r,
            )
        });
        check("dense bias", case, g.bias.values(), &num);
    }
}

#[test]
fn dropout_gradients_reuse_the_mask() {
    for case in 0..CASES {
        let mut rng = seeded(500 + case);
        let n = rng.random_range(1..30);
        let rate = rng.random_range(0.0..0.9);
        let x = random_tensor(&mut rng, &[n]);
        let r = random_vec(&mut rng, n);
        let mask_seed = rng.random::<u64>();
        let (_, mask) = dropout(&x, rate, Mode::Train, &mut seeded(mask_seed)).unwrap();
        let analytic = dropout_backward(&mask, &Tensor::new(&[n], r.clone()).unwrap()).unwrap();
        let mut xv = x.values().to_vec();
        let num = central_difference(&mut xv, H, |v| {
            let input = Tensor::new(&[n], v.to_vec()).unwrap();
            let (out, _) = dropout(&input, rate, Mode::Train, &mut seeded(mask_seed)).unwrap();
            weighted_sum(&out, &r)
        });
        check("dropout", case, analytic.values(), &num);
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    for case in 0..CASES {
        let mut rng = seeded(600 + case);
        let m = rng.random_range(2..8);
        let label = rng.random_range(0..m);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, analytic) = softmax_cross_entropy(&Tensor::new(&[m], z.clone()).unwrap(), label).unwrap();
        let mut zv = z.clone();
        let num = central_difference(&mut zv, H, |v| {
            softmax_cross_entropy(&Tensor::new(&[m], v.to_vec()).unwrap(), label)
                .unwrap()
                .0
        });
        check("softmax cross-entropy", case, analytic.values(), &num);
    }
}

/// C=1, w=12, B=4, E=2, one block (2, 3, 2, 0), classifier randomized so the
/// gradient reaches every layer.
#[test]
fn tiny_network_end_to_end() {
    let labels = vec![
        ActivityLabel::new(0, "a"),
        ActivityLabel::new(1, "b"),
        ActivityLabel::new(2, "c"),
    ];
    let mut config = NetworkConfig::new(1, 12, 3);
    config.bins = 4;
    config.embedding_dim = 2;
    config.blocks = vec![ConvBlock::new(2, 3, 2, 0.0)];

    for case in 0..CASES {
        let mut rng = seeded(700 + case);
        let mut model = build_network(&config, &mut rng).unwrap();
        model.set_labels(labels.clone()).unwrap();
        for p in model.parameters.iter_mut() {
            let n = p.tensor.len();
            let v = random_vec(&mut rng, n);
            p.tensor.values_mut().copy_from_slice(&v);
        }
        let segment = SegmentTensor {
            channels: random_tensor(&mut rng, &[1, 12]),
            label: labels[rng.random_range(0..3)].clone(),
            subject_id: "s".into(),
            origin_index: 0,
        };
        let (_, grads) = model
            .loss_and_gradients(&segment, Mode::Eval, &mut seeded(0))
            .unwrap();

        for (pi, grad) in grads.iter().enumerate() {
            let mut values = model.parameters[pi].tensor.values().to_vec();
            let num = central_difference(&mut values, H, |v| {
                let mut m = model.clone();
                m.parameters[pi].tensor.values_mut().copy_from_slice(v);
                m.loss(&segment).unwrap()
            });
            let name = &model.parameters[pi].name;
            check(&format!("network {name}"), case, grad.values(), &num);
        }
    }
}
