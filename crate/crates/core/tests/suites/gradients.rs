//! Central finite differences against every backward kernel and against the
//! graph-level gradient sweep, in double precision.

use o2b_core::engine::{forward, forward_patched};
use o2b_core::fixtures;
use o2b_core::gradcam::backward_to_layer;
use o2b_core::model::{AblationMask, ModelGraph};
use o2b_core::tensor::{BatchNorm2d, Conv2d, Layer, Linear, Pool2d, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const MAX_REL: f64 = 1e-6;
pub const CASES: u64 = 20;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

/// Values at least 0.01 away from zero.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced 0.05 apart in random order, so no pooling window has a near tie.
pub fn tie_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor::new(shape.to_vec(), ranks.into_iter().map(|r| 0.05 * r as f64 - 1.0).collect()).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error of `layer.backward` against central differences of
/// `<g, layer(x)>` over every input element.
pub fn layer_error(layer: &Layer<f64>, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let (y, argmax) = layer.forward(&refs).unwrap();
    let g = uniform(rng, y.shape(), 1.0);
    let grads = layer.backward(&g, &refs, &y, argmax.as_ref()).unwrap();
    let objective = |xs: &[Tensor<f64>]| -> f64 {
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let (y, _) = layer.forward(&refs).unwrap();
        y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (slot, grad) in grads.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[slot].shape());
        for i in 0..inputs[slot].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[slot] = bump(&plus[slot], i, EPS);
            minus[slot] = bump(&minus[slot], i, -EPS);
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

pub fn bump(t: &Tensor<f64>, i: usize, by: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[i] += by;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

pub fn run_cases(name: &str, mut case: impl FnMut(&mut ChaCha8Rng) -> (Layer<f64>, Vec<Tensor<f64>>)) {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layer, inputs) = case(&mut rng);
        let err = layer_error(&layer, &inputs, &mut rng);
        assert!(err <= MAX_REL, "{name} case {seed}: relative error {err:e}");
    }
}

pub fn conv2d_backward() {
    run_cases("conv2d", |rng| {
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=4);
        let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let (h, w) = (rng.gen_range(kh.max(3)..=7), rng.gen_range(kw.max(3)..=7));
        let weight = uniform(rng, &[cout, cin, kh, kw], 1.0);
        let bias = rng.gen_bool(0.5).then(|| (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let conv = Conv2d::new(weight, bias, stride, padding).unwrap();
        (Layer::Conv2d(conv), vec![uniform(rng, &[cin, h, w], 1.0)])
    });
}

pub fn linear_backward() {
    run_cases("linear", |rng| {
        let (fin, fout) = (rng.gen_range(1..=12), rng.gen_range(1..=4));
        let weight = uniform(rng, &[fout, fin], 1.0);
        let bias = Some((0..fout).map(|_| rng.gen_range(-0.5..0.5)).collect());
        (Layer::Linear(Linear::new(weight, bias).unwrap()), vec![uniform(rng, &[fin], 1.0)])
    });
}

pub fn relu_backward() {
    run_cases("relu", |rng| {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5)];
        (Layer::Relu, vec![off_zero(rng, &shape)])
    });
}

pub fn sigmoid_backward() {
    run_cases("sigmoid", |rng| {
        let shape = [rng.gen_range(1..=6)];
        (Layer::Sigmoid, vec![uniform(rng, &shape, 4.0)])
    });
}

pub fn batchnorm_backward() {
    run_cases("batchnorm", |rng| {
        let c = rng.gen_range(1..=4);
        let scale = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let shift = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bn = BatchNorm2d::new(scale, shift).unwrap();
        let shape = [c, rng.gen_range(1..=4), rng.gen_range(1..=4)];
        (Layer::BatchNorm2d(bn), vec![uniform(rng, &shape, 1.0)])
    });
}

pub fn maxpool_backward() {
    run_cases("maxpool", |rng| {
        let k = rng.gen_range(2..=3);
        let pool = Pool2d::new(k, rng.gen_range(1..=k), rng.gen_range(0..=k / 2)).unwrap();
        let shape = [rng.gen_range(1..=3), rng.gen_range(k..=7), rng.gen_range(k..=7)];
        (Layer::MaxPool2d(pool), vec![tie_free(rng, &shape)])
    });
}

pub fn avgpool_backward() {
    run_cases("avgpool", |rng| {
        let k = rng.gen_range(1..=3);
        let pool = Pool2d::new(k, rng.gen_range(1..=k), rng.gen_range(0..=k / 2)).unwrap();
        let shape = [rng.gen_range(1..=3), rng.gen_range(k..=7), rng.gen_range(k..=7)];
        (Layer::AvgPool2d(pool), vec![uniform(rng, &shape, 1.0)])
    });
}

pub fn adaptive_avgpool_backward() {
    run_cases("adaptive avgpool", |rng| {
        let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
        let (out_h, out_w) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
        let layer = Layer::AdaptiveAvgPool2d { out_h, out_w };
        let c = rng.gen_range(1..=3);
        (layer, vec![uniform(rng, &[c, h, w], 1.0)])
    });
}

pub fn add_and_flatten_backward() {
    run_cases("add", |rng| {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
        (Layer::Add, vec![uniform(rng, &shape, 1.0), uniform(rng, &shape, 1.0)])
    });
    run_cases("flatten", |rng| {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
        (Layer::Flatten, vec![uniform(rng, &shape, 1.0)])
    });
}

/// Gradient of the logit at `target` against differences of patched forward passes,
/// on a random subset of activation elements. Only clearly positive elements are
/// perturbed: exact zeros from a relu tie inside downstream pooling windows.
pub fn graph_error(graph: &ModelGraph<f64>, target: &str, seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = fixtures::random_image(graph.input_shape(), seed).cast::<f64>();
    let empty = AblationMask::empty();
    let pass = forward(graph, &x, &empty, &[target]).unwrap();
    let grad = backward_to_layer(graph, &pass, target).unwrap();
    let act = &pass.captures[target];
    let logit = |a: &Tensor<f64>| forward_patched(graph, &x, target, a, &empty).unwrap().logit;
    let mut idx: Vec<usize> = (0..act.len()).filter(|&i| act.data()[i] > 1e-3).collect();
    assert!(idx.len() >= 8, "too few active units at {target}");
    idx.shuffle(&mut rng);
    let mut worst = 0.0f64;
    for &i in idx.iter().take(samples) {
        let numeric = (logit(&bump(act, i, EPS)) - logit(&bump(act, i, -EPS))) / (2.0 * EPS);
        worst = worst.max(rel_err(grad.data()[i], numeric));
    }
    worst
}

pub fn backward_to_layer_matches_patched_differences() {
    let mut cases = 0;
    for seed in 0..4u64 {
        let chain = fixtures::toy_chain(seed).cast::<f64>();
        let residual = fixtures::toy_residual(seed).cast::<f64>();
        let nets: [(&ModelGraph<f64>, &[&str]); 2] =
            [(&chain, &["relu1", "relu2", "relu3"]), (&residual, &["layer1.relu1", "layer1"])];
        for (graph, targets) in nets {
            for target in targets {
                let err = graph_error(graph, target, seed, 40);
                assert!(err <= MAX_REL, "{target} seed {seed}: relative error {err:e}");
                cases += 1;
            }
        }
    }
    assert!(cases >= 20);
}

pub fn backward_to_layer_on_the_alexnet_like_stack() {
    let g = fixtures::alexnet_like(7).cast::<f64>();
    for target in ["features.4", "features.9", "features.11"] {
        let err = graph_error(&g, target, 7, 25);
        assert!(err <= MAX_REL, "{target}: relative error {err:e}");
    }
}
