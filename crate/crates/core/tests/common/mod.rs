//! Shared test fixtures: gradient-check suites and small random inputs.
#![allow(dead_code)]

pub mod oracles;

use alesal_core::model::{AlesalModel, ModelConfig, WindowInput};
use alesal_core::nn::ops::{
    conv1d, conv1d_backward, dense, dense_backward, global_average_pool, global_average_pool_backward, maxpool1d, maxpool1d_backward,
    relu, relu_backward, sigmoid, sigmoid_backward,
};
use alesal_core::nn::params::{flatten, unflatten, zeros_like};
use alesal_core::nn::{
    batchnorm_relu_maxpool_backward, batchnorm_relu_maxpool_train, grad_check, gru_backward, gru_forward, pooled_projection,
    pooled_projection_backward, self_attention_residual, self_attention_residual_backward, softmax_cross_entropy, AttentionParams,
    BatchNorm, GradCheckReport, GruParams, Parameters, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values spread apart and away from zero so ReLU and max-pool kinks are
/// further than the finite-difference step from every point.
pub fn spread(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.25) * 0.1 - n as f64 * 0.05).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn weighted(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn with<P: Parameters + Clone>(base: &P, flat: &Tensor) -> P {
    let mut p = base.clone();
    unflatten(&mut p, flat.data()).unwrap();
    p
}

fn tracked<P: Parameters>(p: &P) -> Tensor {
    Tensor::vector(flatten(p)).requires_grad()
}

pub fn check_dense(batch: usize, inp: usize, out: usize, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = randn(&[batch, inp], &mut r).requires_grad();
    let w = randn(&[inp, out], &mut r).requires_grad();
    let b = randn(&[out], &mut r).requires_grad();
    let c = randn(&[batch, out], &mut r);
    grad_check(
        |t| {
            let y = dense(&t[0], &t[1], &t[2]).unwrap();
            let (mut dw, mut db) = (t[1].zeros_like(), t[2].zeros_like());
            let dx = dense_backward(&t[0], &t[1], &c, &mut dw, &mut db).unwrap();
            (weighted(y.data(), c.data()), vec![dx.into_data(), dw.into_data(), db.into_data()])
        },
        &[x, w, b],
        STEP,
        OP_TOL,
    )
}

pub fn check_conv(cin: usize, len: usize, cout: usize, k: usize, stride: usize, pad: usize, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = randn(&[cin, len], &mut r).requires_grad();
    let kern = randn(&[cout, cin, k], &mut r).requires_grad();
    let bias = randn(&[cout], &mut r).requires_grad();
    let probe = conv1d(&x, &kern, Some(&bias), stride, pad).unwrap();
    let c = randn(probe.shape(), &mut r);
    grad_check(
        |t| {
            let y = conv1d(&t[0], &t[1], Some(&t[2]), stride, pad).unwrap();
            let (mut dk, mut db) = (t[1].zeros_like(), t[2].zeros_like());
            let dx = conv1d_backward(&t[0], &t[1], &c, stride, pad, &mut dk, Some(&mut db)).unwrap();
            (weighted(y.data(), c.data()), vec![dx.into_data(), dk.into_data(), db.into_data()])
        },
        &[x, kern, bias],
        STEP,
        OP_TOL,
    )
}

pub fn check_relu(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = spread(&[3, 7], &mut r).requires_grad();
    let c = randn(&[3, 7], &mut r);
    grad_check(
        |t| (weighted(relu(&t[0]).data(), c.data()), vec![relu_backward(&t[0], &c).into_data()]),
        &[x],
        STEP,
        OP_TOL,
    )
}

pub fn check_maxpool(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = spread(&[2, 9], &mut r).requires_grad();
    let c = randn(&[2, 3], &mut r);
    grad_check(
        |t| {
            let (y, idx) = maxpool1d(&t[0], 3).unwrap();
            (weighted(y.data(), c.data()), vec![maxpool1d_backward(t[0].shape(), &idx, &c).unwrap().into_data()])
        },
        &[x],
        STEP,
        OP_TOL,
    )
}

pub fn check_gap(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = randn(&[4, 5], &mut r).requires_grad();
    let c = randn(&[4], &mut r);
    grad_check(
        |t| {
            let y = global_average_pool(&t[0]).unwrap();
            (weighted(y.data(), c.data()), vec![global_average_pool_backward(t[0].shape(), &c).into_data()])
        },
        &[x],
        STEP,
        OP_TOL,
    )
}

pub fn check_sigmoid(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = randn(&[6], &mut r);
    let x = Tensor::vector(x.data().iter().map(|v| v * 4.0).collect()).requires_grad();
    let c = randn(&[6], &mut r);
    grad_check(
        |t| {
            let y = sigmoid(&t[0]);
            (weighted(y.data(), c.data()), vec![sigmoid_backward(&y, &c).into_data()])
        },
        &[x],
        STEP,
        OP_TOL,
    )
}

pub fn check_softmax_ce(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let logits = randn(&[4, 3], &mut r).requires_grad();
    let labels = [0, 2, 1, 2];
    grad_check(
        |t| {
            let ce = softmax_cross_entropy(&t[0], &labels).unwrap();
            (ce.loss, vec![ce.dlogits.into_data()])
        },
        &[logits],
        STEP,
        OP_TOL,
    )
}

/// Batch norm (training mode) followed by ReLU and max-pool, over a batch
/// of three `[2 × 9]` maps; checks inputs, gamma and beta.
pub fn check_bn_block(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut bn = BatchNorm::new(2);
    bn.gamma = Tensor::vector(vec![1.3, 0.7]);
    bn.beta = Tensor::vector(vec![0.2, -0.1]);
    let xs: Vec<Tensor> = (0..3).map(|_| randn(&[2, 9], &mut r)).collect();
    let flat_x = Tensor::vector(xs.iter().flat_map(|x| x.data().to_vec()).collect()).requires_grad();
    let cs: Vec<Tensor> = (0..3).map(|_| randn(&[2, 3], &mut r)).collect();
    let unpack = |t: &Tensor| -> Vec<Tensor> { t.data().chunks(18).map(|c| Tensor::new(vec![2, 9], c.to_vec()).unwrap()).collect() };
    grad_check(
        |t| {
            let p = with(&bn, &t[1]);
            let xs = unpack(&t[0]);
            let (ys, cache, _) = batchnorm_relu_maxpool_train(&xs, &p).unwrap();
            let loss = ys.iter().zip(&cs).map(|(y, c)| weighted(y.data(), c.data())).sum();
            let mut g = zeros_like(&p);
            let dxs = batchnorm_relu_maxpool_backward(&cache, &cs, &p, &mut g).unwrap();
            (loss, vec![dxs.iter().flat_map(|d| d.data().to_vec()).collect(), flatten(&g)])
        },
        &[flat_x, tracked(&bn)],
        STEP,
        OP_TOL,
    )
}

pub fn check_gru(t_len: usize, inp: usize, hid: usize, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let p = GruParams::new(inp, hid, &mut r);
    let seq = randn(&[t_len, inp], &mut r).requires_grad();
    let h0 = randn(&[hid], &mut r).requires_grad();
    let c = randn(&[t_len, hid], &mut r);
    grad_check(
        |t| {
            let p = with(&p, &t[1]);
            let (hs, cache) = gru_forward(&t[0], &p, t[2].data()).unwrap();
            let mut g = zeros_like(&p);
            let (dx, dh0) = gru_backward(&p, &cache, &c, &mut g).unwrap();
            (weighted(hs.data(), c.data()), vec![dx.into_data(), flatten(&g), dh0])
        },
        &[seq, tracked(&p), h0],
        STEP,
        OP_TOL,
    )
}

pub fn check_self_attention(t_len: usize, d: usize, out: usize, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let p = AttentionParams::new(d, d, out, &mut r).unwrap();
    let x = randn(&[t_len, d], &mut r).requires_grad();
    let c = randn(&[out], &mut r);
    grad_check(
        |t| {
            let p = with(&p, &t[1]);
            let (y, cache) = self_attention_residual(&t[0], &p).unwrap();
            let mut g = zeros_like(&p);
            let dx = self_attention_residual_backward(&p, &cache, &c, &mut g).unwrap();
            (weighted(y.data(), c.data()), vec![dx.into_data(), flatten(&g)])
        },
        &[x, tracked(&p)],
        STEP,
        OP_TOL,
    )
}

pub fn check_pooled_projection(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let p = AttentionParams::new(4, 4, 3, &mut r).unwrap();
    let x = randn(&[5, 4], &mut r).requires_grad();
    let c = randn(&[3], &mut r);
    grad_check(
        |t| {
            let p = with(&p, &t[1]);
            let y = pooled_projection(&t[0], &p).unwrap();
            let mut g = zeros_like(&p);
            let dx = pooled_projection_backward(&t[0], &p, &c, &mut g).unwrap();
            // Projection parameters that the pooled path does not touch get zero gradient.
            (weighted(y.data(), c.data()), vec![dx.into_data(), flatten(&g)])
        },
        &[x, tracked(&p)],
        STEP,
        OP_TOL,
    )
}

/// Every operator check at the operator tolerance.
pub fn op_suite() -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("dense", check_dense(3, 5, 4, 1)),
        ("conv1d", check_conv(2, 11, 3, 5, 1, 2, 2)),
        ("conv1d_stride2", check_conv(3, 10, 2, 3, 2, 1, 3)),
        ("relu", check_relu(4)),
        ("maxpool1d", check_maxpool(5)),
        ("global_average_pool", check_gap(6)),
        ("sigmoid", check_sigmoid(7)),
        ("softmax_cross_entropy", check_softmax_ce(8)),
        ("batchnorm_relu_maxpool", check_bn_block(9)),
        ("gru", check_gru(5, 3, 4, 10)),
        ("self_attention", check_self_attention(5, 4, 3, 11)),
        ("pooled_projection", check_pooled_projection(12)),
    ]
}

/// Two pairs, GRU hidden size 4.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        pairs: 2,
        series_len: 18,
        frames: 4,
        bins: 5,
        me_channels: 2,
        me_kernel: 3,
        gru_hidden: 4,
        d_k: 4,
        time_latent: 3,
        pair_latent: 3,
        head_hidden: 6,
        ..ModelConfig::default()
    }
}

pub fn random_input(config: &ModelConfig, rng: &mut ChaCha8Rng) -> WindowInput {
    WindowInput {
        series: (0..config.pairs).map(|_| (0..config.series_len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        spectrograms: (0..config.pairs).map(|_| randn(&[config.frames, config.bins], rng)).collect(),
    }
}

/// End-to-end check of the training-mode loss with respect to every
/// network parameter, on a batch of three windows.
pub fn check_tiny_network(config: ModelConfig, seed: u64) -> GradCheckReport {
    let model = AlesalModel::new(config.clone(), seed).unwrap();
    let mut r = rng(seed + 100);
    let inputs: Vec<WindowInput> = (0..3).map(|_| random_input(&config, &mut r)).collect();
    let labels = [0, 1, 2];
    let refs: Vec<&WindowInput> = inputs.iter().collect();
    grad_check(
        |t| {
            let mut m = model.clone();
            unflatten(&mut m.params, t[0].data()).unwrap();
            let fwd = m.forward_batch(&refs, true).unwrap();
            let ce = softmax_cross_entropy(&fwd.logits, &labels).unwrap();
            let g = m.backward_batch(&fwd, &ce.dlogits).unwrap();
            (ce.loss, vec![flatten(&g)])
        },
        &[tracked(&model.params)],
        STEP,
        NET_TOL,
    )
}
