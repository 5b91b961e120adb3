//! Finite-difference validation of every backward pass: each primitive op
//! individually, then whole one-block networks of every block kind.
//!
//! Every check treats the quantity under test (weights, normalization
//! parameters, inputs) as one flat coordinate vector and compares analytic
//! gradients against central differences through `gradcheck::check_fn`.
//! Seeds are fixed; the whole file is deterministic.

use dwx_core::arch::{NetworkSpec, StageSpec, StemSpec};
use dwx_core::blocks::BlockKind;
use dwx_core::gradcheck::{check_fn, check_network, FdEntry, GradCheckSettings};
use dwx_core::ops::{
    batch_norm_backward, batch_norm_forward, conv2d_backward, conv2d_forward, fully_connected,
    fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    softmax_cross_entropy, BatchNormParams, ConvKind, ConvParams,
};
use dwx_core::rng::Rng;
use dwx_core::tensor::Tensor;
use dwx_core::Result;

const TOL: f64 = 1e-5;

fn assert_all_pass(entries: &[FdEntry], what: &str) {
    for e in entries {
        assert!(
            e.rel_err <= TOL,
            "{what}: coordinate {} analytic {} vs numeric {} (rel err {})",
            e.index,
            e.analytic,
            e.numeric,
            e.rel_err
        );
    }
}

fn randn(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(n, c, h, w).unwrap();
    for v in t.data_mut() {
        *v = rng.standard_normal();
    }
    t
}

/// Random values kept away from zero so ReLU-style kinks can't sit inside
/// the finite-difference window.
fn randn_off_zero(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = randn(rng, n, c, h, w);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

/// Probe for weighted-sum losses, normalized so the loss stays well under
/// O(1). The central difference then resolves deviations below
/// tolerance x the relative-error denominator floor, so numerical noise on
/// chance-tiny gradient coordinates cannot trip the check.
fn probe_like(rng: &mut Rng, shape: (usize, usize, usize, usize)) -> Tensor {
    let (n, c, h, w) = shape;
    let mut t = randn(rng, n, c, h, w);
    let scale = 1.0 / (16.0 * t.len() as f64);
    for v in t.data_mut() {
        *v *= scale;
    }
    t
}

/// FD-check a conv: the coordinate vector is [weights, input], the loss is a
/// fixed random weighted sum of the outputs.
fn check_conv(kind: ConvKind, wshape: (usize, usize), k: usize, stride: usize, in_c: usize) {
    let mut rng = Rng::new(100 + k as u64 + stride as u64);
    let x0 = randn(&mut rng, 2, in_c, 5, 5);
    let (wn, wc) = wshape;
    let w0 = randn(&mut rng, wn, wc, k, k);
    let probe = {
        let probe_params = ConvParams::new(kind, w0.clone(), stride).unwrap();
        let y = conv2d_forward(&x0, &probe_params).unwrap();
        probe_like(&mut rng, y.shape())
    };

    let wlen = w0.len();
    let mut f = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let w = Tensor::from_vec(wn, wc, k, k, point[..wlen].to_vec())?;
        let x = Tensor::from_vec(2, in_c, 5, 5, point[wlen..].to_vec())?;
        let p = ConvParams::new(kind, w, stride)?;
        let y = conv2d_forward(&x, &p)?;
        let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let (gx, gw) = conv2d_backward(&x, &p, &probe)?;
        let mut flat = gw.data().to_vec();
        flat.extend_from_slice(gx.data());
        Ok((loss, flat))
    };

    let mut theta = w0.data().to_vec();
    theta.extend_from_slice(x0.data());
    let indices: Vec<usize> = (0..theta.len()).collect();
    let entries = check_fn(&mut f, &theta, &indices, 1e-5).unwrap();
    assert_all_pass(&entries, &format!("{kind:?} k{k} s{stride}"));
}

#[test]
fn standard_conv_gradients() {
    check_conv(ConvKind::Standard, (4, 3), 3, 1, 3);
    check_conv(ConvKind::Standard, (4, 3), 3, 2, 3);
}

#[test]
fn pointwise_conv_gradients() {
    check_conv(ConvKind::Pointwise, (5, 3), 1, 1, 3);
    check_conv(ConvKind::Pointwise, (5, 3), 1, 2, 3);
}

#[test]
fn depthwise_conv_gradients() {
    // multiplier 1 and 3, both strides
    check_conv(ConvKind::Depthwise { multiplier: 1 }, (3, 1), 3, 1, 3);
    check_conv(ConvKind::Depthwise { multiplier: 3 }, (9, 1), 3, 2, 3);
}

#[test]
fn batch_norm_gradients() {
    let mut rng = Rng::new(200);
    let c = 3;
    let x0 = randn(&mut rng, 3, c, 4, 4);
    let gamma0 = randn(&mut rng, 1, c, 1, 1);
    let beta0 = randn(&mut rng, 1, c, 1, 1);
    let probe = probe_like(&mut rng, (3, c, 4, 4));

    let mut f = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut p = BatchNormParams::new(c)?;
        p.gamma = Tensor::from_vec(1, c, 1, 1, point[..c].to_vec())?;
        p.beta = Tensor::from_vec(1, c, 1, 1, point[c..2 * c].to_vec())?;
        let x = Tensor::from_vec(3, c, 4, 4, point[2 * c..].to_vec())?;
        let y = batch_norm_forward(&x, &mut p, true)?;
        let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let (gx, ggamma, gbeta) = batch_norm_backward(&x, &p, &probe)?;
        let mut flat = ggamma.data().to_vec();
        flat.extend_from_slice(gbeta.data());
        flat.extend_from_slice(gx.data());
        Ok((loss, flat))
    };

    let mut theta = gamma0.data().to_vec();
    theta.extend_from_slice(beta0.data());
    theta.extend_from_slice(x0.data());
    let indices: Vec<usize> = (0..theta.len()).collect();
    let entries = check_fn(&mut f, &theta, &indices, 1e-5).unwrap();
    assert_all_pass(&entries, "batch norm");
}

#[test]
fn relu_gradients_away_from_kink() {
    let mut rng = Rng::new(300);
    let x0 = randn_off_zero(&mut rng, 2, 3, 4, 4);
    let probe = probe_like(&mut rng, (2, 3, 4, 4));
    let mut f = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x = Tensor::from_vec(2, 3, 4, 4, point.to_vec())?;
        let y = relu(&x);
        let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let gx = relu_backward(&x, &probe)?;
        Ok((loss, gx.data().to_vec()))
    };
    let theta = x0.data().to_vec();
    let indices: Vec<usize> = (0..theta.len()).collect();
    let entries = check_fn(&mut f, &theta, &indices, 1e-5).unwrap();
    assert_all_pass(&entries, "relu");
}

#[test]
fn pool_fc_cross_entropy_gradients() {
    // the whole classification head in one chain: pool -> fc -> mean CE
    let mut rng = Rng::new(400);
    let (n, c, h, w, classes) = (3, 4, 2, 2, 5);
    let x0 = randn(&mut rng, n, c, h, w);
    let w0 = randn(&mut rng, classes, c, 1, 1);
    let b0 = randn(&mut rng, 1, classes, 1, 1);
    let labels = vec![0usize, 3, 4];

    let wlen = w0.len();
    let blen = b0.len();
    let mut f = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let wt = Tensor::from_vec(classes, c, 1, 1, point[..wlen].to_vec())?;
        let bt = Tensor::from_vec(1, classes, 1, 1, point[wlen..wlen + blen].to_vec())?;
        let x = Tensor::from_vec(n, c, h, w, point[wlen + blen..].to_vec())?;
        let pooled = global_avg_pool(&x, (h, w))?;
        let logits = fully_connected(&pooled, &wt, &bt)?;
        let (loss, g_logits) = softmax_cross_entropy(&logits, &labels)?;
        let (g_pooled, gw, gb) = fully_connected_backward(&pooled, &wt, &g_logits)?;
        let gx = global_avg_pool_backward((n, c, h, w), &g_pooled)?;
        let mut flat = gw.data().to_vec();
        flat.extend_from_slice(gb.data());
        flat.extend_from_slice(gx.data());
        Ok((loss, flat))
    };

    let mut theta = w0.data().to_vec();
    theta.extend_from_slice(b0.data());
    theta.extend_from_slice(x0.data());
    let indices: Vec<usize> = (0..theta.len()).collect();
    let entries = check_fn(&mut f, &theta, &indices, 1e-5).unwrap();
    assert_all_pass(&entries, "pool/fc/cross-entropy");
}

/// One-stage network of the given kind: stem, a single block, classifier.
fn one_block_spec(kind: BlockKind, out: usize, mid: Option<usize>, stride: usize) -> NetworkSpec {
    NetworkSpec {
        name: format!("gradcheck-{}", kind.as_str()),
        alpha: 1.0,
        multiplier: 2,
        num_classes: 3,
        input_hw: 8,
        stem: StemSpec { kernel: 3, out: 4, stride: 1 },
        stages: vec![StageSpec { kind, out, mid, stride, repeat: 1 }],
        head_conv: None,
    }
}

fn check_block_kind(spec: &NetworkSpec, seed: u64) {
    let settings = GradCheckSettings { sample: Some(120), seed, ..GradCheckSettings::default() };
    let report = check_network(spec, &settings).unwrap();
    assert!(
        report.pass(),
        "{}: max rel err {} at {} (checked {}/{})",
        report.name,
        report.max_rel_err,
        report.worst,
        report.checked,
        report.total_params
    );
}

#[test]
fn bottleneck_block_network_gradients() {
    // identity shortcut (stride 1, in == out) and projection (stride 2)
    check_block_kind(&one_block_spec(BlockKind::ResnetBottleneck, 4, Some(2), 1), 1);
    check_block_kind(&one_block_spec(BlockKind::ResnetBottleneck, 6, Some(2), 2), 2);
}

#[test]
fn depthwise_tail_block_network_gradients() {
    check_block_kind(&one_block_spec(BlockKind::Psd, 4, Some(2), 1), 3);
    check_block_kind(&one_block_spec(BlockKind::Psd, 6, Some(3), 2), 4);
}

#[test]
fn inverted_residual_block_network_gradients() {
    check_block_kind(&one_block_spec(BlockKind::Mbv2Inverted, 4, None, 1), 5);
    check_block_kind(&one_block_spec(BlockKind::Mbv2Inverted, 6, None, 2), 6);
}

#[test]
fn dual_depthwise_block_network_gradients() {
    check_block_kind(&one_block_spec(BlockKind::Dpd, 4, None, 1), 7);
    check_block_kind(&one_block_spec(BlockKind::Dpd, 6, None, 2), 8);
}

#[test]
fn deeper_mixed_network_gradients() {
    // two stages, a projection, a head conv: the full assembly in one check
    let spec = NetworkSpec {
        name: "gradcheck-mixed".into(),
        alpha: 1.0,
        multiplier: 2,
        num_classes: 4,
        input_hw: 8,
        stem: StemSpec { kernel: 3, out: 4, stride: 1 },
        stages: vec![
            StageSpec { kind: BlockKind::Dpd, out: 4, mid: None, stride: 1, repeat: 1 },
            StageSpec { kind: BlockKind::ResnetBottleneck, out: 8, mid: Some(4), stride: 2, repeat: 1 },
        ],
        head_conv: Some(6),
    };
    check_block_kind(&spec, 9);
}
