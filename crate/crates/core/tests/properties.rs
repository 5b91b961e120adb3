//! Randomized algebraic properties, all under fixed seeds.
//!
//! 1. Factorized-kernel equivalence: a pointwise conv after a depthwise conv
//!    computes exactly the standard convolution whose kernel factors as
//!    `W[o,i,:,:] = P[o,i] * K[i,:,:]` — the identity that makes depthwise
//!    stacks drop-in replacements for full convolutions.
//! 2. The closed-form cost ratio between channel expansion by pointwise conv
//!    and by depthwise multiplier is exactly `c / k^2`, independent of the
//!    multiplier and the spatial size.
//! 3. Thread-count independence: forward and backward results are bitwise
//!    identical across thread pools.

use dwx_core::analysis::{dwc_cost, expansion_ratio, pwc_cost, Ratio};
use dwx_core::arch::{build_network, builtin_spec};
use dwx_core::ops::{conv2d_backward, conv2d_forward, ConvKind, ConvParams};
use dwx_core::rng::Rng;
use dwx_core::tensor::Tensor;

fn randn(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(n, c, h, w).unwrap();
    for v in t.data_mut() {
        *v = rng.standard_normal();
    }
    t
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn depthwise_then_pointwise_equals_factorized_standard_conv() {
    let mut rng = Rng::new(1001);
    for trial in 0..120 {
        let cin = 1 + rng.below(4);
        let cout = 1 + rng.below(4);
        let n = 1 + rng.below(2);
        let stride = 1 + rng.below(2);
        let x = randn(&mut rng, n, cin, 4, 4);

        // per-input-channel spatial kernel and a mixing matrix
        let k_spatial = randn(&mut rng, cin, 1, 3, 3);
        let p_mix = randn(&mut rng, cout, cin, 1, 1);

        // standard conv with the factorized kernel
        let mut w_full = Tensor::zeros(cout, cin, 3, 3).unwrap();
        for o in 0..cout {
            for i in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let v = p_mix.get(o, i, 0, 0) * k_spatial.get(i, 0, ky, kx);
                        let off = w_full.offset(o, i, ky, kx);
                        w_full.data_mut()[off] = v;
                    }
                }
            }
        }
        let standard = ConvParams::new(ConvKind::Standard, w_full, stride).unwrap();
        let y_std = conv2d_forward(&x, &standard).unwrap();

        // depthwise (spatial, strided) then pointwise (mixing)
        let dwc =
            ConvParams::new(ConvKind::Depthwise { multiplier: 1 }, k_spatial.clone(), stride)
                .unwrap();
        let pwc = ConvParams::new(ConvKind::Pointwise, p_mix.clone(), 1).unwrap();
        let y_sep = conv2d_forward(&conv2d_forward(&x, &dwc).unwrap(), &pwc).unwrap();

        let diff = max_abs_diff(&y_std, &y_sep);
        assert!(diff <= 1e-12, "trial {trial}: max deviation {diff}");
    }
}

#[test]
fn expansion_cost_ratio_is_c_over_k_squared() {
    let mut rng = Rng::new(2002);
    for _ in 0..1000 {
        let c = 1 + rng.below(512);
        let k = [1usize, 3, 5, 7][rng.below(4)];
        let m = 1 + rng.below(6);
        let h = 1 + rng.below(64);
        let w = 1 + rng.below(64);

        // expanding c channels to m*c: pointwise vs depthwise-with-multiplier
        let (pwc_params, pwc_macs) = pwc_cost(c, m * c, h, w);
        let (dwc_params, dwc_macs) = dwc_cost(c, m, k, h, w);

        let expected = expansion_ratio(c, k).unwrap();
        assert_eq!(Ratio::new(pwc_params, dwc_params).unwrap(), expected);
        assert_eq!(Ratio::new(pwc_macs, dwc_macs).unwrap(), expected);
        // and the multiplier/spatial size cancel entirely: the same ratio in
        // plain integers
        assert_eq!(pwc_params * (k * k) as u64, dwc_params * c as u64);
    }
}

#[test]
fn results_are_bitwise_identical_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = Rng::new(3003);
            let spec = builtin_spec("dpdnet_cifar", 0.5, 2, 10).unwrap();
            let mut net = build_network(&spec, &mut rng).unwrap();
            let x = randn(&mut rng, 4, 3, 32, 32);
            let (logits, cache) = net.forward(&x, true).unwrap();
            let probe = {
                let mut p = logits.clone();
                let scale = 1.0 / p.len() as f64;
                for v in p.data_mut() {
                    *v *= scale;
                }
                p
            };
            let grads = net.backward(&cache, &probe).unwrap();
            (logits, grads)
        })
    };
    let (logits_1, grads_1) = run(1);
    let (logits_4, grads_4) = run(4);
    let (logits_8, grads_8) = run(8);
    assert_eq!(logits_1, logits_4);
    assert_eq!(logits_1, logits_8);
    assert_eq!(grads_1.len(), grads_4.len());
    for (a, b) in grads_1.iter().zip(&grads_4) {
        assert_eq!(a, b);
    }
    for (a, b) in grads_1.iter().zip(&grads_8) {
        assert_eq!(a, b);
    }
}

#[test]
fn single_conv_backward_is_thread_count_independent() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = Rng::new(4004);
            let x = randn(&mut rng, 6, 8, 10, 10);
            let w = randn(&mut rng, 12, 8, 3, 3);
            let p = ConvParams::new(ConvKind::Standard, w, 2).unwrap();
            let y = conv2d_forward(&x, &p).unwrap();
            let gy = randn(&mut rng, y.n(), y.c(), y.h(), y.w());
            let (gx, gw) = conv2d_backward(&x, &p, &gy).unwrap();
            (y, gx, gw)
        })
    };
    let a = run(1);
    let b = run(7);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
