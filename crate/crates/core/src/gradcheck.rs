//! Finite-difference verification of analytic gradients.
//!
//! The check treats a model as a pure function of its flattened parameter
//! vector: each selected coordinate is perturbed by ±h and the central
//! difference is compared against the analytic gradient at the unperturbed
//! point. The loss is a fixed random weighted sum of the outputs — a plain
//! sum is a poor probe because normalization layers shift any constant
//! direction out of the input gradient.

use crate::arch::{build_network, NetworkSpec, StageSpec, StemSpec};
use crate::blocks::BlockKind;
use crate::error::{Error, Result};
use crate::ops::{
    batch_norm_backward, batch_norm_forward, conv2d_backward, conv2d_forward, fully_connected,
    fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    softmax_cross_entropy, BatchNormParams, ConvKind, ConvParams,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Check at most this many randomly chosen coordinates (all if `None`).
    pub sample: Option<usize>,
    /// Seed for weights, inputs, and coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { h: 1e-5, tolerance: 1e-5, sample: None, seed: 17 }
    }
}

/// One checked coordinate.
#[derive(Clone, Copy, Debug)]
pub struct FdEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub total_params: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter tensor (and flat offset within it) of the worst coordinate.
    pub worst: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)` — scale-free near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare analytic gradients of `f` against central differences at the
/// selected coordinates. `f` must return the loss and the full gradient
/// vector at the given point.
pub fn check_fn<F>(f: &mut F, theta: &[f64], indices: &[usize], h: f64) -> Result<Vec<FdEntry>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(theta)?;
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut point = theta.to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= theta.len() {
            return Err(Error::Argument(format!("coordinate {i} out of range")));
        }
        point[i] = theta[i] + h;
        let (loss_plus, _) = f(&point)?;
        point[i] = theta[i] - h;
        let (loss_minus, _) = f(&point)?;
        point[i] = theta[i];
        let numeric = (loss_plus - loss_minus) / (2.0 * h);
        entries.push(FdEntry {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_err: relative_error(analytic[i], numeric),
        });
    }
    Ok(entries)
}

fn select_indices(total: usize, sample: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    match sample {
        Some(k) if k < total => {
            let mut all: Vec<usize> = (0..total).collect();
            rng.shuffle(&mut all);
            all.truncate(k);
            all.sort_unstable();
            all
        }
        _ => (0..total).collect(),
    }
}

/// Build the network described by `spec`, feed it a random batch, and check
/// the gradient of a weighted-sum loss over the logits with respect to every
/// (or a sampled subset of) parameter coordinate.
pub fn check_network(spec: &NetworkSpec, settings: &GradCheckSettings) -> Result<GradCheckReport> {
    spec.validate()?;
    let mut rng = Rng::new(settings.seed);
    let mut net = build_network(spec, &mut rng)?;

    let hw = spec.input_hw;
    let mut x = Tensor::zeros(2, 3, hw, hw)?;
    for v in x.data_mut() {
        *v = rng.standard_normal();
    }
    // normalize the probe so the loss is well under O(1): the central
    // difference then resolves absolute deviations below tolerance * the
    // relative-error denominator floor, keeping numerical noise on
    // chance-tiny gradient coordinates inside the acceptance margin
    let mut weights = Tensor::zeros(2, spec.num_classes, 1, 1)?;
    let scale = 1.0 / (16.0 * weights.len() as f64);
    for v in weights.data_mut() {
        *v = scale * rng.standard_normal();
    }

    // flat layout: tensors in params() order, prefix sums for naming
    let meta = net.param_meta();
    let sizes: Vec<usize> = net.params().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut theta = Vec::with_capacity(total);
    for t in net.params() {
        theta.extend_from_slice(t.data());
    }

    let mut eval = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut offset = 0;
        for t in net.params_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&point[offset..offset + len]);
            offset += len;
        }
        let (logits, cache) = net.forward(&x, true)?;
        let loss = logits
            .data()
            .iter()
            .zip(weights.data())
            .map(|(o, w)| o * w)
            .sum::<f64>();
        let grads = net.backward(&cache, &weights)?;
        let mut flat = Vec::with_capacity(point.len());
        for g in &grads {
            flat.extend_from_slice(g.data());
        }
        Ok((loss, flat))
    };

    let indices = select_indices(total, settings.sample, &mut rng);
    let entries = check_fn(&mut eval, &theta, &indices, settings.h)?;

    let mut max_rel_err = 0.0;
    let mut worst = String::from("-");
    for e in &entries {
        if e.rel_err >= max_rel_err {
            max_rel_err = e.rel_err;
            // locate the tensor containing this flat coordinate
            let mut start = 0;
            for (m, &len) in meta.iter().zip(&sizes) {
                if e.index < start + len {
                    worst = format!("{}[{}]", m.name, e.index - start);
                    break;
                }
                start += len;
            }
        }
    }
    Ok(GradCheckReport {
        name: spec.name.clone(),
        total_params: total,
        checked: entries.len(),
        max_rel_err,
        worst,
        tolerance: settings.tolerance,
    })
}

/// One line of the standard finite-difference suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl SuiteEntry {
    pub fn pass(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

fn randn4(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(n, c, h, w)?;
    for v in t.data_mut() {
        *v = rng.standard_normal();
    }
    Ok(t)
}

/// Probe for weighted-sum losses, normalized so the loss stays well under
/// O(1) (see the note in [`check_network`]).
fn probe4(rng: &mut Rng, shape: (usize, usize, usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = shape;
    let mut t = randn4(rng, n, c, h, w)?;
    let scale = 1.0 / (16.0 * t.len() as f64);
    for v in t.data_mut() {
        *v *= scale;
    }
    Ok(t)
}

fn max_rel(entries: &[FdEntry]) -> f64 {
    entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
}

fn suite_conv(
    name: &str,
    kind: ConvKind,
    wshape: (usize, usize),
    k: usize,
    stride: usize,
    seed: u64,
) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let in_c = 3;
    let x0 = randn4(&mut rng, 2, in_c, 5, 5)?;
    let (wn, wc) = wshape;
    let w0 = randn4(&mut rng, wn, wc, k, k)?;
    let probe = {
        let p = ConvParams::new(kind, w0.clone(), stride)?;
        let y = conv2d_forward(&x0, &p)?;
        probe4(&mut rng, y.shape())?
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
    let entries = check_fn(&mut f, &theta, &indices, 1e-5)?;
    Ok(SuiteEntry { name: name.into(), checked: entries.len(), max_rel_err: max_rel(&entries) })
}

fn suite_batch_norm(seed: u64) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let c = 3;
    let x0 = randn4(&mut rng, 3, c, 4, 4)?;
    let gamma0 = randn4(&mut rng, 1, c, 1, 1)?;
    let beta0 = randn4(&mut rng, 1, c, 1, 1)?;
    let probe = probe4(&mut rng, (3, c, 4, 4))?;
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
    let entries = check_fn(&mut f, &theta, &indices, 1e-5)?;
    Ok(SuiteEntry {
        name: "op/batch_norm".into(),
        checked: entries.len(),
        max_rel_err: max_rel(&entries),
    })
}

fn suite_relu(seed: u64) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let mut x0 = randn4(&mut rng, 2, 3, 4, 4)?;
    for v in x0.data_mut() {
        // keep the kink outside the finite-difference window
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    let probe = probe4(&mut rng, (2, 3, 4, 4))?;
    let mut f = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x = Tensor::from_vec(2, 3, 4, 4, point.to_vec())?;
        let y = relu(&x);
        let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let gx = relu_backward(&x, &probe)?;
        Ok((loss, gx.data().to_vec()))
    };
    let theta = x0.data().to_vec();
    let indices: Vec<usize> = (0..theta.len()).collect();
    let entries = check_fn(&mut f, &theta, &indices, 1e-5)?;
    Ok(SuiteEntry { name: "op/relu".into(), checked: entries.len(), max_rel_err: max_rel(&entries) })
}

fn suite_head_chain(seed: u64) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let (n, c, h, w, classes) = (3, 4, 2, 2, 5);
    let x0 = randn4(&mut rng, n, c, h, w)?;
    let w0 = randn4(&mut rng, classes, c, 1, 1)?;
    let b0 = randn4(&mut rng, 1, classes, 1, 1)?;
    let labels = vec![0usize, 3, 4];
    let (wlen, blen) = (w0.len(), b0.len());
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
    let entries = check_fn(&mut f, &theta, &indices, 1e-5)?;
    Ok(SuiteEntry {
        name: "op/pool+fc+cross_entropy".into(),
        checked: entries.len(),
        max_rel_err: max_rel(&entries),
    })
}

fn suite_block_spec(kind: BlockKind, out: usize, mid: Option<usize>, stride: usize) -> NetworkSpec {
    NetworkSpec {
        name: format!("block/{}/{}", kind.as_str(), if stride == 1 { "identity" } else { "strided" }),
        alpha: 1.0,
        multiplier: 2,
        num_classes: 3,
        input_hw: 8,
        stem: StemSpec { kernel: 3, out: 4, stride: 1 },
        stages: vec![StageSpec { kind, out, mid, stride, repeat: 1 }],
        head_conv: None,
    }
}

/// The fixed finite-difference suite behind the `gradcheck` command: every
/// primitive op, then a one-block network of each block kind in identity
/// and strided form. Toy sizes throughout; runs in about a second.
pub fn standard_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = vec![
        suite_conv("op/conv_standard", ConvKind::Standard, (4, 3), 3, 1, seed.wrapping_add(1))?,
        suite_conv("op/conv_pointwise", ConvKind::Pointwise, (5, 3), 1, 1, seed.wrapping_add(2))?,
        suite_conv(
            "op/conv_depthwise",
            ConvKind::Depthwise { multiplier: 2 },
            (6, 1),
            3,
            2,
            seed.wrapping_add(3),
        )?,
        suite_batch_norm(seed.wrapping_add(4))?,
        suite_relu(seed.wrapping_add(5))?,
        suite_head_chain(seed.wrapping_add(6))?,
    ];
    let blocks = [
        suite_block_spec(BlockKind::ResnetBottleneck, 4, Some(2), 1),
        suite_block_spec(BlockKind::ResnetBottleneck, 6, Some(2), 2),
        suite_block_spec(BlockKind::Psd, 4, Some(2), 1),
        suite_block_spec(BlockKind::Psd, 6, Some(3), 2),
        suite_block_spec(BlockKind::Mbv2Inverted, 4, None, 1),
        suite_block_spec(BlockKind::Mbv2Inverted, 6, None, 2),
        suite_block_spec(BlockKind::Dpd, 4, None, 1),
        suite_block_spec(BlockKind::Dpd, 6, None, 2),
    ];
    for (i, spec) in blocks.iter().enumerate() {
        let settings = GradCheckSettings {
            sample: Some(100),
            seed: seed.wrapping_add(10 + i as u64),
            ..GradCheckSettings::default()
        };
        let report = check_network(spec, &settings)?;
        out.push(SuiteEntry {
            name: report.name.clone(),
            checked: report.checked,
            max_rel_err: report.max_rel_err,
        });
    }
    Ok(out)
}
