//! Batch normalization over the channel dimension of NCHW tensors.
//!
//! Training mode normalizes with the biased batch statistics (mean and 1/M
//! variance over the N*H*W values of each channel) and folds them into the
//! running estimates as `running = momentum*running + (1-momentum)*batch`.
//! Inference mode normalizes with the running estimates. `gamma`/`beta` are
//! the learnable affine parameters; running stats are state, not parameters.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BatchNormParams {
    pub gamma: Tensor,        // (1, C, 1, 1)
    pub beta: Tensor,         // (1, C, 1, 1)
    pub running_mean: Tensor, // (1, C, 1, 1)
    pub running_var: Tensor,  // (1, C, 1, 1)
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    /// Fresh parameters: gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(channels: usize) -> Result<BatchNormParams> {
        let mut gamma = Tensor::zeros(1, channels, 1, 1)?;
        gamma.data_mut().fill(1.0);
        let mut running_var = Tensor::zeros(1, channels, 1, 1)?;
        running_var.data_mut().fill(1.0);
        Ok(BatchNormParams {
            gamma,
            beta: Tensor::zeros(1, channels, 1, 1)?,
            running_mean: Tensor::zeros(1, channels, 1, 1)?,
            running_var,
            eps: 1e-5,
            momentum: 0.9,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.c()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels applied to input {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and biased variance over (N, H, W), reduced in a fixed
/// order so results are independent of threading.
fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = x.shape();
    let m = (n * h * w) as f64;
    let plane = h * w;
    let mut stats = vec![(0.0, 0.0); c];
    stats.par_iter_mut().enumerate().for_each(|(ci, slot)| {
        let mut sum = 0.0;
        for ni in 0..n {
            for v in x.plane(ni, ci) {
                sum += v;
            }
        }
        let mean = sum / m;
        let mut var = 0.0;
        for ni in 0..n {
            for v in x.plane(ni, ci) {
                let d = v - mean;
                var += d * d;
            }
        }
        *slot = (mean, var / m);
        let _ = plane;
    });
    stats.into_iter().unzip()
}

/// Forward pass. In training mode this also updates the running statistics,
/// which is why it takes `&mut` params.
pub fn batch_norm_forward(x: &Tensor, p: &mut BatchNormParams, training: bool) -> Result<Tensor> {
    p.check_input(x)?;
    let (n, c, h, w) = x.shape();
    if training && n * h * w < 2 {
        return Err(Error::DegenerateBatch(n * h * w));
    }
    let (mean, var) = if training {
        let (mean, var) = batch_stats(x);
        for ci in 0..c {
            let rm = p.running_mean.get(0, ci, 0, 0);
            let rv = p.running_var.get(0, ci, 0, 0);
            p.running_mean.set(0, ci, 0, 0, p.momentum * rm + (1.0 - p.momentum) * mean[ci]);
            p.running_var.set(0, ci, 0, 0, p.momentum * rv + (1.0 - p.momentum) * var[ci]);
        }
        (mean, var)
    } else {
        (
            (0..c).map(|ci| p.running_mean.get(0, ci, 0, 0)).collect(),
            (0..c).map(|ci| p.running_var.get(0, ci, 0, 0)).collect(),
        )
    };

    let mut y = Tensor::zeros(n, c, h, w)?;
    let plane = h * w;
    let eps = p.eps;
    let gamma = &p.gamma;
    let beta = &p.beta;
    let xd = x.data();
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(chunk, yplane)| {
        let ci = chunk % c; // chunks enumerate (n, c) pairs in order
        let scale = gamma.get(0, ci, 0, 0) / (var[ci] + eps).sqrt();
        let shift = beta.get(0, ci, 0, 0) - mean[ci] * scale;
        let base = chunk * plane;
        for (i, yv) in yplane.iter_mut().enumerate() {
            *yv = xd[base + i] * scale + shift;
        }
    });
    Ok(y)
}

/// Backward pass through the *training-mode* forward (gradients flow through
/// the batch statistics). Batch stats are recomputed from `x`, so no cache
/// has to be carried. Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    x: &Tensor,
    p: &BatchNormParams,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    p.check_input(x)?;
    if gy.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "batch norm backward: input {:?} vs upstream {:?}",
            x.shape(),
            gy.shape()
        )));
    }
    let (n, c, h, w) = x.shape();
    let m = (n * h * w) as f64;
    if n * h * w < 2 {
        return Err(Error::DegenerateBatch(n * h * w));
    }
    let (mean, var) = batch_stats(x);

    let mut gx = Tensor::zeros(n, c, h, w)?;
    let mut ggamma = Tensor::zeros(1, c, 1, 1)?;
    let mut gbeta = Tensor::zeros(1, c, 1, 1)?;

    // Per-channel reductions first (fixed order), then the elementwise map:
    // gx = (gamma/std) * (gy - mean(gy) - xhat * mean(gy*xhat))
    let mut sums = vec![(0.0, 0.0); c];
    sums.par_iter_mut().enumerate().for_each(|(ci, slot)| {
        let inv_std = 1.0 / (var[ci] + p.eps).sqrt();
        let mut s_gy = 0.0;
        let mut s_gy_xhat = 0.0;
        for ni in 0..n {
            let xp = x.plane(ni, ci);
            let gp = gy.plane(ni, ci);
            for (xv, gv) in xp.iter().zip(gp) {
                s_gy += gv;
                s_gy_xhat += gv * (xv - mean[ci]) * inv_std;
            }
        }
        *slot = (s_gy, s_gy_xhat);
    });
    for ci in 0..c {
        gbeta.set(0, ci, 0, 0, sums[ci].0);
        ggamma.set(0, ci, 0, 0, sums[ci].1);
    }

    let plane = h * w;
    let xd = x.data();
    let gyd = gy.data();
    let eps = p.eps;
    let gamma = &p.gamma;
    gx.data_mut().par_chunks_mut(plane).enumerate().for_each(|(chunk, gplane)| {
        let ci = chunk % c;
        let inv_std = 1.0 / (var[ci] + eps).sqrt();
        let scale = gamma.get(0, ci, 0, 0) * inv_std;
        let mean_gy = sums[ci].0 / m;
        let mean_gy_xhat = sums[ci].1 / m;
        let base = chunk * plane;
        for (i, gv) in gplane.iter_mut().enumerate() {
            let xhat = (xd[base + i] - mean[ci]) * inv_std;
            *gv = scale * (gyd[base + i] - mean_gy - xhat * mean_gy_xhat);
        }
    });
    Ok((gx, ggamma, gbeta))
}
