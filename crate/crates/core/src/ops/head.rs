//! Activation, pooling, fully-connected, and loss ops used by the network
//! heads (and everywhere in between, for ReLU).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Gradient mask: passes upstream gradient where the *input* was positive.
/// The subgradient at exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Result<Tensor> {
    if x.shape() != gy.shape() {
        return Err(Error::Shape(format!(
            "relu backward: input {:?} vs upstream {:?}",
            x.shape(),
            gy.shape()
        )));
    }
    let mut gx = gy.clone();
    for (g, xv) in gx.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(gx)
}

/// Average pool over the full spatial extent. The expected window is passed
/// explicitly so a network head can insist on the spatial size it was
/// designed for (e.g. 8x8 after the last stride-2 stage on 32x32 inputs).
pub fn global_avg_pool(x: &Tensor, window: (usize, usize)) -> Result<Tensor> {
    if (x.h(), x.w()) != window {
        return Err(Error::Shape(format!(
            "avg pool window {}x{} applied to {}x{} feature map",
            window.0,
            window.1,
            x.h(),
            x.w()
        )));
    }
    let (n, c, h, w) = x.shape();
    let inv = 1.0 / (h * w) as f64;
    let mut y = Tensor::zeros(n, c, 1, 1)?;
    for ni in 0..n {
        for ci in 0..c {
            let sum: f64 = x.plane(ni, ci).iter().sum();
            y.set(ni, ci, 0, 0, sum * inv);
        }
    }
    Ok(y)
}

/// Backward of the average pool: spreads each channel's gradient uniformly.
pub fn global_avg_pool_backward(
    input_shape: (usize, usize, usize, usize),
    gy: &Tensor,
) -> Result<Tensor> {
    let (n, c, h, w) = input_shape;
    if gy.shape() != (n, c, 1, 1) {
        return Err(Error::Shape(format!(
            "avg pool backward: expected upstream {:?}, got {:?}",
            (n, c, 1, 1),
            gy.shape()
        )));
    }
    let inv = 1.0 / (h * w) as f64;
    let mut gx = Tensor::zeros(n, c, h, w)?;
    for ni in 0..n {
        for ci in 0..c {
            let g = gy.get(ni, ci, 0, 0) * inv;
            let start = gx.offset(ni, ci, 0, 0);
            for v in &mut gx.data_mut()[start..start + h * w] {
                *v = g;
            }
        }
    }
    Ok(gx)
}

/// Affine map on pooled features: `x (N, in, 1, 1) -> (N, out, 1, 1)`.
/// Weights are `(out, in, 1, 1)`, bias `(1, out, 1, 1)`.
pub fn fully_connected(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, c, h, wd) = x.shape();
    if h != 1 || wd != 1 {
        return Err(Error::Shape(format!("fc expects pooled (N,C,1,1) input, got {:?}", x.shape())));
    }
    let (out, cin, _, _) = w.shape();
    if cin != c || b.shape() != (1, out, 1, 1) {
        return Err(Error::Shape(format!(
            "fc weights {:?} / bias {:?} incompatible with input {:?}",
            w.shape(),
            b.shape(),
            x.shape()
        )));
    }
    let mut y = Tensor::zeros(n, out, 1, 1)?;
    for ni in 0..n {
        let xrow = &x.data()[ni * c..(ni + 1) * c];
        for o in 0..out {
            let wrow = &w.data()[o * c..(o + 1) * c];
            let mut acc = b.get(0, o, 0, 0);
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            y.set(ni, o, 0, 0, acc);
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn fully_connected_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, _, _) = x.shape();
    let (out, _, _, _) = w.shape();
    if gy.shape() != (n, out, 1, 1) {
        return Err(Error::Shape(format!(
            "fc backward: expected upstream {:?}, got {:?}",
            (n, out, 1, 1),
            gy.shape()
        )));
    }
    let mut gx = Tensor::zeros(n, c, 1, 1)?;
    let mut gw = Tensor::zeros(out, c, 1, 1)?;
    let mut gb = Tensor::zeros(1, out, 1, 1)?;
    for ni in 0..n {
        let xrow = &x.data()[ni * c..(ni + 1) * c];
        for o in 0..out {
            let g = gy.get(ni, o, 0, 0);
            if g == 0.0 {
                continue;
            }
            gb.data_mut()[o] += g;
            let wrow = &w.data()[o * c..(o + 1) * c];
            let gwrow = &mut gw.data_mut()[o * c..(o + 1) * c];
            let gxrow = &mut gx.data_mut()[ni * c..(ni + 1) * c];
            for ci in 0..c {
                gwrow[ci] += g * xrow[ci];
                gxrow[ci] += g * wrow[ci];
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Row-wise softmax over the channel dim of `(N, C, 1, 1)` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = logits.shape();
    if h != 1 || w != 1 || c == 0 {
        return Err(Error::Shape(format!("softmax expects (N,C,1,1) logits, got {:?}", logits.shape())));
    }
    let mut y = logits.clone();
    for ni in 0..n {
        let row = &mut y.data_mut()[ni * c..(ni + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(y)
}

/// Mean cross-entropy over the batch plus its gradient with respect to the
/// logits: `grad = (softmax - onehot) / N`. Computed through log-softmax so
/// no log(0) can occur.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = logits.shape();
    if h != 1 || w != 1 {
        return Err(Error::Shape(format!(
            "cross entropy expects (N,C,1,1) logits, got {:?}",
            logits.shape()
        )));
    }
    if n == 0 {
        return Err(Error::Argument("cross entropy over an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {}", labels.len(), n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Argument(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = Tensor::zeros(n, c, 1, 1)?;
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for ni in 0..n {
        let row = &logits.data()[ni * c..(ni + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let grow = &mut grad.data_mut()[ni * c..(ni + 1) * c];
        for ci in 0..c {
            let log_p = row[ci] - max - log_sum;
            grow[ci] = log_p.exp() * inv_n;
            if ci == labels[ni] {
                loss -= log_p;
                grow[ci] -= inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}
