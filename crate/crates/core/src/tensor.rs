//! Dense rank-4 tensors in NCHW layout.
//!
//! Everything in this crate — images, feature maps, conv weights, even FC
//! weights and logits — is carried as one of these. Data is a single
//! contiguous `Vec<f64>` with element `(n, c, h, w)` at offset
//! `((n*C + c)*H + h)*W + w`. Lower-rank values use size-1 trailing dims
//! (e.g. logits are `(N, classes, 1, 1)`).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zeros tensor. Fails if the element count overflows `usize`.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
        let len = checked_len(n, c, h, w)?;
        Ok(Tensor { n, c, h, w, data: vec![0.0; len] })
    }

    /// Wrap an existing buffer; `data.len()` must equal `n*c*h*w`.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Tensor> {
        let len = checked_len(n, c, h, w)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "buffer of {} elements cannot view as {}x{}x{}x{}",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of `(n, c, h, w)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous `(h, w)` plane for one `(n, c)` pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.offset(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    /// True when all elements are finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum with a same-shaped tensor.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "add of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += v;
        }
        Ok(out)
    }
}

fn checked_len(n: usize, c: usize, h: usize, w: usize) -> Result<usize> {
    n.checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or(Error::Size { n, c, h, w })
}
