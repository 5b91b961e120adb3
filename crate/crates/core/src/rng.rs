//! Deterministic random numbers.
//!
//! All randomness in the crate flows through [`Rng`], a thin wrapper around
//! the ChaCha8 stream cipher. The derivation algorithms (uniform doubles,
//! Box–Muller normals, rejection-sampled bounded integers, Fisher–Yates
//! shuffle) are implemented here rather than borrowed from a sampling crate
//! so the byte-for-byte draw sequence is part of this crate's contract:
//! identical seeds produce identical sequences across runs, platforms, and
//! dependency upgrades.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// The seed this generator was created from (stream changes excluded).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator with the same seed on a different ChaCha
    /// stream. Used to decouple e.g. weight init from data shuffling so
    /// adding draws to one never perturbs the other.
    pub fn substream(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng { seed: self.seed, inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller. Uses two uniforms per draw; the sine
    /// branch is discarded to keep the generator stateless between calls.
    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1]; ln of it is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n). Rejection sampling keeps the distribution
    /// exactly uniform for every n.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is meaningless");
        let n64 = n as u64;
        let zone = u64::MAX - (u64::MAX % n64);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n64) as usize;
            }
        }
    }

    /// Fair coin.
    pub fn coin(&mut self) -> bool {
        self.inner.next_u64() & 1 == 1
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// He-normal weight initialization: i.i.d. N(0, 2/fan_in) over the given
/// shape. `fan_in` is passed explicitly because it depends on how the weight
/// is used (e.g. per-channel taps for depthwise kernels), not just its shape.
pub fn he_normal_init(
    rng: &mut Rng,
    shape: (usize, usize, usize, usize),
    fan_in: usize,
) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Argument("he_normal_init requires fan_in > 0".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let (n, c, h, w) = shape;
    let mut t = Tensor::zeros(n, c, h, w)?;
    for v in t.data_mut() {
        *v = std * rng.standard_normal();
    }
    Ok(t)
}
