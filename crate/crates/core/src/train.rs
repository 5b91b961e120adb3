//! Momentum-SGD training loop, step learning-rate schedule, CSV training
//! log, and a binary checkpoint format.
//!
//! # Determinism
//! A run consumes randomness from a single generator seeded by
//! [`TrainConfig::seed`], in a fixed order: one permutation per epoch, then
//! per batch (if augmentation is on) the per-image crop/flip draws in batch
//! order. All arithmetic reduces in a fixed order, so a given seed produces
//! a bitwise-identical log on every run.
//!
//! # Checkpoint format (version 1, little-endian)
//! ```text
//! magic   4 bytes  b"DWXC"
//! version u32      1
//! count   u32      number of tensors
//! entry*  count times:
//!     name_len u32
//!     name     name_len bytes, UTF-8
//!     dims     4 x u32 (N, C, H, W)
//!     data     N*C*H*W f64 values
//! ```
//! Entries are the network's parameters followed by its batch-norm running
//! statistics, under their canonical dotted names. Loading is strict: every
//! tensor must match by name and shape, values must be finite, and no bytes
//! may trail the last entry.

use std::path::Path;

use crate::arch::Network;
use crate::data::{augment_batch, normalize_batch, Dataset};
use crate::error::{Error, Result};
use crate::ops::softmax_cross_entropy;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Epochs (0-based) at which the rate is multiplied by the decay factor;
    /// the new rate applies from the first step of that epoch.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    /// Applied to convolution and fully-connected weights only — never to
    /// normalization parameters or biases.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    /// Evaluate test accuracy every this many epochs (0 = only on the final
    /// epoch). The final epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.1,
            lr_decay_epochs: vec![150, 225],
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 300,
            batch_size: 128,
            seed: 0,
            augment: true,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Argument(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::Argument(format!(
                "lr_decay_factor must be positive, got {}",
                self.lr_decay_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Argument(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Argument(format!(
                "decay epochs must be strictly increasing, got {:?}",
                self.lr_decay_epochs
            )));
        }
        if let Some(&last) = self.lr_decay_epochs.last() {
            if last >= self.epochs {
                return Err(Error::Argument(format!(
                    "decay epoch {last} is not below the epoch count {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// Learning rate in force during the given (0-based) epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Classical (non-Nesterov) momentum with decoupled-by-flag weight decay:
/// `v <- mu*v + (g + lambda*w); w <- w - lr*v`, with `lambda` applied only to
/// parameters whose metadata marks them as decayed.
pub struct MomentumSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl MomentumSgd {
    pub fn new(params: &[&Tensor], momentum: f64, weight_decay: f64) -> Result<Self> {
        let velocity = params
            .iter()
            .map(|t| {
                let (n, c, h, w) = t.shape();
                Tensor::zeros(n, c, h, w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentumSgd { momentum, weight_decay, velocity })
    }

    /// One update over all parameters. `decay_flags[i]` says whether weight
    /// decay applies to parameter `i`; order must match construction.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        decay_flags: &[bool],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.velocity.len()
            || grads.len() != self.velocity.len()
            || decay_flags.len() != self.velocity.len()
        {
            return Err(Error::Shape(format!(
                "optimizer built for {} parameters, stepped with {} params / {} grads / {} flags",
                self.velocity.len(),
                params.len(),
                grads.len(),
                decay_flags.len()
            )));
        }
        for i in 0..params.len() {
            if params[i].shape() != self.velocity[i].shape()
                || grads[i].shape() != self.velocity[i].shape()
            {
                return Err(Error::Shape(format!(
                    "parameter {i}: shapes {:?} / grad {:?} / velocity {:?} differ",
                    params[i].shape(),
                    grads[i].shape(),
                    self.velocity[i].shape()
                )));
            }
            let lambda = if decay_flags[i] { self.weight_decay } else { 0.0 };
            let v = self.velocity[i].data_mut();
            let w = params[i].data_mut();
            let g = grads[i].data();
            for j in 0..v.len() {
                v[j] = self.momentum * v[j] + (g[j] + lambda * w[j]);
                w[j] -= lr * v[j];
            }
        }
        Ok(())
    }
}

/// One logged epoch. `test_acc` is `None` on epochs where evaluation was
/// skipped; the final epoch always evaluates.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Optimizer steps completed since the start of the run (1-based count).
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,lr,loss,train_acc,test_acc\n");
        for r in &self.rows {
            let test = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.step, r.lr, r.loss, r.train_acc, test
            ));
        }
        s
    }

    pub fn final_train_acc(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_acc)
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.test_acc)
    }
}

/// Copy the selected images/labels into a contiguous batch.
fn gather(ds: &Dataset, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (_, c, h, w) = ds.images.shape();
    let mut batch = Tensor::zeros(indices.len(), c, h, w)?;
    let per = c * h * w;
    let mut labels = Vec::with_capacity(indices.len());
    for (bi, &i) in indices.iter().enumerate() {
        let src = &ds.images.data()[i * per..(i + 1) * per];
        batch.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(src);
        labels.push(ds.labels[i]);
    }
    Ok((batch, labels))
}

/// Fraction of the dataset classified correctly in inference mode
/// (normalized, never augmented).
pub fn evaluate(net: &mut Network, ds: &Dataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty dataset".into()));
    }
    let mut correct = 0usize;
    let mut start = 0;
    let all: Vec<usize> = (0..ds.len()).collect();
    while start < ds.len() {
        let end = (start + batch_size).min(ds.len());
        let (mut batch, labels) = gather(ds, &all[start..end])?;
        normalize_batch(&mut batch, &ds.channel_mean, &ds.channel_std)?;
        let logits = net.infer(&batch)?;
        correct += count_correct(&logits, &labels);
        start = end;
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let (n, c, _, _) = logits.shape();
    let mut correct = 0;
    for ni in 0..n {
        let row = &logits.data()[ni * c..(ni + 1) * c];
        let mut best = 0;
        for ci in 1..c {
            if row[ci] > row[best] {
                best = ci;
            }
        }
        correct += (best == labels[ni]) as usize;
    }
    correct
}

/// Run the full training loop. When `test` is `None`, the test-accuracy
/// column evaluates the training images in inference mode instead. Returns
/// one log row per epoch; the final row always carries test accuracy.
pub fn train(
    net: &mut Network,
    train_ds: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    train_ds.validate()?;
    if let Some(t) = test {
        t.validate()?;
    }
    if train_ds.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if train_ds.class_count != net.spec.num_classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes but the network predicts {}",
            train_ds.class_count, net.spec.num_classes
        )));
    }
    if train_ds.images.h() != net.spec.input_hw || train_ds.images.w() != net.spec.input_hw {
        return Err(Error::Shape(format!(
            "dataset images are {}x{} but the network expects {}x{} inputs",
            train_ds.images.h(),
            train_ds.images.w(),
            net.spec.input_hw,
            net.spec.input_hw
        )));
    }

    let decay_flags: Vec<bool> = net.param_meta().iter().map(|m| m.decay).collect();
    let mut opt = MomentumSgd::new(&net.params(), config.momentum, config.weight_decay)?;
    let mut rng = Rng::new(config.seed);
    let mut perm: Vec<usize> = (0..train_ds.len()).collect();
    let mut log = TrainLog::default();
    let mut global_step = 0usize;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        rng.shuffle(&mut perm);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;

        let mut start = 0;
        while start < perm.len() {
            let end = (start + config.batch_size).min(perm.len());
            let (mut batch, labels) = gather(train_ds, &perm[start..end])?;
            if config.augment {
                batch = augment_batch(&mut rng, &batch)?;
            }
            normalize_batch(&mut batch, &train_ds.channel_mean, &train_ds.channel_std)?;

            let (logits, cache) = net.forward(&batch, true)?;
            let (loss, g_logits) = softmax_cross_entropy(&logits, &labels)?;
            global_step += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: global_step });
            }
            epoch_loss += loss * labels.len() as f64;
            epoch_correct += count_correct(&logits, &labels);

            let grads = net.backward(&cache, &g_logits)?;
            opt.step(&mut net.params_mut(), &grads, &decay_flags, lr)?;
            start = end;
        }

        let last_epoch = epoch + 1 == config.epochs;
        let eval_now = last_epoch
            || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0);
        let test_acc = if eval_now {
            Some(evaluate(net, test.unwrap_or(train_ds), config.batch_size)?)
        } else {
            None
        };
        log.rows.push(LogRow {
            epoch,
            step: global_step,
            lr,
            loss: epoch_loss / train_ds.len() as f64,
            train_acc: epoch_correct as f64 / train_ds.len() as f64,
            test_acc,
        });
    }
    Ok(log)
}

// --- checkpointing ---

const CHECKPOINT_MAGIC: &[u8; 4] = b"DWXC";
const CHECKPOINT_VERSION: u32 = 1;
/// Sanity cap on serialized tensor names.
const MAX_NAME_LEN: usize = 4096;

fn named_tensors(net: &Network) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = Vec::new();
    for (m, t) in net.param_meta().iter().zip(net.params()) {
        out.push((m.name.clone(), t.clone()));
    }
    for (name, t) in net.state_meta().iter().zip(net.states()) {
        out.push((name.clone(), t.clone()));
    }
    out
}

/// Serialize the network's parameters and running statistics.
pub fn checkpoint_to_bytes(net: &Network) -> Vec<u8> {
    let entries = named_tensors(net);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        let (n, c, h, w) = t.shape();
        for d in [n, c, h, w] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated reading {what} at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Decode a checkpoint byte string into named tensors. This is the
/// untrusted-input boundary: arbitrary bytes either decode or produce a
/// format/corruption error, never a panic or oversized allocation.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Format(format!("tensor {i}: name length {name_len} too large")));
        }
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dims")? as usize;
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Size { n: dims[0], c: dims[1], h: dims[2], w: dims[3] })?;
        // bound the allocation by what the input can actually hold
        let payload = r.take(len.checked_mul(8).ok_or(Error::Size {
            n: dims[0],
            c: dims[1],
            h: dims[2],
            w: dims[3],
        })?, "tensor data")?;
        let mut data = Vec::with_capacity(len);
        for chunk in payload.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::CorruptData(format!("tensor {name:?} contains {v}")));
            }
            data.push(v);
        }
        let t = Tensor::from_vec(dims[0], dims[1], dims[2], dims[3], data)?;
        if entries.iter().any(|(n, _)| n == &name) {
            return Err(Error::Format(format!("duplicate tensor name {name:?}")));
        }
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Install checkpoint entries into a network. Strict: the entry set must
/// match the network's parameter and state names exactly, with equal shapes.
pub fn apply_checkpoint(net: &mut Network, entries: &[(String, Tensor)]) -> Result<()> {
    let expected: Vec<(String, (usize, usize, usize, usize))> = {
        let mut v: Vec<(String, (usize, usize, usize, usize))> = Vec::new();
        for (m, t) in net.param_meta().iter().zip(net.params()) {
            v.push((m.name.clone(), t.shape()));
        }
        for (name, t) in net.state_meta().iter().zip(net.states()) {
            v.push((name.clone(), t.shape()));
        }
        v
    };
    if entries.len() != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, network has {}",
            entries.len(),
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let entry = entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name:?}")))?;
        if entry.1.shape() != *shape {
            return Err(Error::Shape(format!(
                "tensor {name:?}: checkpoint shape {:?} vs network {:?}",
                entry.1.shape(),
                shape
            )));
        }
    }
    // shapes verified; copy params then states in network order
    let n_params = net.params().len();
    for (i, t) in net.params_mut().into_iter().enumerate() {
        let name = &expected[i].0;
        let (_, src) = entries.iter().find(|(n, _)| n == name).unwrap();
        t.data_mut().copy_from_slice(src.data());
    }
    for (i, t) in net.states_mut().into_iter().enumerate() {
        let name = &expected[n_params + i].0;
        let (_, src) = entries.iter().find(|(n, _)| n == name).unwrap();
        t.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, net: &mut Network) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let entries = checkpoint_from_bytes(&bytes)?;
    apply_checkpoint(net, &entries)
}
