//! Network descriptions and realized networks.
//!
//! A [`NetworkSpec`] is purely symbolic: a stem conv, a list of block
//! stages holding *base* widths, an optional pointwise head conv, and the
//! width multiplier `alpha` / channel multiplier `multiplier` knobs.
//! `alpha` rescales block widths (round-half-up, floor of 1) but never the
//! stem or the head conv. The same spec drives both [`build_network`] and
//! the analytic cost model, so counted and executed structures agree by
//! construction.
//!
//! Builtin specs (see [`builtin_spec`]):
//!
//! - `resnet50_cifar` / `psdnet50_cifar`: 16 bottleneck blocks in three
//!   stages (128/256/512 wide), 32-wide stem, for 32x32 inputs.
//! - `dpdnet_cifar` / `mbv2_20_cifar`: six blocks at widths
//!   16/24/32/64/96/160 with strides 1/1/2/1/2/1, 32-wide stem.
//! - `dpdnet_imagenet`: stride-2 stem, seven stages ending at width 320,
//!   1280-wide pointwise head, for 224x224 inputs.

use crate::blocks::{
    build_layers, seq_backward, seq_forward, seq_forward_counted, seq_param_meta, seq_params,
    seq_params_mut, seq_state_meta, seq_states, seq_states_mut, Block, BlockCache, BlockKind,
    BlockSpec, Layer, LayerPlan, ParamMeta, PlanOp,
};
use crate::error::{Error, Result};
use crate::ops::{
    conv_out_hw, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward, ConvKind,
};
use crate::rng::{he_normal_init, Rng};
use crate::tensor::Tensor;

pub const MAX_ALPHA: f64 = 8.0;
pub const MAX_MULTIPLIER: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct StemSpec {
    pub kernel: usize,
    pub out: usize,
    pub stride: usize,
}

/// One stage: `repeat` blocks of the same kind and width. Only the first
/// block of a stage may stride; repeats run at stride 1 with in == out.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub kind: BlockKind,
    pub out: usize,
    /// Base squeezed width (resnet/psd kinds only).
    pub mid: Option<usize>,
    pub stride: usize,
    pub repeat: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub alpha: f64,
    pub multiplier: usize,
    pub num_classes: usize,
    /// Expected square input resolution; fixes the average-pool window.
    pub input_hw: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    /// Optional pointwise conv (+BN+ReLU) before pooling; not alpha-scaled.
    pub head_conv: Option<usize>,
}

/// Round-half-up width scaling with a floor of one channel.
pub fn scale_width(alpha: f64, c: usize) -> usize {
    let scaled = (alpha * c as f64 + 0.5).floor();
    (scaled as usize).max(1)
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Spec("network name must not be empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= MAX_ALPHA) {
            return Err(Error::Spec(format!(
                "alpha must be in (0, {MAX_ALPHA}], got {}",
                self.alpha
            )));
        }
        if self.multiplier == 0 || self.multiplier > MAX_MULTIPLIER {
            return Err(Error::Spec(format!(
                "multiplier must be in 1..={MAX_MULTIPLIER}, got {}",
                self.multiplier
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_hw == 0 {
            return Err(Error::Spec("input resolution must be positive".into()));
        }
        if !matches!(self.stem.kernel, 1 | 3) {
            return Err(Error::Spec(format!("stem kernel must be 1 or 3, got {}", self.stem.kernel)));
        }
        if !matches!(self.stem.stride, 1 | 2) {
            return Err(Error::Spec(format!("stem stride must be 1 or 2, got {}", self.stem.stride)));
        }
        if self.stem.out == 0 {
            return Err(Error::Spec("stem width must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Spec("network needs at least one block stage".into()));
        }
        if self.head_conv == Some(0) {
            return Err(Error::Spec("head conv width must be positive".into()));
        }
        self.resolved_blocks()?;
        Ok(())
    }

    /// Expand stages into per-block specs with alpha applied and the
    /// in-channel chain threaded through.
    pub fn resolved_blocks(&self) -> Result<Vec<BlockSpec>> {
        let mut specs = Vec::new();
        let mut in_c = self.stem.out;
        for st in &self.stages {
            if st.repeat == 0 {
                return Err(Error::Spec("stage repeat must be >= 1".into()));
            }
            let out = scale_width(self.alpha, st.out);
            let mid = st.mid.map(|m| scale_width(self.alpha, m));
            for i in 0..st.repeat {
                let bs = BlockSpec {
                    kind: st.kind,
                    in_channels: in_c,
                    out_channels: out,
                    mid_channels: mid,
                    stride: if i == 0 { st.stride } else { 1 },
                    multiplier: self.multiplier,
                };
                bs.validate()?;
                specs.push(bs);
                in_c = out;
            }
        }
        Ok(specs)
    }

    /// Spatial size of the feature map entering the average pool, assuming
    /// a square `input_hw` input.
    pub fn pool_window(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = (self.input_hw, self.input_hw);
        let stem_out = conv_out_hw(h, w, self.stem.kernel, self.stem.stride);
        (h, w) = stem_out;
        for bs in self.resolved_blocks()? {
            (h, w) = bs.out_hw(h, w);
        }
        if h == 0 || w == 0 {
            return Err(Error::Spec(format!(
                "input {0}x{0} is consumed entirely by the strides",
                self.input_hw
            )));
        }
        Ok((h, w))
    }

    /// Channel width entering the classifier.
    pub fn feature_width(&self) -> Result<usize> {
        if let Some(hc) = self.head_conv {
            return Ok(hc);
        }
        let last = self
            .stages
            .last()
            .ok_or_else(|| Error::Spec("network needs at least one block stage".into()))?;
        Ok(scale_width(self.alpha, last.out))
    }

    /// Stem layers, symbolically.
    pub fn stem_plan(&self) -> Vec<LayerPlan> {
        vec![
            LayerPlan {
                name: "conv",
                op: PlanOp::Conv {
                    kind: if self.stem.kernel == 1 { ConvKind::Pointwise } else { ConvKind::Standard },
                    in_c: 3,
                    out_c: self.stem.out,
                    kernel: self.stem.kernel,
                    stride: self.stem.stride,
                },
            },
            LayerPlan { name: "bn", op: PlanOp::Bn { c: self.stem.out } },
            LayerPlan { name: "relu", op: PlanOp::Relu },
        ]
    }

    /// Head-conv layers (empty if there is no head conv), symbolically.
    pub fn head_plan(&self) -> Result<Vec<LayerPlan>> {
        let Some(hc) = self.head_conv else { return Ok(vec![]) };
        let in_c = self
            .stages
            .last()
            .map(|st| scale_width(self.alpha, st.out))
            .ok_or_else(|| Error::Spec("head conv without block stages".into()))?;
        Ok(vec![
            LayerPlan {
                name: "conv",
                op: PlanOp::Conv {
                    kind: ConvKind::Pointwise,
                    in_c,
                    out_c: hc,
                    kernel: 1,
                    stride: 1,
                },
            },
            LayerPlan { name: "bn", op: PlanOp::Bn { c: hc } },
            LayerPlan { name: "relu", op: PlanOp::Relu },
        ])
    }
}

/// Construct one of the five builtin network specs.
///
/// `alpha` rescales block widths, `multiplier` is the depthwise expansion
/// (dpd kinds) or the inverted-bottleneck expansion (mbv2); the bottleneck
/// networks ignore it.
pub fn builtin_spec(
    name: &str,
    alpha: f64,
    multiplier: usize,
    num_classes: usize,
) -> Result<NetworkSpec> {
    let stage = |kind, out, mid, stride, repeat| StageSpec { kind, out, mid, stride, repeat };
    let small = |kind| -> Vec<StageSpec> {
        [(16, 1), (24, 1), (32, 2), (64, 1), (96, 2), (160, 1)]
            .into_iter()
            .map(|(out, s)| stage(kind, out, None, s, 1))
            .collect()
    };
    let bottleneck = |kind| -> Vec<StageSpec> {
        vec![
            stage(kind, 128, Some(32), 1, 5),
            stage(kind, 256, Some(64), 2, 6),
            stage(kind, 512, Some(128), 2, 5),
        ]
    };
    let spec = match name {
        "dpdnet_cifar" => NetworkSpec {
            name: name.into(),
            alpha,
            multiplier,
            num_classes,
            input_hw: 32,
            stem: StemSpec { kernel: 3, out: 32, stride: 1 },
            stages: small(BlockKind::Dpd),
            head_conv: None,
        },
        "mbv2_20_cifar" => NetworkSpec {
            name: name.into(),
            alpha,
            multiplier,
            num_classes,
            input_hw: 32,
            stem: StemSpec { kernel: 3, out: 32, stride: 1 },
            stages: small(BlockKind::Mbv2Inverted),
            head_conv: None,
        },
        "resnet50_cifar" | "psdnet50_cifar" => {
            let kind = if name == "resnet50_cifar" {
                BlockKind::ResnetBottleneck
            } else {
                BlockKind::Psd
            };
            NetworkSpec {
                name: name.into(),
                alpha,
                multiplier: 1,
                num_classes,
                input_hw: 32,
                stem: StemSpec { kernel: 3, out: 32, stride: 1 },
                stages: bottleneck(kind),
                head_conv: None,
            }
        }
        "dpdnet_imagenet" => NetworkSpec {
            name: name.into(),
            alpha,
            multiplier,
            num_classes,
            input_hw: 224,
            stem: StemSpec { kernel: 3, out: 32, stride: 2 },
            stages: vec![
                stage(BlockKind::Dpd, 16, None, 1, 1),
                stage(BlockKind::Dpd, 24, None, 2, 2),
                stage(BlockKind::Dpd, 32, None, 2, 3),
                stage(BlockKind::Dpd, 64, None, 2, 4),
                stage(BlockKind::Dpd, 96, None, 1, 3),
                stage(BlockKind::Dpd, 160, None, 2, 3),
                stage(BlockKind::Dpd, 320, None, 1, 1),
            ],
            head_conv: Some(1280),
        },
        other => {
            return Err(Error::Lookup(format!(
                "unknown builtin network '{other}' (expected one of dpdnet_cifar, \
                 mbv2_20_cifar, resnet50_cifar, psdnet50_cifar, dpdnet_imagenet)"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub const BUILTIN_NAMES: [&str; 5] = [
    "dpdnet_cifar",
    "mbv2_20_cifar",
    "resnet50_cifar",
    "psdnet50_cifar",
    "dpdnet_imagenet",
];

/// A realized network with allocated parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    stem: Vec<Layer>,
    blocks: Vec<Block>,
    head: Vec<Layer>,
    pool_hw: (usize, usize),
    fc_w: Tensor,
    fc_b: Tensor,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct NetCache {
    stem: crate::blocks::SeqCache,
    blocks: Vec<BlockCache>,
    head: crate::blocks::SeqCache,
    pool_in_shape: (usize, usize, usize, usize),
    fc_in: Tensor,
}

/// Allocate and He-initialize a network for a spec.
pub fn build_network(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
    spec.validate()?;
    let stem = build_layers(&spec.stem_plan(), rng)?;
    let mut blocks = Vec::new();
    for bs in spec.resolved_blocks()? {
        blocks.push(Block::build(bs, rng)?);
    }
    let head = build_layers(&spec.head_plan()?, rng)?;
    let feat = spec.feature_width()?;
    let fc_w = he_normal_init(rng, (spec.num_classes, feat, 1, 1), feat)?;
    let fc_b = Tensor::zeros(1, spec.num_classes, 1, 1)?;
    Ok(Network {
        spec: spec.clone(),
        stem,
        blocks,
        head,
        pool_hw: spec.pool_window()?,
        fc_w,
        fc_b,
    })
}

impl Network {
    /// Run the network, producing `(N, classes, 1, 1)` logits and the
    /// backward cache. `training` selects batch-stat BN and updates running
    /// statistics.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, NetCache)> {
        let (mut cur, stem_cache) = seq_forward(&mut self.stem, x, training)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (next, cache) = b.forward(&cur, training)?;
            block_caches.push(cache);
            cur = next;
        }
        let (pool_in, head_cache) = seq_forward(&mut self.head, &cur, training)?;
        let pooled = global_avg_pool(&pool_in, self.pool_hw)?;
        let logits = fully_connected(&pooled, &self.fc_w, &self.fc_b)?;
        Ok((
            logits,
            NetCache {
                stem: stem_cache,
                blocks: block_caches,
                head: head_cache,
                pool_in_shape: pool_in.shape(),
                fc_in: pooled,
            },
        ))
    }

    /// Inference-only logits.
    pub fn infer(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false)?.0)
    }

    /// Inference followed by row-wise softmax: one probability distribution
    /// over the classes per input.
    pub fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        crate::ops::softmax(&self.infer(x)?)
    }

    /// Inference forward on the instrumented direct-loop kernels, counting
    /// every conv kernel-tap multiply and every FC multiply.
    pub fn forward_counted(&mut self, x: &Tensor) -> Result<(Tensor, u64)> {
        let mut macs = 0u64;
        let mut cur = seq_forward_counted(&mut self.stem, x, &mut macs)?;
        for b in &mut self.blocks {
            cur = b.forward_counted(&cur, &mut macs)?;
        }
        let pool_in = seq_forward_counted(&mut self.head, &cur, &mut macs)?;
        let pooled = global_avg_pool(&pool_in, self.pool_hw)?;
        let logits = fully_connected(&pooled, &self.fc_w, &self.fc_b)?;
        let (out, cin, _, _) = self.fc_w.shape();
        macs += (x.n() * out * cin) as u64;
        Ok((logits, macs))
    }

    /// Backward from a logits gradient. Returns one gradient per parameter,
    /// ordered exactly like [`Network::param_meta`].
    pub fn backward(&self, cache: &NetCache, g_logits: &Tensor) -> Result<Vec<Tensor>> {
        let (g_pooled, g_fc_w, g_fc_b) =
            fully_connected_backward(&cache.fc_in, &self.fc_w, g_logits)?;
        let g_pool_in = global_avg_pool_backward(cache.pool_in_shape, &g_pooled)?;
        let (mut g, head_grads) = seq_backward(&self.head, &cache.head, &g_pool_in)?;
        let mut block_grads_rev = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (gx, grads) = b.backward(c, &g)?;
            block_grads_rev.push(grads);
            g = gx;
        }
        let (_, stem_grads) = seq_backward(&self.stem, &cache.stem, &g)?;

        let mut all = stem_grads;
        for grads in block_grads_rev.into_iter().rev() {
            all.extend(grads);
        }
        all.extend(head_grads);
        all.push(g_fc_w);
        all.push(g_fc_b);
        Ok(all)
    }

    /// Names and decay flags for every learnable tensor, in traversal order
    /// (stem, blocks in order, head, classifier).
    pub fn param_meta(&self) -> Vec<ParamMeta> {
        let mut meta = Vec::new();
        seq_param_meta(&self.stem, "stem", &mut meta);
        for (i, b) in self.blocks.iter().enumerate() {
            b.param_meta(&format!("block{}", i + 1), &mut meta);
        }
        seq_param_meta(&self.head, "head", &mut meta);
        meta.push(ParamMeta { name: "fc.w".into(), decay: true });
        meta.push(ParamMeta { name: "fc.b".into(), decay: false });
        meta
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        seq_params(&self.stem, &mut out);
        for b in &self.blocks {
            b.params(&mut out);
        }
        seq_params(&self.head, &mut out);
        out.push(&self.fc_w);
        out.push(&self.fc_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        seq_params_mut(&mut self.stem, &mut out);
        for b in &mut self.blocks {
            b.params_mut(&mut out);
        }
        seq_params_mut(&mut self.head, &mut out);
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    /// Names of non-learnable state tensors (BN running statistics), in the
    /// same traversal order as [`Network::states`].
    pub fn state_meta(&self) -> Vec<String> {
        let mut meta = Vec::new();
        seq_state_meta(&self.stem, "stem", &mut meta);
        for (i, b) in self.blocks.iter().enumerate() {
            b.state_meta(&format!("block{}", i + 1), &mut meta);
        }
        seq_state_meta(&self.head, "head", &mut meta);
        meta
    }

    pub fn states(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        seq_states(&self.stem, &mut out);
        for b in &self.blocks {
            b.states(&mut out);
        }
        seq_states(&self.head, &mut out);
        out
    }

    pub fn states_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        seq_states_mut(&mut self.stem, &mut out);
        for b in &mut self.blocks {
            b.states_mut(&mut out);
        }
        seq_states_mut(&mut self.head, &mut out);
        out
    }

    /// Total learnable scalar count.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve_and_pool_windows_match() {
        for name in BUILTIN_NAMES {
            let classes = if name == "dpdnet_imagenet" { 1000 } else { 10 };
            let spec = builtin_spec(name, 1.0, 1, classes).unwrap();
            let expect = if name == "dpdnet_imagenet" { (7, 7) } else { (8, 8) };
            assert_eq!(spec.pool_window().unwrap(), expect, "{name}");
        }
        assert!(matches!(builtin_spec("resnet18", 1.0, 1, 10), Err(Error::Lookup(_))));
    }

    #[test]
    fn bottleneck_nets_have_sixteen_blocks() {
        let spec = builtin_spec("resnet50_cifar", 1.0, 1, 10).unwrap();
        let blocks = spec.resolved_blocks().unwrap();
        assert_eq!(blocks.len(), 16);
        // only the first block of each stage strides or projects across widths
        let strided: Vec<usize> = blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.stride == 2)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(strided, [5, 11]);
        assert_eq!(blocks[0].in_channels, 32);
        assert_eq!(blocks[0].out_channels, 128);
        assert_eq!(blocks[15].out_channels, 512);
    }

    #[test]
    fn alpha_scales_blocks_but_not_stem_or_head() {
        let spec = builtin_spec("dpdnet_imagenet", 2.0, 5, 1000).unwrap();
        let blocks = spec.resolved_blocks().unwrap();
        assert_eq!(spec.stem.out, 32); // untouched
        assert_eq!(blocks[0].out_channels, 32); // 16 * 2
        assert_eq!(blocks.last().unwrap().out_channels, 640); // 320 * 2
        assert_eq!(spec.feature_width().unwrap(), 1280); // untouched
    }

    #[test]
    fn width_rounding_is_half_up_with_floor_one() {
        assert_eq!(scale_width(1.25, 16), 20);
        assert_eq!(scale_width(1.25, 24), 30);
        assert_eq!(scale_width(1.75, 24), 42);
        assert_eq!(scale_width(0.25, 16), 4);
        assert_eq!(scale_width(0.01, 16), 1); // floor of one channel
        assert_eq!(scale_width(1.0, 96), 96);
    }

    #[test]
    fn spec_bounds_are_enforced() {
        assert!(builtin_spec("dpdnet_cifar", 0.0, 1, 10).is_err());
        assert!(builtin_spec("dpdnet_cifar", 8.5, 1, 10).is_err());
        assert!(builtin_spec("dpdnet_cifar", 1.0, 0, 10).is_err());
        assert!(builtin_spec("dpdnet_cifar", 1.0, 7, 10).is_err());
        assert!(builtin_spec("dpdnet_cifar", 1.0, 1, 1).is_err());
        assert!(builtin_spec("dpdnet_cifar", 8.0, 6, 10).is_ok());
    }

    #[test]
    fn forward_shapes_and_param_alignment() {
        let spec = builtin_spec("dpdnet_cifar", 0.25, 2, 10).unwrap();
        let mut net = build_network(&spec, &mut Rng::new(11)).unwrap();
        let x = Tensor::zeros(2, 3, 32, 32).unwrap();
        let (logits, cache) = net.forward(&x, true).unwrap();
        assert_eq!(logits.shape(), (2, 10, 1, 1));
        let g = he_normal_init(&mut Rng::new(12), logits.shape(), 10).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        let meta = net.param_meta();
        let params = net.params();
        assert_eq!(grads.len(), params.len());
        assert_eq!(meta.len(), params.len());
        for ((g, p), m) in grads.iter().zip(&params).zip(&meta) {
            assert_eq!(g.shape(), p.shape(), "{}", m.name);
        }
        assert_eq!(meta.first().unwrap().name, "stem.conv.w");
        assert_eq!(meta.last().unwrap().name, "fc.b");
        // first block of a dpd net
        assert!(meta.iter().any(|m| m.name == "block1.dwc1.w"));
    }

    #[test]
    fn wrong_input_resolution_is_a_clear_error() {
        let spec = builtin_spec("dpdnet_cifar", 0.25, 1, 10).unwrap();
        let mut net = build_network(&spec, &mut Rng::new(13)).unwrap();
        let x = Tensor::zeros(1, 3, 64, 64).unwrap();
        match net.forward(&x, false) {
            Err(Error::Shape(msg)) => assert!(msg.contains("pool"), "{msg}"),
            other => panic!("expected a shape error, got {other:?}"),
        }
    }

    #[test]
    fn state_traversal_covers_every_bn() {
        let spec = builtin_spec("mbv2_20_cifar", 0.25, 2, 10).unwrap();
        let net = build_network(&spec, &mut Rng::new(14)).unwrap();
        let states = net.states();
        let meta = net.state_meta();
        assert_eq!(states.len(), meta.len());
        // stem bn + 6 blocks x 3 bns, two state tensors each
        assert_eq!(states.len(), 2 * (1 + 18));
        assert_eq!(meta[0], "stem.bn.running_mean");
    }

    /// Weight layers = conv + fully-connected layers on the main path
    /// (projection shortcuts conventionally don't count toward the depth in
    /// a network's name).
    fn weight_layer_depth(spec: &NetworkSpec) -> usize {
        // every conv weight plus the classifier weight carries a ".w" name
        let net = build_network(spec, &mut Rng::new(1)).unwrap();
        net.param_meta()
            .iter()
            .filter(|m| m.name.ends_with(".w") && !m.name.ends_with(".proj.w"))
            .count()
    }

    #[test]
    fn named_depths_match_weight_layer_counts() {
        // 20-layer nets: stem + 6 blocks x 3 convs + fc
        for name in ["dpdnet_cifar", "mbv2_20_cifar"] {
            let spec = builtin_spec(name, 1.0, 1, 10).unwrap();
            assert_eq!(weight_layer_depth(&spec), 20, "{name}");
        }
        // 50-layer nets: stem + 16 blocks x 3 convs + fc
        for name in ["resnet50_cifar", "psdnet50_cifar"] {
            let spec = builtin_spec(name, 1.0, 1, 10).unwrap();
            assert_eq!(weight_layer_depth(&spec), 50, "{name}");
        }
    }

    #[test]
    fn width_scaling_is_monotone() {
        let alphas = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0];
        for name in BUILTIN_NAMES {
            let resolved: Vec<Vec<(usize, usize)>> = alphas
                .iter()
                .map(|&a| {
                    let spec = builtin_spec(name, a, 1, 10).unwrap();
                    spec.resolved_blocks()
                        .unwrap()
                        .iter()
                        .map(|b| (b.out_channels, b.mid_channels.unwrap_or(0)))
                        .collect()
                })
                .collect();
            for pair in resolved.windows(2) {
                for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                    assert!(hi.0 >= lo.0 && hi.1 >= lo.1, "{name}: widths shrank");
                }
            }
        }
    }

    #[test]
    fn reference_alpha_grid_hits_exact_integers() {
        // every builtin stage width times every tabulated alpha is an exact
        // integer, so rounding never distorts the referenced budgets
        let alphas = [1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0];
        for base in [16usize, 24, 32, 64, 96, 160] {
            for &a in &alphas {
                let exact = a * base as f64;
                assert_eq!(exact.fract(), 0.0, "alpha {a} x width {base}");
                assert_eq!(scale_width(a, base), exact as usize);
            }
        }
    }

    #[test]
    fn every_builtin_builds_and_infers_finite_logits() {
        let mut rng = Rng::new(77);
        for name in BUILTIN_NAMES {
            // small alpha keeps the bottleneck nets desk-sized
            let spec = builtin_spec(name, 0.25, 1, 10).unwrap();
            if spec.input_hw != 32 {
                continue; // the large-input net gets its own test below
            }
            let mut net = build_network(&spec, &mut rng).unwrap();
            let mut x = Tensor::zeros(2, 3, 32, 32).unwrap();
            for v in x.data_mut() {
                *v = rng.standard_normal();
            }
            let logits = net.infer(&x).unwrap();
            assert_eq!(logits.shape(), (2, 10, 1, 1), "{name}");
            assert!(logits.all_finite(), "{name}");
            let proba = net.predict_proba(&x).unwrap();
            for ni in 0..2 {
                let s: f64 = (0..10).map(|c| proba.get(ni, c, 0, 0)).sum();
                assert!((s - 1.0).abs() < 1e-12, "{name}: probabilities sum to {s}");
            }
        }
    }

    #[test]
    fn large_input_builtin_runs_end_to_end() {
        let spec = builtin_spec("dpdnet_imagenet", 0.25, 1, 1000).unwrap();
        assert_eq!(spec.pool_window().unwrap(), (7, 7));
        let mut rng = Rng::new(78);
        let mut net = build_network(&spec, &mut rng).unwrap();
        let mut x = Tensor::zeros(1, 3, 224, 224).unwrap();
        for v in x.data_mut() {
            *v = rng.standard_normal();
        }
        let logits = net.infer(&x).unwrap();
        assert_eq!(logits.shape(), (1, 1000, 1, 1));
        assert!(logits.all_finite());
    }
}
