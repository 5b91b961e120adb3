//! The four building blocks used by the builtin networks.
//!
//! All blocks hold exactly three convolutions, each followed by batch norm:
//!
//! - `resnet_bottleneck`: 1x1 squeeze -> 3x3 (stride here) -> 1x1 expand;
//!   shortcut (identity, or 1x1 projection when the shape changes) is added
//!   before the final ReLU.
//! - `psd`: same as the bottleneck but the expanding 1x1 is replaced by a
//!   3x3 depthwise conv whose channel multiplier is `out/mid`.
//! - `mbv2_inverted`: 1x1 expand (xM) -> 3x3 depthwise (stride here) ->
//!   1x1 linear projection; identity shortcut only when shape is preserved,
//!   and no activation after the final add (linear bottleneck).
//! - `dpd`: 3x3 depthwise with channel multiplier M (stride here) -> 1x1
//!   mix -> 3x3 depthwise (multiplier 1); ReLU after every BN; identity
//!   shortcut around the whole sequence when shape is preserved.
//!
//! A [`BlockSpec`] expands into a declarative [`LayerPlan`] list that both
//! the weight-allocating builder here and the analytic cost model consume,
//! so the network that runs and the network that gets costed cannot drift
//! apart.

use crate::error::{Error, Result};
use crate::ops::{
    batch_norm_backward, batch_norm_forward, conv2d_backward, conv2d_forward,
    conv2d_forward_counted, conv_out_hw, relu, relu_backward, BatchNormParams, ConvKind,
    ConvParams,
};
use crate::rng::{he_normal_init, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    ResnetBottleneck,
    Psd,
    Mbv2Inverted,
    Dpd,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::ResnetBottleneck => "resnet_bottleneck",
            BlockKind::Psd => "psd",
            BlockKind::Mbv2Inverted => "mbv2_inverted",
            BlockKind::Dpd => "dpd",
        }
    }

    pub fn parse(s: &str) -> Option<BlockKind> {
        match s {
            "resnet_bottleneck" => Some(BlockKind::ResnetBottleneck),
            "psd" => Some(BlockKind::Psd),
            "mbv2_inverted" => Some(BlockKind::Mbv2Inverted),
            "dpd" => Some(BlockKind::Dpd),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Squeezed width of the middle 3x3 conv; resnet/psd only.
    pub mid_channels: Option<usize>,
    pub stride: usize,
    /// Channel multiplier: depthwise expansion for `dpd`, pointwise
    /// expansion factor for `mbv2_inverted`; unused by resnet/psd.
    pub multiplier: usize,
}

/// How a block's shortcut is realized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShortcutKind {
    /// No shortcut at all (mbv2/dpd blocks that change shape).
    None,
    /// Plain addition of the input.
    Identity,
    /// Strided 1x1 projection + BN to match the new shape (resnet/psd).
    Projection,
}

/// One layer of a block (or stem/head), described symbolically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanOp {
    Conv { kind: ConvKind, in_c: usize, out_c: usize, kernel: usize, stride: usize },
    Bn { c: usize },
    Relu,
}

#[derive(Clone, Debug)]
pub struct LayerPlan {
    pub name: &'static str,
    pub op: PlanOp,
}

fn conv_plan(
    name: &'static str,
    kind: ConvKind,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
) -> LayerPlan {
    LayerPlan { name, op: PlanOp::Conv { kind, in_c, out_c, kernel, stride } }
}

fn bn_plan(name: &'static str, c: usize) -> LayerPlan {
    LayerPlan { name, op: PlanOp::Bn { c } }
}

fn relu_plan() -> LayerPlan {
    LayerPlan { name: "relu", op: PlanOp::Relu }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Spec(format!(
                "{} block has zero-width channels (in {}, out {})",
                self.kind.as_str(),
                self.in_channels,
                self.out_channels
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Spec(format!(
                "{} block stride must be 1 or 2, got {}",
                self.kind.as_str(),
                self.stride
            )));
        }
        match self.kind {
            BlockKind::ResnetBottleneck | BlockKind::Psd => {
                let mid = self.mid_channels.ok_or_else(|| {
                    Error::Spec(format!("{} block needs mid channels", self.kind.as_str()))
                })?;
                if mid == 0 {
                    return Err(Error::Spec("mid channels must be positive".into()));
                }
                if self.kind == BlockKind::Psd && self.out_channels % mid != 0 {
                    return Err(Error::Spec(format!(
                        "psd block out {} must be divisible by mid {} (depthwise multiplier)",
                        self.out_channels, mid
                    )));
                }
            }
            BlockKind::Mbv2Inverted | BlockKind::Dpd => {
                if self.multiplier == 0 {
                    return Err(Error::Spec(format!(
                        "{} block multiplier must be >= 1",
                        self.kind.as_str()
                    )));
                }
                if self.mid_channels.is_some() {
                    return Err(Error::Spec(format!(
                        "{} block does not take mid channels",
                        self.kind.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn shortcut(&self) -> ShortcutKind {
        let same_shape = self.stride == 1 && self.in_channels == self.out_channels;
        match self.kind {
            BlockKind::ResnetBottleneck | BlockKind::Psd => {
                if same_shape {
                    ShortcutKind::Identity
                } else {
                    ShortcutKind::Projection
                }
            }
            BlockKind::Mbv2Inverted | BlockKind::Dpd => {
                if same_shape {
                    ShortcutKind::Identity
                } else {
                    ShortcutKind::None
                }
            }
        }
    }

    /// True for kinds whose final ReLU comes after the shortcut add.
    pub fn relu_after_add(&self) -> bool {
        matches!(self.kind, BlockKind::ResnetBottleneck | BlockKind::Psd)
    }

    /// The block's main layer sequence, symbolically.
    pub fn main_plan(&self) -> Result<Vec<LayerPlan>> {
        self.validate()?;
        let (inc, out, s, m) = (self.in_channels, self.out_channels, self.stride, self.multiplier);
        Ok(match self.kind {
            BlockKind::ResnetBottleneck => {
                let mid = self.mid_channels.unwrap();
                vec![
                    conv_plan("pwc1", ConvKind::Pointwise, inc, mid, 1, 1),
                    bn_plan("bn1", mid),
                    relu_plan(),
                    conv_plan("conv3", ConvKind::Standard, mid, mid, 3, s),
                    bn_plan("bn2", mid),
                    relu_plan(),
                    conv_plan("pwc2", ConvKind::Pointwise, mid, out, 1, 1),
                    bn_plan("bn3", out),
                ]
            }
            BlockKind::Psd => {
                let mid = self.mid_channels.unwrap();
                let dw_mult = out / mid;
                vec![
                    conv_plan("pwc1", ConvKind::Pointwise, inc, mid, 1, 1),
                    bn_plan("bn1", mid),
                    relu_plan(),
                    conv_plan("conv3", ConvKind::Standard, mid, mid, 3, s),
                    bn_plan("bn2", mid),
                    relu_plan(),
                    conv_plan("dwc", ConvKind::Depthwise { multiplier: dw_mult }, mid, out, 3, 1),
                    bn_plan("bn3", out),
                ]
            }
            BlockKind::Mbv2Inverted => {
                let hidden = m * inc;
                vec![
                    conv_plan("pwc1", ConvKind::Pointwise, inc, hidden, 1, 1),
                    bn_plan("bn1", hidden),
                    relu_plan(),
                    conv_plan("dwc", ConvKind::Depthwise { multiplier: 1 }, hidden, hidden, 3, s),
                    bn_plan("bn2", hidden),
                    relu_plan(),
                    conv_plan("pwc2", ConvKind::Pointwise, hidden, out, 1, 1),
                    bn_plan("bn3", out),
                    // no ReLU: linear bottleneck
                ]
            }
            BlockKind::Dpd => {
                let hidden = m * inc;
                vec![
                    conv_plan("dwc1", ConvKind::Depthwise { multiplier: m }, inc, hidden, 3, s),
                    bn_plan("bn1", hidden),
                    relu_plan(),
                    conv_plan("pwc", ConvKind::Pointwise, hidden, out, 1, 1),
                    bn_plan("bn2", out),
                    relu_plan(),
                    conv_plan("dwc2", ConvKind::Depthwise { multiplier: 1 }, out, out, 3, 1),
                    bn_plan("bn3", out),
                    relu_plan(),
                ]
            }
        })
    }

    /// Projection shortcut layers, if this block has them.
    pub fn shortcut_plan(&self) -> Vec<LayerPlan> {
        match self.shortcut() {
            ShortcutKind::Projection => vec![
                conv_plan(
                    "proj",
                    ConvKind::Pointwise,
                    self.in_channels,
                    self.out_channels,
                    1,
                    self.stride,
                ),
                bn_plan("proj_bn", self.out_channels),
            ],
            _ => vec![],
        }
    }

    /// Output spatial size given the input spatial size.
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        conv_out_hw(h, w, 3, self.stride)
    }
}

/// A realized layer with allocated parameters.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv { name: &'static str, p: ConvParams },
    Bn { name: &'static str, p: BatchNormParams },
    Relu,
}

/// He fan-in for a planned conv: taps per output element.
fn plan_fan_in(kind: ConvKind, in_c: usize, kernel: usize) -> usize {
    match kind {
        ConvKind::Depthwise { .. } => kernel * kernel,
        _ => in_c * kernel * kernel,
    }
}

/// Allocate layers for a plan, He-initializing conv weights.
pub(crate) fn build_layers(plan: &[LayerPlan], rng: &mut Rng) -> Result<Vec<Layer>> {
    let mut layers = Vec::with_capacity(plan.len());
    for lp in plan {
        layers.push(match &lp.op {
            PlanOp::Conv { kind, in_c, out_c, kernel, stride } => {
                let shape = match kind {
                    ConvKind::Depthwise { .. } => (*out_c, 1, *kernel, *kernel),
                    _ => (*out_c, *in_c, *kernel, *kernel),
                };
                let w = he_normal_init(rng, shape, plan_fan_in(*kind, *in_c, *kernel))?;
                Layer::Conv { name: lp.name, p: ConvParams::new(*kind, w, *stride)? }
            }
            PlanOp::Bn { c } => Layer::Bn { name: lp.name, p: BatchNormParams::new(*c)? },
            PlanOp::Relu => Layer::Relu,
        });
    }
    Ok(layers)
}

/// Cached inputs of each layer of a sequence, for the backward pass.
#[derive(Clone, Debug)]
pub struct SeqCache {
    inputs: Vec<Tensor>,
}

pub(crate) fn seq_forward(
    layers: &mut [Layer],
    x: &Tensor,
    training: bool,
) -> Result<(Tensor, SeqCache)> {
    let mut cur = x.clone();
    let mut inputs = Vec::with_capacity(layers.len());
    for layer in layers.iter_mut() {
        inputs.push(cur.clone());
        cur = match layer {
            Layer::Conv { p, .. } => conv2d_forward(&cur, p)?,
            Layer::Bn { p, .. } => batch_norm_forward(&cur, p, training)?,
            Layer::Relu => relu(&cur),
        };
    }
    Ok((cur, SeqCache { inputs }))
}

/// Forward with the instrumented direct-loop conv path; adds conv multiply
/// counts into `macs`. Inference mode, no cache.
pub(crate) fn seq_forward_counted(
    layers: &mut [Layer],
    x: &Tensor,
    macs: &mut u64,
) -> Result<Tensor> {
    let mut cur = x.clone();
    for layer in layers.iter_mut() {
        cur = match layer {
            Layer::Conv { p, .. } => conv2d_forward_counted(&cur, p, macs)?,
            Layer::Bn { p, .. } => batch_norm_forward(&cur, p, false)?,
            Layer::Relu => relu(&cur),
        };
    }
    Ok(cur)
}

/// Backward through a sequence. Returns the input gradient and one gradient
/// tensor per parameter, ordered exactly like [`seq_param_meta`].
pub(crate) fn seq_backward(
    layers: &[Layer],
    cache: &SeqCache,
    gy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut grads_rev: Vec<Tensor> = Vec::new();
    let mut g = gy.clone();
    for (layer, input) in layers.iter().zip(&cache.inputs).rev() {
        match layer {
            Layer::Conv { p, .. } => {
                let (gx, gw) = conv2d_backward(input, p, &g)?;
                grads_rev.push(gw);
                g = gx;
            }
            Layer::Bn { p, .. } => {
                let (gx, ggamma, gbeta) = batch_norm_backward(input, p, &g)?;
                // forward order is (gamma, beta); we are walking in reverse
                grads_rev.push(gbeta);
                grads_rev.push(ggamma);
                g = gx;
            }
            Layer::Relu => {
                g = relu_backward(input, &g)?;
            }
        }
    }
    grads_rev.reverse();
    Ok((g, grads_rev))
}

/// Metadata describing one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    /// Whether weight decay applies (conv/FC weights yes; BN params and
    /// biases no).
    pub decay: bool,
}

pub(crate) fn seq_param_meta(layers: &[Layer], prefix: &str, out: &mut Vec<ParamMeta>) {
    for layer in layers {
        match layer {
            Layer::Conv { name, .. } => {
                out.push(ParamMeta { name: format!("{prefix}.{name}.w"), decay: true })
            }
            Layer::Bn { name, .. } => {
                out.push(ParamMeta { name: format!("{prefix}.{name}.gamma"), decay: false });
                out.push(ParamMeta { name: format!("{prefix}.{name}.beta"), decay: false });
            }
            Layer::Relu => {}
        }
    }
}

pub(crate) fn seq_params<'a>(layers: &'a [Layer], out: &mut Vec<&'a Tensor>) {
    for layer in layers {
        match layer {
            Layer::Conv { p, .. } => out.push(&p.weights),
            Layer::Bn { p, .. } => {
                out.push(&p.gamma);
                out.push(&p.beta);
            }
            Layer::Relu => {}
        }
    }
}

pub(crate) fn seq_params_mut<'a>(layers: &'a mut [Layer], out: &mut Vec<&'a mut Tensor>) {
    for layer in layers {
        match layer {
            Layer::Conv { p, .. } => out.push(&mut p.weights),
            Layer::Bn { p, .. } => {
                out.push(&mut p.gamma);
                out.push(&mut p.beta);
            }
            Layer::Relu => {}
        }
    }
}

pub(crate) fn seq_state_meta(layers: &[Layer], prefix: &str, out: &mut Vec<String>) {
    for layer in layers {
        if let Layer::Bn { name, .. } = layer {
            out.push(format!("{prefix}.{name}.running_mean"));
            out.push(format!("{prefix}.{name}.running_var"));
        }
    }
}

pub(crate) fn seq_states<'a>(layers: &'a [Layer], out: &mut Vec<&'a Tensor>) {
    for layer in layers {
        if let Layer::Bn { p, .. } = layer {
            out.push(&p.running_mean);
            out.push(&p.running_var);
        }
    }
}

pub(crate) fn seq_states_mut<'a>(layers: &'a mut [Layer], out: &mut Vec<&'a mut Tensor>) {
    for layer in layers {
        if let Layer::Bn { p, .. } = layer {
            out.push(&mut p.running_mean);
            out.push(&mut p.running_var);
        }
    }
}

/// A realized block: allocated main layers plus an optional projection
/// shortcut.
#[derive(Clone, Debug)]
pub struct Block {
    pub spec: BlockSpec,
    main: Vec<Layer>,
    short: Vec<Layer>, // empty unless the shortcut is a projection
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    main: SeqCache,
    short: Option<SeqCache>,
    /// Input, kept when the identity shortcut needs it in backward.
    x: Option<Tensor>,
    /// Pre-activation sum, kept when the final ReLU follows the add.
    pre_relu: Option<Tensor>,
}

impl Block {
    pub fn build(spec: BlockSpec, rng: &mut Rng) -> Result<Block> {
        let main = build_layers(&spec.main_plan()?, rng)?;
        let short = build_layers(&spec.shortcut_plan(), rng)?;
        Ok(Block { spec, main, short })
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, BlockCache)> {
        let (main_out, main_cache) = seq_forward(&mut self.main, x, training)?;
        let (mut out, short_cache, kept_x) = match self.spec.shortcut() {
            ShortcutKind::None => (main_out, None, None),
            ShortcutKind::Identity => (main_out.add(x)?, None, Some(x.clone())),
            ShortcutKind::Projection => {
                let (s_out, s_cache) = seq_forward(&mut self.short, x, training)?;
                (main_out.add(&s_out)?, Some(s_cache), None)
            }
        };
        let mut pre_relu = None;
        if self.spec.relu_after_add() {
            pre_relu = Some(out.clone());
            out = relu(&out);
        }
        Ok((out, BlockCache { main: main_cache, short: short_cache, x: kept_x, pre_relu }))
    }

    pub(crate) fn forward_counted(&mut self, x: &Tensor, macs: &mut u64) -> Result<Tensor> {
        let main_out = seq_forward_counted(&mut self.main, x, macs)?;
        let mut out = match self.spec.shortcut() {
            ShortcutKind::None => main_out,
            ShortcutKind::Identity => main_out.add(x)?,
            ShortcutKind::Projection => {
                main_out.add(&seq_forward_counted(&mut self.short, x, macs)?)?
            }
        };
        if self.spec.relu_after_add() {
            out = relu(&out);
        }
        Ok(out)
    }

    /// Returns `(grad_input, grads)` with grads ordered like
    /// [`Block::param_meta`]: main-path parameters first, then projection.
    pub fn backward(&self, cache: &BlockCache, gy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let g_sum = match &cache.pre_relu {
            Some(pre) => relu_backward(pre, gy)?,
            None => gy.clone(),
        };
        let (gx_main, mut grads) = seq_backward(&self.main, &cache.main, &g_sum)?;
        let gx = match self.spec.shortcut() {
            ShortcutKind::None => gx_main,
            ShortcutKind::Identity => {
                debug_assert!(cache.x.is_some());
                gx_main.add(&g_sum)?
            }
            ShortcutKind::Projection => {
                let s_cache = cache.short.as_ref().ok_or_else(|| {
                    Error::Argument("block cache missing projection branch".into())
                })?;
                let (gx_short, short_grads) = seq_backward(&self.short, s_cache, &g_sum)?;
                grads.extend(short_grads);
                gx_main.add(&gx_short)?
            }
        };
        Ok((gx, grads))
    }

    pub fn param_meta(&self, prefix: &str, out: &mut Vec<ParamMeta>) {
        seq_param_meta(&self.main, prefix, out);
        seq_param_meta(&self.short, prefix, out);
    }

    pub fn params<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        seq_params(&self.main, out);
        seq_params(&self.short, out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        seq_params_mut(&mut self.main, out);
        seq_params_mut(&mut self.short, out);
    }

    pub fn state_meta(&self, prefix: &str, out: &mut Vec<String>) {
        seq_state_meta(&self.main, prefix, out);
        seq_state_meta(&self.short, prefix, out);
    }

    pub fn states<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        seq_states(&self.main, out);
        seq_states(&self.short, out);
    }

    pub fn states_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        seq_states_mut(&mut self.main, out);
        seq_states_mut(&mut self.short, out);
    }

    /// Zero every conv weight (test helper for shortcut semantics).
    pub fn zero_conv_weights(&mut self) {
        for layer in self.main.iter_mut().chain(self.short.iter_mut()) {
            if let Layer::Conv { p, .. } = layer {
                p.weights.data_mut().fill(0.0);
            }
        }
    }
}
