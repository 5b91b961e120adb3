//! Analytic parameter and multiply-accumulate costing.
//!
//! Costs are computed symbolically from a [`NetworkSpec`] — no weights are
//! allocated — by walking the exact same layer plans the network builder
//! realizes. Conventions (see [`CountingPolicy`]):
//!
//! - params: conv weights, BN gamma/beta, FC weights and bias. BN running
//!   statistics are state, not parameters, and are excluded.
//! - MACs: conv and FC multiplies for a single input. Zero-padding taps
//!   count (pad-then-loop semantics, matching the instrumented kernels);
//!   BN, ReLU, pooling and shortcut adds contribute none.
//! - Convolutions carry no biases by default.

use crate::arch::NetworkSpec;
use crate::blocks::{LayerPlan, PlanOp};
use crate::error::{Error, Result};
use crate::ops::{conv_out_hw, ConvKind};

/// Exact nonnegative rational, canonically reduced.
#[derive(Clone, Copy, Debug)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Ratio> {
        if den == 0 {
            return Err(Error::Argument("ratio with zero denominator".into()));
        }
        let g = gcd(num, den);
        if g == 0 {
            return Ok(Ratio { num: 0, den: 1 });
        }
        Ok(Ratio { num: num / g, den: den / g })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        // cross-multiplied in u128: exact even for un-reduced operands
        (self.num as u128) * (other.den as u128) == (other.num as u128) * (self.den as u128)
    }
}

impl Eq for Ratio {}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Parameter and MAC cost of a pointwise conv producing an
/// `out_c x out_h x out_w` map from `in_c` channels.
pub fn pwc_cost(in_c: usize, out_c: usize, out_h: usize, out_w: usize) -> (u64, u64) {
    let params = (in_c * out_c) as u64;
    (params, (out_h * out_w) as u64 * params)
}

/// Parameter and MAC cost of a `kernel x kernel` depthwise conv with the
/// given channel multiplier.
pub fn dwc_cost(
    in_c: usize,
    multiplier: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
) -> (u64, u64) {
    let params = (kernel * kernel * multiplier * in_c) as u64;
    (params, (out_h * out_w) as u64 * params)
}

/// Cost advantage of depthwise expansion: replacing a pointwise expansion
/// of `c` channels by a `k x k` depthwise one divides both parameters and
/// MACs by exactly `c / k^2`.
pub fn expansion_ratio(c: usize, k: usize) -> Result<Ratio> {
    if c == 0 || k == 0 {
        return Err(Error::Argument("expansion ratio needs c >= 1 and k >= 1".into()));
    }
    Ratio::new(c as u64, (k * k) as u64)
}

/// Switches that change what gets counted. The default is the convention
/// used throughout: multiply-accumulate pairs, biasless convs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountingPolicy {
    /// Pretend each conv carries a per-output-channel bias parameter.
    pub include_conv_bias: bool,
    /// Report raw floating-point ops (two per multiply-accumulate) in the
    /// macs column instead of MAC pairs.
    pub report_flops: bool,
}

impl Default for CountingPolicy {
    fn default() -> Self {
        CountingPolicy { include_conv_bias: false, report_flops: false }
    }
}

/// One row of a cost report. `out_shape` is `(channels, h, w)` for a single
/// input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub layer: String,
    pub out_shape: (usize, usize, usize),
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub network: String,
    pub input_hw: usize,
    pub policy: CountingPolicy,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    /// Render as CSV: `layer,out_shape,params,macs`, one row per layer,
    /// totals row labeled `total` last, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,out_shape,params,macs\n");
        for r in &self.rows {
            let (c, h, w) = r.out_shape;
            s.push_str(&format!("{},{}x{}x{},{},{}\n", r.layer, c, h, w, r.params, r.macs));
        }
        s.push_str(&format!("total,,{},{}\n", self.total_params, self.total_macs));
        s
    }
}

fn plan_rows(
    prefix: &str,
    plan: &[LayerPlan],
    h: &mut usize,
    w: &mut usize,
    policy: &CountingPolicy,
    rows: &mut Vec<CostRow>,
) {
    let mac_scale: u64 = if policy.report_flops { 2 } else { 1 };
    for lp in plan {
        match &lp.op {
            PlanOp::Conv { kind, in_c, out_c, kernel, stride } => {
                let (oh, ow) = conv_out_hw(*h, *w, *kernel, *stride);
                let weight_params = match kind {
                    ConvKind::Depthwise { multiplier } => kernel * kernel * multiplier * in_c,
                    _ => in_c * out_c * kernel * kernel,
                } as u64;
                let mut params = weight_params;
                if policy.include_conv_bias {
                    params += *out_c as u64;
                }
                rows.push(CostRow {
                    layer: format!("{prefix}.{}", lp.name),
                    out_shape: (*out_c, oh, ow),
                    params,
                    macs: (oh * ow) as u64 * weight_params * mac_scale,
                });
                *h = oh;
                *w = ow;
            }
            PlanOp::Bn { c } => {
                rows.push(CostRow {
                    layer: format!("{prefix}.{}", lp.name),
                    out_shape: (*c, *h, *w),
                    params: 2 * *c as u64,
                    macs: 0,
                });
            }
            PlanOp::Relu => {} // free; no parameters, no multiplies
        }
    }
}

/// Cost a network symbolically for a single square input of side
/// `input_hw`. Row names match the parameter names of the built network.
pub fn count_network(
    spec: &NetworkSpec,
    input_hw: usize,
    policy: &CountingPolicy,
) -> Result<CostReport> {
    spec.validate()?;
    if input_hw == 0 {
        return Err(Error::Argument("input resolution must be positive".into()));
    }
    let mac_scale: u64 = if policy.report_flops { 2 } else { 1 };
    let mut rows = Vec::new();
    let (mut h, mut w) = (input_hw, input_hw);
    plan_rows("stem", &spec.stem_plan(), &mut h, &mut w, policy, &mut rows);
    for (i, bs) in spec.resolved_blocks()?.iter().enumerate() {
        let prefix = format!("block{}", i + 1);
        let (in_h, in_w) = (h, w);
        plan_rows(&prefix, &bs.main_plan()?, &mut h, &mut w, policy, &mut rows);
        // projection shortcut sees the block's input resolution
        let (mut sh, mut sw) = (in_h, in_w);
        plan_rows(&prefix, &bs.shortcut_plan(), &mut sh, &mut sw, policy, &mut rows);
        debug_assert!(bs.shortcut_plan().is_empty() || (sh, sw) == (h, w));
    }
    plan_rows("head", &spec.head_plan()?, &mut h, &mut w, policy, &mut rows);
    if h == 0 || w == 0 {
        return Err(Error::Argument(format!(
            "input {input_hw}x{input_hw} is consumed entirely by the strides"
        )));
    }
    let feat = spec.feature_width()?;
    rows.push(CostRow {
        layer: "pool".into(),
        out_shape: (feat, 1, 1),
        params: 0,
        macs: 0,
    });
    let fc_weights = (feat * spec.num_classes) as u64;
    rows.push(CostRow {
        layer: "fc".into(),
        out_shape: (spec.num_classes, 1, 1),
        params: fc_weights + spec.num_classes as u64,
        macs: fc_weights * mac_scale,
    });
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        network: spec.name.clone(),
        input_hw,
        policy: *policy,
        rows,
        total_params,
        total_macs,
    })
}

/// Pairwise total ratio between two reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioRow {
    pub a: String,
    pub b: String,
    /// `a` totals as a fraction of `b` totals.
    pub param_ratio: f64,
    pub mac_ratio: f64,
}

/// Totals of several networks side by side, with all pairwise ratios.
/// A single-report table has no ratio rows.
#[derive(Clone, Debug)]
pub struct ComparisonTable {
    pub entries: Vec<(String, u64, u64)>,
    pub ratios: Vec<RatioRow>,
}

pub fn compare_networks(reports: &[CostReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Argument("comparison needs at least one cost report".into()));
    }
    let entries: Vec<(String, u64, u64)> = reports
        .iter()
        .map(|r| (r.network.clone(), r.total_params, r.total_macs))
        .collect();
    let mut ratios = Vec::new();
    for i in 0..reports.len() {
        for j in (i + 1)..reports.len() {
            let (a, b) = (&reports[i], &reports[j]);
            ratios.push(RatioRow {
                a: a.network.clone(),
                b: b.network.clone(),
                param_ratio: a.total_params as f64 / b.total_params as f64,
                mac_ratio: a.total_macs as f64 / b.total_macs as f64,
            });
        }
    }
    Ok(ComparisonTable { entries, ratios })
}

impl ComparisonTable {
    /// Human-readable rendering.
    pub fn text(&self) -> String {
        let mut s = String::new();
        let width = self.entries.iter().map(|(n, _, _)| n.len()).max().unwrap_or(0).max(7);
        s.push_str(&format!("{:<width$}  {:>12}  {:>14}\n", "network", "params", "macs"));
        for (name, p, m) in &self.entries {
            s.push_str(&format!("{name:<width$}  {p:>12}  {m:>14}\n"));
        }
        for r in &self.ratios {
            s.push_str(&format!(
                "{} / {}: params {:.4}, macs {:.4}\n",
                r.a, r.b, r.param_ratio, r.mac_ratio
            ));
        }
        s
    }

    /// CSV rendering: `name,params,macs` rows for each network, then one
    /// `a/b` row per pair whose params/macs columns hold the ratios to six
    /// decimal places. Byte-stable for identical inputs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,params,macs\n");
        for (name, p, m) in &self.entries {
            s.push_str(&format!("{name},{p},{m}\n"));
        }
        for r in &self.ratios {
            s.push_str(&format!("{}/{},{:.6},{:.6}\n", r.a, r.b, r.param_ratio, r.mac_ratio));
        }
        s
    }
}
