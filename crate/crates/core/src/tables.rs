//! Reference cost tables and their verification.
//!
//! The expected values live here as checked-in data: published
//! parameter/MAC totals for the builtin networks, recorded at their
//! original display precision (`millions` plus the `unit` of the last
//! displayed digit). [`verify_tables`] recomputes every cell with the
//! analytic counter and compares within `unit + 5% of the expected value`
//! — the 5% covers ambiguity in what the original counts included (e.g.
//! batch-norm bookkeeping), the unit covers display rounding.
//!
//! Table 4 compares the compressed 50-layer bottleneck pair, Table 5 the
//! 20-layer CIFAR pair across channel multipliers m=1..6, and Table 6 the
//! same CIFAR pair at m=5 across width multipliers alpha=1.25..4.

use crate::analysis::{count_network, CountingPolicy};
use crate::arch::{builtin_spec, NetworkSpec};
use crate::error::Result;

/// An expected table value: `millions` at the precision it was published,
/// `unit` being one step of its last displayed digit.
#[derive(Clone, Copy, Debug)]
pub struct TableCell {
    pub millions: f64,
    pub unit: f64,
}

const fn cell(millions: f64, unit: f64) -> TableCell {
    TableCell { millions, unit }
}

#[derive(Clone, Copy, Debug)]
pub struct ReferenceRow {
    pub table: &'static str,
    pub network: &'static str,
    pub alpha: f64,
    pub multiplier: usize,
    pub num_classes: usize,
    pub input_hw: usize,
    pub params: TableCell,
    pub macs: TableCell,
}

const fn t4(name: &'static str, params: TableCell, macs: TableCell) -> ReferenceRow {
    ReferenceRow {
        table: "table4",
        network: name,
        alpha: 1.0,
        multiplier: 1,
        num_classes: 10,
        input_hw: 32,
        params,
        macs,
    }
}

const fn t5(name: &'static str, m: usize, params: TableCell, macs: TableCell) -> ReferenceRow {
    ReferenceRow {
        table: "table5",
        network: name,
        alpha: 1.0,
        multiplier: m,
        num_classes: 10,
        input_hw: 32,
        params,
        macs,
    }
}

const fn t6(name: &'static str, alpha: f64, params: TableCell, macs: TableCell) -> ReferenceRow {
    ReferenceRow {
        table: "table6",
        network: name,
        alpha,
        multiplier: 5,
        num_classes: 10,
        input_hw: 32,
        params,
        macs,
    }
}

/// Every published params/MACs row reproduced by `verify_tables`.
pub const REFERENCE_ROWS: [ReferenceRow; 28] = [
    // 50-layer bottleneck pair, CIFAR widths
    t4("resnet50_cifar", cell(2.0, 0.1), cell(316.0, 1.0)),
    t4("psdnet50_cifar", cell(1.6, 0.1), cell(208.0, 1.0)),
    // 20-layer CIFAR pair across channel multipliers
    t5("dpdnet_cifar", 1, cell(0.04, 0.01), cell(5.3, 0.1)),
    t5("dpdnet_cifar", 2, cell(0.06, 0.01), cell(8.9, 0.1)),
    t5("dpdnet_cifar", 3, cell(0.09, 0.01), cell(12.6, 0.1)),
    t5("dpdnet_cifar", 4, cell(0.12, 0.01), cell(16.3, 0.1)),
    t5("dpdnet_cifar", 5, cell(0.15, 0.01), cell(20.0, 0.1)),
    t5("dpdnet_cifar", 6, cell(0.17, 0.01), cell(23.7, 0.1)),
    t5("mbv2_20_cifar", 1, cell(0.05, 0.01), cell(8.3, 0.1)),
    t5("mbv2_20_cifar", 2, cell(0.09, 0.01), cell(15.8, 0.1)),
    t5("mbv2_20_cifar", 3, cell(0.14, 0.01), cell(23.3, 0.1)),
    t5("mbv2_20_cifar", 4, cell(0.18, 0.01), cell(30.8, 0.1)),
    t5("mbv2_20_cifar", 5, cell(0.23, 0.01), cell(38.2, 0.1)),
    t5("mbv2_20_cifar", 6, cell(0.27, 0.01), cell(45.7, 0.1)),
    // the same pair at m=5 across width multipliers
    t6("dpdnet_cifar", 1.25, cell(0.22, 0.01), cell(28.3, 0.1)),
    t6("dpdnet_cifar", 1.5, cell(0.31, 0.01), cell(38.1, 0.1)),
    t6("dpdnet_cifar", 1.75, cell(0.42, 0.01), cell(49.5, 0.1)),
    t6("dpdnet_cifar", 2.0, cell(0.54, 0.01), cell(62.5, 0.1)),
    t6("dpdnet_cifar", 2.5, cell(0.83, 0.01), cell(93.1, 0.1)),
    t6("dpdnet_cifar", 3.0, cell(1.18, 0.01), cell(130.0, 1.0)),
    t6("dpdnet_cifar", 4.0, cell(2.07, 0.01), cell(222.0, 1.0)),
    t6("mbv2_20_cifar", 1.25, cell(0.34, 0.01), cell(54.1, 0.1)),
    t6("mbv2_20_cifar", 1.5, cell(0.49, 0.01), cell(73.2, 0.1)),
    t6("mbv2_20_cifar", 1.75, cell(0.65, 0.01), cell(95.6, 0.1)),
    t6("mbv2_20_cifar", 2.0, cell(0.85, 0.01), cell(121.0, 1.0)),
    t6("mbv2_20_cifar", 2.5, cell(1.30, 0.01), cell(182.0, 1.0)),
    t6("mbv2_20_cifar", 3.0, cell(1.86, 0.01), cell(257.0, 1.0)),
    t6("mbv2_20_cifar", 4.0, cell(3.28, 0.01), cell(444.0, 1.0)),
];

fn row_spec(row: &ReferenceRow) -> Result<NetworkSpec> {
    builtin_spec(row.network, row.alpha, row.multiplier, row.num_classes)
}

fn row_label(row: &ReferenceRow) -> String {
    match row.table {
        "table5" => format!("{} m={}", row.network, row.multiplier),
        "table6" => format!("{} alpha={}", row.network, row.alpha),
        _ => row.network.to_string(),
    }
}

/// Verdict for one table cell.
#[derive(Clone, Debug)]
pub struct CellCheck {
    pub table: &'static str,
    pub row: String,
    pub column: &'static str,
    pub computed: u64,
    pub computed_millions: f64,
    pub expected_millions: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check_cell(
    table: &'static str,
    row: String,
    column: &'static str,
    computed: u64,
    expected: &TableCell,
) -> CellCheck {
    let computed_millions = computed as f64 / 1e6;
    let tolerance = expected.unit + 0.05 * expected.millions;
    CellCheck {
        table,
        row,
        column,
        computed,
        computed_millions,
        expected_millions: expected.millions,
        tolerance,
        pass: (computed_millions - expected.millions).abs() <= tolerance,
    }
}

/// Recompute every reference cell under `policy` and compare. Two checks
/// per row: params then macs, in `REFERENCE_ROWS` order.
pub fn verify_tables(policy: &CountingPolicy) -> Result<Vec<CellCheck>> {
    let mut checks = Vec::with_capacity(2 * REFERENCE_ROWS.len());
    for row in &REFERENCE_ROWS {
        let spec = row_spec(row)?;
        let report = count_network(&spec, row.input_hw, policy)?;
        let label = row_label(row);
        checks.push(check_cell(row.table, label.clone(), "params", report.total_params, &row.params));
        checks.push(check_cell(row.table, label, "macs", report.total_macs, &row.macs));
    }
    Ok(checks)
}

pub fn all_pass(checks: &[CellCheck]) -> bool {
    checks.iter().all(|c| c.pass)
}
