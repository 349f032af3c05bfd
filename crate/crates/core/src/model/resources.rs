//! Parameter memory and operation counts per layer.
//!
//! Full-precision parameters take 32 bits each and binary weights one bit.
//! Batch norm keeps four 32-bit values per map (gamma, beta, running mean and
//! running variance) and costs one multiply-add per output element.
//!
//! Reduction factors compare the convolution blocks (convolutions plus their
//! batch norms) against the same architecture with every convolution at
//! 32 bits. Compute cost weights each operation by the product of its operand
//! widths: 32×32 for a full-precision MAC, 1×1 for an XNOR-popcount MAC.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::layers::Precision;

use super::config::{LayerPlan, ModelConfig};
use super::network::Model;

pub const FULL_BITS: u64 = 32;
pub const FULL_MAC_COST: u64 = FULL_BITS * FULL_BITS;
pub const BINARY_OP_COST: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    ConvBlocks,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerResources {
    pub name: String,
    pub kind: LayerKind,
    pub scope: Scope,
    pub binary: bool,
    pub parameter_count: u64,
    pub parameter_bits: u64,
    pub mac_count: u64,
    pub binary_op_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ResourceTotals {
    pub parameter_count: u64,
    pub parameter_bits: u64,
    pub mac_count: u64,
    pub binary_op_count: u64,
}

impl ResourceTotals {
    fn add(&mut self, row: &LayerResources) {
        self.parameter_count += row.parameter_count;
        self.parameter_bits += row.parameter_bits;
        self.mac_count += row.mac_count;
        self.binary_op_count += row.binary_op_count;
    }

    pub fn compute_cost(&self) -> u64 {
        self.mac_count * FULL_MAC_COST + self.binary_op_count * BINARY_OP_COST
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    pub rows: Vec<LayerResources>,
    pub totals: ResourceTotals,
    pub conv_block_totals: ResourceTotals,
    /// Conv-block totals of the all-full-precision twin.
    pub twin_conv_block_totals: ResourceTotals,
    pub memory_reduction_factor: f64,
    pub compute_reduction_factor: f64,
}

fn rows_for(plan: &LayerPlan, all_full: bool) -> Vec<LayerResources> {
    let mut rows = Vec::new();
    for unit in &plan.convs {
        let binary = unit.precision == Precision::Binary && !all_full;
        let weights = (unit.out_maps * unit.kernel.electrodes * unit.kernel.time * unit.in_maps) as u64;
        let bias = if unit.precision == Precision::Full { unit.out_maps as u64 } else { 0 };
        let ops = unit.output.len() as u64 * (unit.kernel.electrodes * unit.kernel.time * unit.in_maps) as u64;
        rows.push(LayerResources {
            name: unit.name.clone(),
            kind: LayerKind::Conv,
            scope: Scope::ConvBlocks,
            binary,
            parameter_count: weights + bias,
            parameter_bits: if binary { weights } else { FULL_BITS * (weights + bias) },
            mac_count: if binary { 0 } else { ops },
            binary_op_count: if binary { ops } else { 0 },
        });
        let bn_params = 4 * unit.out_maps as u64;
        rows.push(LayerResources {
            name: format!("{}-BN", unit.name),
            kind: LayerKind::BatchNorm,
            scope: Scope::ConvBlocks,
            binary: false,
            parameter_count: bn_params,
            parameter_bits: FULL_BITS * bn_params,
            mac_count: unit.output.len() as u64,
            binary_op_count: 0,
        });
    }
    for d in &plan.dense {
        let params = (d.in_dim * d.out_dim + d.out_dim) as u64;
        rows.push(LayerResources {
            name: d.name.clone(),
            kind: LayerKind::Dense,
            scope: Scope::Head,
            binary: false,
            parameter_count: params,
            parameter_bits: FULL_BITS * params,
            mac_count: (d.in_dim * d.out_dim) as u64,
            binary_op_count: 0,
        });
    }
    rows
}

fn sum(rows: &[LayerResources], scope: Option<Scope>) -> ResourceTotals {
    let mut t = ResourceTotals::default();
    for r in rows.iter().filter(|r| scope.is_none_or(|s| r.scope == s)) {
        t.add(r);
    }
    t
}

impl ResourceReport {
    pub fn from_plan(plan: &LayerPlan) -> Self {
        let rows = rows_for(plan, false);
        let twin = rows_for(plan, true);
        let conv_block_totals = sum(&rows, Some(Scope::ConvBlocks));
        let twin_conv_block_totals = sum(&twin, Some(Scope::ConvBlocks));
        ResourceReport {
            totals: sum(&rows, None),
            memory_reduction_factor: twin_conv_block_totals.parameter_bits as f64
                / conv_block_totals.parameter_bits as f64,
            compute_reduction_factor: twin_conv_block_totals.compute_cost() as f64
                / conv_block_totals.compute_cost() as f64,
            conv_block_totals,
            twin_conv_block_totals,
            rows,
        }
    }

    pub fn for_config(config: &ModelConfig) -> Result<Self> {
        Ok(Self::from_plan(&config.plan()?))
    }

    pub fn row(&self, name: &str) -> Option<&LayerResources> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub const CSV_HEADER: &'static str =
        "name,kind,scope,precision,parameter_count,parameter_bits,mac_count,binary_op_count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.name,
                kind_name(r.kind),
                scope_name(r.scope),
                if r.binary { "binary" } else { "full" },
                r.parameter_count,
                r.parameter_bits,
                r.mac_count,
                r.binary_op_count
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            out,
            "total,all,all,mixed,{},{},{},{}",
            t.parameter_count, t.parameter_bits, t.mac_count, t.binary_op_count
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:<11} {:<6} {:>12} {:>14} {:>14} {:>14}",
            "layer", "kind", "scope", "prec", "params", "param_bits", "macs", "binary_ops"
        );
        let line = |out: &mut String, name: &str, kind: &str, scope: &str, prec: &str, t: ResourceTotals| {
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:<11} {:<6} {:>12} {:>14} {:>14} {:>14}",
                name, kind, scope, prec, t.parameter_count, t.parameter_bits, t.mac_count, t.binary_op_count
            );
        };
        for r in &self.rows {
            line(
                &mut out,
                &r.name,
                kind_name(r.kind),
                scope_name(r.scope),
                if r.binary { "binary" } else { "full" },
                ResourceTotals {
                    parameter_count: r.parameter_count,
                    parameter_bits: r.parameter_bits,
                    mac_count: r.mac_count,
                    binary_op_count: r.binary_op_count,
                },
            );
        }
        line(&mut out, "total", "", "all", "", self.totals);
        line(&mut out, "conv total", "", "conv_blocks", "", self.conv_block_totals);
        line(&mut out, "fp32 twin", "", "conv_blocks", "", self.twin_conv_block_totals);
        let _ = writeln!(out, "memory_reduction_factor {:.2}", self.memory_reduction_factor);
        let _ = writeln!(out, "compute_reduction_factor {:.2}", self.compute_reduction_factor);
        out
    }
}

fn kind_name(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Conv => "conv",
        LayerKind::BatchNorm => "batchnorm",
        LayerKind::Dense => "dense",
    }
}

fn scope_name(s: Scope) -> &'static str {
    match s {
        Scope::ConvBlocks => "conv_blocks",
        Scope::Head => "head",
    }
}

impl Model {
    pub fn resource_report(&self) -> ResourceReport {
        ResourceReport::from_plan(&self.plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_counts() {
        let r = ResourceReport::for_config(&ModelConfig::aes()).unwrap();
        let conv1 = r.row("Conv1").unwrap();
        assert_eq!((conv1.parameter_count, conv1.parameter_bits), (96, 3072));
        assert_eq!(conv1.mac_count, 16 * 7996 * 16 * 5);
        let b4 = r.row("BConv4").unwrap();
        assert!(b4.binary);
        assert_eq!((b4.parameter_count, b4.parameter_bits), (65_536, 65_536));
        assert_eq!(b4.binary_op_count, 6 * 120 * 256 * 256);
        let bn = r.row("BSConv4-BN").unwrap();
        assert_eq!(bn.parameter_bits, 4 * 256 * 32);
    }

    #[test]
    fn rows_sum_to_totals() {
        for config in [ModelConfig::aes(), ModelConfig::chbmit(), ModelConfig::for_input(4, 2000)] {
            let r = ResourceReport::for_config(&config).unwrap();
            let mut t = ResourceTotals::default();
            r.rows.iter().for_each(|row| t.add(row));
            assert_eq!(t, r.totals);
            let c = sum(&r.rows, Some(Scope::ConvBlocks));
            let h = sum(&r.rows, Some(Scope::Head));
            assert_eq!(c.parameter_bits + h.parameter_bits, r.totals.parameter_bits);
        }
    }

    #[test]
    fn twin_has_no_binary_ops() {
        let r = ResourceReport::for_config(&ModelConfig::aes()).unwrap();
        assert_eq!(r.twin_conv_block_totals.binary_op_count, 0);
        assert_eq!(
            r.twin_conv_block_totals.mac_count,
            r.conv_block_totals.mac_count + r.conv_block_totals.binary_op_count
        );
        assert!(r.memory_reduction_factor > 1.0 && r.compute_reduction_factor > 1.0);
    }

    #[test]
    fn csv_is_stable() {
        let r = ResourceReport::for_config(&ModelConfig::aes()).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(ResourceReport::CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("Conv1,conv,conv_blocks,full,96,3072,"));
        assert_eq!(csv.lines().count(), 1 + r.rows.len() + 1);
    }
}
