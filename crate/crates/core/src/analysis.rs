//! Static cost model: multiplies, adds, FLOPs, parameters and data flow per
//! weighted layer, computed from shapes alone.
//!
//! Convention: a multiply-accumulate is two FLOPs (one multiply, one add),
//! each bias adds one more add per output element, and pooling, batch norm,
//! activations, shuffles, dropout and residual sums are free. Rows start at
//! each convolution or fully connected node and absorb the nodes that follow
//! it up to the next weighted node, so a row's `floats_out` is measured after
//! any pooling inside it.

use std::fmt::Write as _;

use serde::Serialize;

use crate::blocks::{build_layers, ModelSpec};
use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerNode, Op};
use crate::tensor::Shape4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub label: String,
    pub multiplies: u64,
    pub adds: u64,
    pub flops: u64,
    pub params: u64,
    /// Per-sample values leaving the row.
    pub floats_out: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub rows: Vec<CostRow>,
    pub totals: CostRow,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DataFlowRow {
    pub label: String,
    pub floats_out: u64,
    /// Set when the row emits at most a quarter of what it received.
    pub compressed: bool,
}

struct Segment {
    start: usize,
    end: usize,
}

fn segments(nodes: &[LayerNode]) -> Vec<Segment> {
    let starts: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.op.is_weighted())
        .map(|(i, _)| i)
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(j, &s)| Segment {
            start: s,
            end: starts.get(j + 1).copied().unwrap_or(nodes.len()),
        })
        .collect()
}

fn row_label(node: &LayerNode) -> String {
    node.row.clone().unwrap_or_else(|| node.name.clone())
}

/// Cost rows for an arbitrary node list. Multiply and add counts scale with
/// the batch of `input`; `floats_out` is per sample.
pub fn count_layers(model: &str, nodes: &[LayerNode], input: Shape4) -> Result<CostReport> {
    let shapes = infer_shapes(nodes, input)?;
    let batch = input.batch as u64;
    let mut rows = Vec::new();
    for seg in segments(nodes) {
        let node = &nodes[seg.start];
        let out = shapes[seg.start + 1];
        let (multiplies, bias_adds) = match &node.op {
            Op::Conv(g) => {
                let outputs = batch * (out.height * out.width * g.out_channels) as u64;
                let m = outputs * g.fan_in() as u64;
                (m, if g.bias { outputs } else { 0 })
            }
            Op::Dense {
                in_features,
                out_features,
            } => {
                let outputs = batch * *out_features as u64;
                (outputs * *in_features as u64, outputs)
            }
            _ => unreachable!("segments start at weighted nodes"),
        };
        let params = nodes[seg.start..seg.end]
            .iter()
            .map(|n| match &n.op {
                Op::Conv(g) => (g.weight_shape().len() + if g.bias { g.out_channels } else { 0 }) as u64,
                Op::Dense {
                    in_features,
                    out_features,
                } => (in_features * out_features + out_features) as u64,
                Op::BatchNorm { channels } => 2 * *channels as u64,
                _ => 0,
            })
            .sum();
        let adds = multiplies + bias_adds;
        rows.push(CostRow {
            label: row_label(node),
            multiplies,
            adds,
            flops: multiplies + adds,
            params,
            floats_out: shapes[seg.end].floats_out() as u64,
        });
    }
    let totals = CostRow {
        label: "total".into(),
        multiplies: rows.iter().map(|r| r.multiplies).sum(),
        adds: rows.iter().map(|r| r.adds).sum(),
        flops: rows.iter().map(|r| r.flops).sum(),
        params: rows.iter().map(|r| r.params).sum(),
        floats_out: rows.last().map_or(0, |r| r.floats_out),
    };
    Ok(CostReport {
        model: model.into(),
        rows,
        totals,
    })
}

/// Static FLOP report for `spec` evaluated on `input` (use batch 1 for
/// per-sample figures).
pub fn count_flops(spec: &ModelSpec, input: Shape4) -> Result<CostReport> {
    let nodes = build_layers(spec)?;
    let expected = spec.input_shape()?;
    if input.with_batch(1) != expected {
        return Err(Error::Shape(format!(
            "spec {} takes samples {expected}, got {input}",
            spec.name
        )));
    }
    count_layers(&spec.name, &nodes, input)
}

pub fn data_flow(nodes: &[LayerNode], input: Shape4) -> Result<Vec<DataFlowRow>> {
    let shapes = infer_shapes(nodes, input)?;
    let mut prev = input.floats_out() as u64;
    let mut rows = Vec::new();
    for seg in segments(nodes) {
        let floats_out = shapes[seg.end].floats_out() as u64;
        rows.push(DataFlowRow {
            label: row_label(&nodes[seg.start]),
            floats_out,
            compressed: floats_out * 4 <= prev,
        });
        prev = floats_out;
    }
    Ok(rows)
}

pub fn data_flow_report(spec: &ModelSpec) -> Result<Vec<DataFlowRow>> {
    data_flow(&build_layers(spec)?, spec.input_shape()?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub flops: u64,
    /// `flops / baseline_flops`, unrounded.
    pub factor: f64,
}

impl ComparisonRow {
    pub fn rounded_factor(&self) -> f64 {
        (self.factor * 100.0).round() / 100.0
    }
}

pub fn compare(reports: &[CostReport], baseline: usize) -> Result<Vec<ComparisonRow>> {
    if reports.len() < 2 {
        return Err(Error::Param(format!(
            "comparison needs at least two reports, got {}",
            reports.len()
        )));
    }
    let base = reports
        .get(baseline)
        .ok_or_else(|| Error::Param(format!("baseline index {baseline} out of range")))?;
    if base.totals.flops == 0 {
        return Err(Error::Param("baseline has zero FLOPs".into()));
    }
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            model: r.model.clone(),
            flops: r.totals.flops,
            factor: r.totals.flops as f64 / base.totals.flops as f64,
        })
        .collect())
}

/// One tab-separated record per row, then a `total` record:
/// `layer <label> <mults> <adds> <flops> <params> <floats_out> <flag>`.
pub fn render_records(cost: &CostReport, flow: &[DataFlowRow]) -> String {
    let mut s = format!("model\t{}\n", cost.model);
    for (r, f) in cost.rows.iter().zip(flow) {
        let _ = writeln!(
            s,
            "layer\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.label,
            r.multiplies,
            r.adds,
            r.flops,
            r.params,
            r.floats_out,
            u8::from(f.compressed)
        );
    }
    let t = &cost.totals;
    let _ = writeln!(
        s,
        "total\t-\t{}\t{}\t{}\t{}\t{}\t-",
        t.multiplies, t.adds, t.flops, t.params, t.floats_out
    );
    s
}

pub fn render_table(cost: &CostReport, flow: &[DataFlowRow]) -> String {
    let width = cost.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{}\n", cost.model);
    let _ = writeln!(
        s,
        "{:<width$}  {:>12}  {:>12}  {:>12}  {:>9}  {:>10}",
        "layer", "mults", "adds", "flops", "params", "floats out"
    );
    for (r, f) in cost.rows.iter().zip(flow) {
        let _ = writeln!(
            s,
            "{:<width$}  {:>12}  {:>12}  {:>12}  {:>9}  {:>10}{}",
            r.label,
            r.multiplies,
            r.adds,
            r.flops,
            r.params,
            r.floats_out,
            if f.compressed { " *" } else { "" }
        );
    }
    let t = &cost.totals;
    let _ = writeln!(
        s,
        "{:<width$}  {:>12}  {:>12}  {:>12}  {:>9}",
        "total", t.multiplies, t.adds, t.flops, t.params
    );
    let _ = writeln!(s, "{:.2} MFLOPs; * = compression by 4x or more", t.flops as f64 / 1e6);
    s
}
