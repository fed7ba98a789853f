//! Declarative layer nodes and static shape inference.
//!
//! Values are numbered so that value 0 is the graph input and value `k + 1`
//! is the output of node `k`. A node may only read values produced before it,
//! which makes every node list topologically ordered by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Activation, Conv2d, PoolParams};
use crate::tensor::Shape4;

pub type ValueId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Conv(Conv2d),
    BatchNorm {
        channels: usize,
    },
    Act(Activation),
    MaxPool(PoolParams),
    Shuffle {
        groups: usize,
    },
    Dropout {
        p: f64,
    },
    /// Flattens each sample and applies an affine map with bias.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Elementwise sum of two equally shaped inputs.
    Add,
}

impl Op {
    pub fn arity(&self) -> usize {
        match self {
            Op::Add => 2,
            _ => 1,
        }
    }

    /// Convolution and dense layers: the only ops that carry FLOPs and start
    /// a row in the data-flow report.
    pub fn is_weighted(&self) -> bool {
        matches!(self, Op::Conv(_) | Op::Dense { .. })
    }

    pub fn output_shape(&self, inputs: &[Shape4]) -> Result<Shape4> {
        let x = inputs[0];
        match self {
            Op::Conv(geom) => geom.output_shape(x),
            Op::BatchNorm { channels } => {
                if *channels != x.channels {
                    return Err(Error::Shape(format!(
                        "batch norm over {channels} channels applied to {} channels",
                        x.channels
                    )));
                }
                Ok(x)
            }
            Op::Act(_) => Ok(x),
            Op::MaxPool(p) => p.output_shape(x),
            Op::Shuffle { groups } => {
                if *groups == 0 || !x.channels.is_multiple_of(*groups) {
                    return Err(Error::Shape(format!(
                        "cannot shuffle {} channels in {groups} groups",
                        x.channels
                    )));
                }
                Ok(x)
            }
            Op::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Param(format!("drop probability {p} outside [0, 1)")));
                }
                Ok(x)
            }
            Op::Dense {
                in_features,
                out_features,
            } => {
                if x.floats_out() != *in_features {
                    return Err(Error::Shape(format!(
                        "fully connected expects {in_features} features, got {}",
                        x.floats_out()
                    )));
                }
                Shape4::new(x.batch, *out_features, 1, 1)
            }
            Op::Add => {
                if inputs[1] != x {
                    return Err(Error::Shape(format!("cannot add {x} and {}", inputs[1])));
                }
                Ok(x)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<ValueId>,
    /// Data-flow row label (weighted nodes only), e.g. `dw 1x3 + 1d mp`.
    pub row: Option<String>,
}

/// Shapes of every value (input first) for the given input shape.
pub fn infer_shapes(nodes: &[LayerNode], input: Shape4) -> Result<Vec<Shape4>> {
    let mut shapes = Vec::with_capacity(nodes.len() + 1);
    shapes.push(input);
    for (k, node) in nodes.iter().enumerate() {
        if node.inputs.len() != node.op.arity() || node.inputs.iter().any(|&v| v > k) {
            return Err(Error::Shape(format!(
                "node {} has invalid inputs {:?}",
                node.name, node.inputs
            )));
        }
        let ins: Vec<Shape4> = node.inputs.iter().map(|&v| shapes[v]).collect();
        let out = node
            .op
            .output_shape(&ins)
            .map_err(|e| Error::Shape(format!("{}: {e}", node.name)))?;
        shapes.push(out);
    }
    Ok(shapes)
}
