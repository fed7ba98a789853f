//! Tape-based reverse-mode differentiation over [`LayerNode`] graphs.
//!
//! [`ComputeGraph::forward`] records every intermediate value plus the small
//! caches each op needs (batch-norm statistics, pooling argmax, dropout
//! masks). [`ComputeGraph::backward`] walks the nodes in reverse and
//! accumulates gradients for the graph input and every trainable array.

mod adam;
mod gradcheck;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, projection_loss, GradCheckReport, Wrt};
pub use train::{evaluate, predictions, train_step, StepMetrics};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerNode, Op};
use crate::ops::{self, BnCache, BnParams, Mode};
use crate::tensor::{Fill, Rng, Shape4, Tensor};

/// Parameters owned by one node.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeParams {
    None,
    Conv { weight: Tensor, bias: Option<Vec<f64>> },
    Bn(BnParams),
    Dense { weight: Tensor, bias: Vec<f64> },
}

#[derive(Clone, Debug)]
enum Cache {
    None,
    Bn(BnCache),
    Pool(Vec<usize>),
    Dropout(Option<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct Tape {
    values: Vec<Tensor>,
    caches: Vec<Cache>,
    macs: u64,
}

impl Tape {
    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn output(&self) -> &Tensor {
        self.values.last().expect("tape holds the input at least")
    }

    /// Multiply-accumulates executed by convolution and dense kernels.
    pub fn macs(&self) -> u64 {
        self.macs
    }
}

/// Gradients in [`ComputeGraph::param_names`] order, plus the input gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

#[derive(Clone, Debug)]
pub struct ComputeGraph {
    nodes: Vec<LayerNode>,
    input_shape: Shape4,
    params: Vec<NodeParams>,
    tape: Option<Tape>,
}

impl ComputeGraph {
    /// Validates the node chain for `input_shape` (batch ignored) and
    /// initialises parameters: He-uniform weights, zero biases, unit BN scale.
    pub fn new(nodes: Vec<LayerNode>, input_shape: Shape4, rng: &mut Rng) -> Result<ComputeGraph> {
        let input_shape = input_shape.with_batch(1);
        if nodes.is_empty() {
            return Err(Error::Shape("graph has no nodes".into()));
        }
        infer_shapes(&nodes, input_shape)?;
        let mut params = Vec::with_capacity(nodes.len());
        for node in &nodes {
            params.push(match &node.op {
                Op::Conv(g) => NodeParams::Conv {
                    weight: Tensor::create(
                        g.weight_shape(),
                        Fill::HeUniform {
                            rng,
                            fan_in: g.fan_in(),
                        },
                    )?,
                    bias: g.bias.then(|| vec![0.0; g.out_channels]),
                },
                Op::BatchNorm { channels } => NodeParams::Bn(BnParams::new(*channels)),
                Op::Dense {
                    in_features,
                    out_features,
                } => NodeParams::Dense {
                    weight: Tensor::create(
                        Shape4::new(*in_features, *out_features, 1, 1)?,
                        Fill::HeUniform {
                            rng,
                            fan_in: *in_features,
                        },
                    )?,
                    bias: vec![0.0; *out_features],
                },
                _ => NodeParams::None,
            });
        }
        Ok(ComputeGraph {
            nodes,
            input_shape,
            params,
            tape: None,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    /// Per-sample input shape (batch 1).
    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn node_params(&self) -> &[NodeParams] {
        &self.params
    }

    pub fn node_params_mut(&mut self) -> &mut [NodeParams] {
        &mut self.params
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.tape.as_ref()
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// Names of trainable arrays, in gradient order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (node, p) in self.nodes.iter().zip(&self.params) {
            let suffixes: &[&str] = match p {
                NodeParams::None => &[],
                NodeParams::Conv { bias: None, .. } => &["weight"],
                NodeParams::Conv { bias: Some(_), .. } | NodeParams::Dense { .. } => &["weight", "bias"],
                NodeParams::Bn(_) => &["gamma", "beta"],
            };
            names.extend(suffixes.iter().map(|s| format!("{}.{s}", node.name)));
        }
        names
    }

    /// Trainable arrays in gradient order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for p in &self.params {
            match p {
                NodeParams::None => {}
                NodeParams::Conv { weight, bias } => {
                    out.push(weight.data());
                    if let Some(b) = bias {
                        out.push(b);
                    }
                }
                NodeParams::Bn(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                NodeParams::Dense { weight, bias } => {
                    out.push(weight.data());
                    out.push(bias);
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for p in &mut self.params {
            match p {
                NodeParams::None => {}
                NodeParams::Conv { weight, bias } => {
                    out.push(weight.data_mut());
                    if let Some(b) = bias {
                        out.push(b);
                    }
                }
                NodeParams::Bn(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                NodeParams::Dense { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias);
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Non-trainable state (batch-norm running statistics) as named arrays.
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (node, p) in self.nodes.iter().zip(&self.params) {
            if let NodeParams::Bn(bn) = p {
                out.push((format!("{}.running_mean", node.name), bn.running_mean.as_slice()));
                out.push((format!("{}.running_var", node.name), bn.running_var.as_slice()));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (node, p) in self.nodes.iter().zip(&mut self.params) {
            if let NodeParams::Bn(bn) = p {
                out.push((format!("{}.running_mean", node.name), &mut bn.running_mean));
                out.push((format!("{}.running_var", node.name), &mut bn.running_var));
            }
        }
        out
    }

    /// Runs the graph and records the tape. `rng` drives dropout masks.
    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<&Tensor> {
        self.tape = None;
        let s = input.shape();
        if s.with_batch(1) != self.input_shape {
            return Err(Error::Shape(format!(
                "graph expects samples of shape {}, got {s}",
                self.input_shape
            )));
        }
        let mut values = Vec::with_capacity(self.nodes.len() + 1);
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut macs = 0u64;
        values.push(input.clone());
        for (node, params) in self.nodes.iter().zip(self.params.iter_mut()) {
            let x = &values[node.inputs[0]];
            let (out, cache) = match (&node.op, params) {
                (Op::Conv(g), NodeParams::Conv { weight, bias }) => {
                    let (y, m) = ops::conv2d_counted(x, g, weight, bias.as_deref())?;
                    macs += m;
                    (y, Cache::None)
                }
                (Op::BatchNorm { .. }, NodeParams::Bn(bn)) => {
                    let (y, c) = ops::batch_norm(x, bn, mode)?;
                    (y, Cache::Bn(c))
                }
                (Op::Act(a), _) => (ops::activation(x, *a), Cache::None),
                (Op::MaxPool(p), _) => {
                    let (y, arg) = ops::max_pool2d_with_argmax(x, p)?;
                    (y, Cache::Pool(arg))
                }
                (Op::Shuffle { groups }, _) => (ops::channel_shuffle(x, *groups)?, Cache::None),
                (Op::Dropout { p }, _) => {
                    let (y, mask) = ops::dropout(x, *p, mode, rng)?;
                    (y, Cache::Dropout(mask))
                }
                (Op::Dense { .. }, NodeParams::Dense { weight, bias }) => {
                    let (y, m) = ops::fully_connected_counted(x, weight, bias)?;
                    macs += m;
                    (y, Cache::None)
                }
                (Op::Add, _) => {
                    let mut y = x.clone();
                    let other = &values[node.inputs[1]];
                    if other.shape() != y.shape() {
                        return Err(Error::Shape(format!("{}: add shape mismatch", node.name)));
                    }
                    y.data_mut().iter_mut().zip(other.data()).for_each(|(a, b)| *a += b);
                    (y, Cache::None)
                }
                (op, _) => return Err(Error::State(format!("{}: parameters missing for {op:?}", node.name))),
            };
            values.push(out);
            caches.push(cache);
        }
        self.tape = Some(Tape { values, caches, macs });
        Ok(self.tape.as_ref().unwrap().output())
    }

    /// Back-propagates `grad_output` (gradient of a scalar loss w.r.t. the
    /// graph output) through the recorded tape.
    pub fn backward(&self, grad_output: &Tensor) -> Result<Gradients> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if grad_output.shape() != tape.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient has shape {}, output is {}",
                grad_output.shape(),
                tape.output().shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; tape.values.len()];
        *grads.last_mut().unwrap() = Some(grad_output.clone());

        // Param gradient slots per node, in param_names order.
        let mut node_grads: Vec<Vec<Vec<f64>>> = self
            .params
            .iter()
            .map(|p| match p {
                NodeParams::None => vec![],
                NodeParams::Conv { weight, bias } => {
                    let mut v = vec![vec![0.0; weight.len()]];
                    if let Some(b) = bias {
                        v.push(vec![0.0; b.len()]);
                    }
                    v
                }
                NodeParams::Bn(bn) => vec![vec![0.0; bn.channels()]; 2],
                NodeParams::Dense { weight, bias } => vec![vec![0.0; weight.len()], vec![0.0; bias.len()]],
            })
            .collect();

        for k in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[k + 1].take() else {
                continue;
            };
            let node = &self.nodes[k];
            let x = &tape.values[node.inputs[0]];
            let dx = match (&node.op, &self.params[k], &tape.caches[k]) {
                (Op::Conv(g), NodeParams::Conv { weight, .. }, _) => {
                    let cg = ops::conv2d_backward(x, g, weight, &dy)?;
                    node_grads[k][0] = cg.weight.into_data();
                    if let Some(b) = cg.bias {
                        node_grads[k][1] = b;
                    }
                    cg.input
                }
                (Op::BatchNorm { .. }, NodeParams::Bn(bn), Cache::Bn(cache)) => {
                    let bg = ops::batch_norm_backward(&dy, cache, &bn.gamma)?;
                    node_grads[k][0] = bg.gamma;
                    node_grads[k][1] = bg.beta;
                    bg.input
                }
                (Op::Act(a), _, _) => ops::activation_backward(x, *a, &dy),
                (Op::MaxPool(_), _, Cache::Pool(arg)) => ops::max_pool2d_backward(x.shape(), arg, &dy)?,
                (Op::Shuffle { groups }, _, _) => ops::channel_shuffle_backward(&dy, *groups)?,
                (Op::Dropout { .. }, _, Cache::Dropout(mask)) => ops::dropout_backward(&dy, mask.as_deref()),
                (Op::Dense { .. }, NodeParams::Dense { weight, .. }, _) => {
                    let dg = ops::fully_connected_backward(x, weight, &dy)?;
                    node_grads[k][0] = dg.weight.into_data();
                    node_grads[k][1] = dg.bias;
                    dg.input
                }
                (Op::Add, _, _) => {
                    accumulate(&mut grads[node.inputs[1]], dy.clone());
                    dy
                }
                (op, _, _) => return Err(Error::State(format!("{}: tape inconsistent for {op:?}", node.name))),
            };
            accumulate(&mut grads[node.inputs[0]], dx);
        }

        let input = grads[0].take().unwrap_or_else(|| Tensor::zeros(tape.values[0].shape()));
        Ok(Gradients {
            params: node_grads.into_iter().flatten().collect(),
            input,
        })
    }

    /// Piecewise branch choices of the last forward pass: the sign pattern
    /// in front of every ReLU / leaky ReLU and every pooling argmax. Two
    /// passes with equal signatures lie on the same linear piece.
    pub fn branch_signature(&self) -> Result<Vec<usize>> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::State("no forward pass recorded".into()))?;
        let mut sig = Vec::new();
        for (k, node) in self.nodes.iter().enumerate() {
            match (&node.op, &tape.caches[k]) {
                (Op::Act(a), _) if a.is_piecewise() => {
                    let x = &tape.values[node.inputs[0]];
                    sig.extend(x.data().iter().map(|&v| usize::from(v > 0.0) + usize::from(v >= 0.0)));
                }
                (_, Cache::Pool(arg)) => sig.extend_from_slice(arg),
                _ => {}
            }
        }
        Ok(sig)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
