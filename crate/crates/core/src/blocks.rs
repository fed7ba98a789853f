//! Block builders for every architecture family and model assembly.
//!
//! Each convolution is followed by batch norm and then its activation; data
//! flow rows are labelled the way the comparison tables name layers
//! (`1x1x32`, `dw 1x3 + 1d mp`, `gc4 1x1x128`, ...).

use serde::{Deserialize, Serialize};

use crate::autograd::ComputeGraph;
use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerNode, Op, ValueId};
use crate::ops::{Activation, Conv2d, Padding, PoolParams, DEFAULT_LEAKY_ALPHA};
use crate::tensor::{Rng, Shape4};

/// Channels a bottleneck may never drop below.
pub const MIN_BOTTLENECK: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffNetOptions {
    pub depth_multiplier: usize,
    pub pw_activation: Activation,
    pub dw_activation: Activation,
}

impl Default for EffNetOptions {
    fn default() -> Self {
        EffNetOptions {
            depth_multiplier: 1,
            pw_activation: Activation::Relu,
            dw_activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffNetV2Options {
    pub expansion_rate: f64,
    pub leaky_alpha: f64,
    pub dw_activation: Activation,
}

impl Default for EffNetV2Options {
    fn default() -> Self {
        EffNetV2Options {
            expansion_rate: 6.0,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
            dw_activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobileNetV2Options {
    pub expansion_rate: f64,
    pub stride: usize,
    pub linear_tail: bool,
    pub pooling: bool,
    pub leaky_alpha: f64,
}

impl MobileNetV2Options {
    pub fn original(expansion_rate: f64) -> Self {
        MobileNetV2Options {
            expansion_rate,
            stride: 2,
            linear_tail: true,
            pooling: false,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
        }
    }

    /// Pooling instead of a strided depthwise layer, leaky ReLU instead of
    /// the linear tail.
    pub fn mob_imp(expansion_rate: f64) -> Self {
        MobileNetV2Options {
            linear_tail: false,
            pooling: true,
            ..Self::original(expansion_rate)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    /// 3x3 convolution followed by 2x2 max pooling.
    Vanilla,
    Effnet(EffNetOptions),
    EffnetV2(EffNetV2Options),
    Mobilenet {
        stride: usize,
    },
    Shufflenet {
        groups: usize,
    },
    MobilenetV2(MobileNetV2Options),
    MobImp(MobileNetV2Options),
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Vanilla => "vanilla",
            BlockKind::Effnet(_) => "effnet",
            BlockKind::EffnetV2(_) => "effnet_v2",
            BlockKind::Mobilenet { .. } => "mobilenet",
            BlockKind::Shufflenet { .. } => "shufflenet",
            BlockKind::MobilenetV2(_) => "mobilenet_v2",
            BlockKind::MobImp(_) => "mob_imp",
        }
    }
}

/// How stage 0 is realised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerMode {
    /// Stage 0 uses its declared block kind.
    #[default]
    Block,
    /// Stage 0 is a vanilla 3x3 convolution with 2x2 max pooling.
    VanillaConvMp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub block: BlockKind,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub first_layer: FirstLayerMode,
    pub stages: Vec<Stage>,
    /// Dropout probability in front of the fully connected head (0 = none).
    pub dropout: f64,
}

impl ModelSpec {
    pub fn input_shape(&self) -> Result<Shape4> {
        Shape4::new(1, self.input[0], self.input[1], self.input[2])
            .map_err(|e| Error::spec(None, format!("input shape: {e}")))
    }

    /// Block kind actually built for `stage`, after the first-layer rule.
    pub fn effective_block(&self, stage: usize) -> BlockKind {
        if stage == 0 && self.first_layer == FirstLayerMode::VanillaConvMp {
            BlockKind::Vanilla
        } else {
            self.stages[stage].block
        }
    }
}

/// Nodes of one block. Value 0 is the block input; value `k + 1` is the
/// output of `nodes[k]`; the last node is the block output.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGraph {
    pub in_channels: usize,
    pub out_channels: usize,
    pub nodes: Vec<LayerNode>,
}

impl BlockGraph {
    fn new(in_channels: usize, out_channels: usize) -> Self {
        BlockGraph {
            in_channels,
            out_channels,
            nodes: Vec::new(),
        }
    }

    fn last(&self) -> ValueId {
        self.nodes.len()
    }

    fn push(&mut self, name: String, op: Op, inputs: Vec<ValueId>, row: Option<String>) -> ValueId {
        self.nodes.push(LayerNode { name, op, inputs, row });
        self.last()
    }

    fn then(&mut self, name: &str, op: Op) -> ValueId {
        let prev = self.last();
        self.push(name.into(), op, vec![prev], None)
    }

    /// Convolution + batch norm + activation, with an optional trailing pool.
    fn conv_unit(&mut self, name: &str, geom: Conv2d, act: Activation, pool: Option<PoolParams>, row: String) {
        let prev = self.last();
        self.push(name.into(), Op::Conv(geom), vec![prev], Some(row));
        self.then(
            &format!("{name}_bn"),
            Op::BatchNorm {
                channels: geom.out_channels,
            },
        );
        if act != Activation::Linear {
            self.then(&format!("{name}_act"), Op::Act(act));
        }
        if let Some(p) = pool {
            self.then(&format!("{name}_pool"), Op::MaxPool(p));
        }
    }

    /// Output shape for `input`. A subsampling block must halve both
    /// extents exactly, so odd extents are rejected rather than floored.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let out = *infer_shapes(&self.nodes, input)?.last().unwrap();
        let kept = (out.height, out.width) == (input.height, input.width);
        let halved = (2 * out.height, 2 * out.width) == (input.height, input.width);
        if !kept && !halved {
            return Err(Error::Shape(format!(
                "block subsamples by two but input {}x{} has an odd extent",
                input.height, input.width
            )));
        }
        Ok(out)
    }
}

fn check_channels(in_ch: usize, out_ch: usize) -> Result<()> {
    if in_ch == 0 || out_ch == 0 {
        return Err(Error::spec(
            None,
            format!("channel counts must be positive ({in_ch} -> {out_ch})"),
        ));
    }
    Ok(())
}

fn pointwise(in_ch: usize, out_ch: usize) -> Conv2d {
    Conv2d::new(in_ch, out_ch, (1, 1)).padding(Padding::Valid)
}

fn mp_suffix(pool: bool, stride: usize) -> &'static str {
    match (pool, stride) {
        (true, _) => " + mp",
        (false, 1) => "",
        _ => " + stride",
    }
}

/// Bottleneck width of the original EffNet block: half the output channels,
/// never below [`MIN_BOTTLENECK`].
pub fn effnet_bottleneck(out_ch: usize) -> usize {
    (out_ch / 2).max(MIN_BOTTLENECK)
}

/// Bottleneck width of the revised block: `floor(in_ch * expansion_rate / 2)`.
pub fn effnet_v2_bottleneck(in_ch: usize, expansion_rate: f64) -> usize {
    (in_ch as f64 * expansion_rate / 2.0).floor() as usize
}

/// ShuffleNet mid width: a quarter of the output channels, at least [`MIN_BOTTLENECK`].
pub fn shufflenet_bottleneck(out_ch: usize) -> usize {
    (out_ch / 4).max(MIN_BOTTLENECK)
}

pub fn vanilla_block(in_ch: usize, out_ch: usize) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    let mut b = BlockGraph::new(in_ch, out_ch);
    b.conv_unit(
        "conv",
        Conv2d::new(in_ch, out_ch, (3, 3)),
        Activation::Relu,
        Some(PoolParams::window(2, 2)),
        format!("3x3x{out_ch} + mp"),
    );
    Ok(b)
}

/// Pointwise to the bottleneck, depthwise 1x3, 1x2 max pool, depthwise 3x1,
/// then a 2x1 convolution with stride (2, 1) to `out_ch`.
pub fn effnet_block(in_ch: usize, out_ch: usize, opts: &EffNetOptions) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    if opts.depth_multiplier == 0 {
        return Err(Error::spec(None, "depth multiplier must be positive"));
    }
    separable_pool_block(
        in_ch,
        out_ch,
        effnet_bottleneck(out_ch),
        opts.depth_multiplier,
        opts.pw_activation,
        opts.dw_activation,
    )
}

/// Revised EffNet block: bottleneck from the input width, depth multiplier
/// 2 on the first depthwise layer, leaky ReLU on both pointwise layers.
pub fn effnet_v2_block(in_ch: usize, out_ch: usize, opts: &EffNetV2Options) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    if opts.expansion_rate.is_nan() || opts.expansion_rate <= 0.0 {
        return Err(Error::spec(
            None,
            format!("expansion rate {} must be positive", opts.expansion_rate),
        ));
    }
    let width = effnet_v2_bottleneck(in_ch, opts.expansion_rate);
    if width < 1 {
        return Err(Error::spec(
            None,
            format!("bottleneck floor({in_ch} * {} / 2) is empty", opts.expansion_rate),
        ));
    }
    separable_pool_block(
        in_ch,
        out_ch,
        width,
        2,
        Activation::LeakyRelu(opts.leaky_alpha),
        opts.dw_activation,
    )
}

fn separable_pool_block(
    in_ch: usize,
    out_ch: usize,
    width: usize,
    multiplier: usize,
    pw_act: Activation,
    dw_act: Activation,
) -> Result<BlockGraph> {
    let mut b = BlockGraph::new(in_ch, out_ch);
    let dw_ch = width * multiplier;
    b.conv_unit("pw", pointwise(in_ch, width), pw_act, None, format!("1x1x{width}"));
    b.conv_unit(
        "dw1x3",
        Conv2d::depthwise(width, multiplier, (1, 3)),
        dw_act,
        Some(PoolParams::window(1, 2)),
        "dw 1x3 + 1d mp".into(),
    );
    b.conv_unit(
        "dw3x1",
        Conv2d::depthwise(dw_ch, 1, (3, 1)),
        dw_act,
        None,
        "dw 3x1".into(),
    );
    b.conv_unit(
        "pw2x1",
        Conv2d::new(dw_ch, out_ch, (2, 1)).stride(2, 1).padding(Padding::Valid),
        pw_act,
        None,
        format!("2x1x{out_ch} + 1d stride"),
    );
    Ok(b)
}

pub fn mobilenet_block(in_ch: usize, out_ch: usize, stride: usize) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    if !(1..=2).contains(&stride) {
        return Err(Error::spec(None, format!("mobilenet stride {stride} not in {{1, 2}}")));
    }
    let mut b = BlockGraph::new(in_ch, out_ch);
    b.conv_unit(
        "dw",
        Conv2d::depthwise(in_ch, 1, (3, 3)).stride(stride, stride),
        Activation::Relu,
        None,
        format!("dw 3x3{}", mp_suffix(false, stride)),
    );
    b.conv_unit(
        "pw",
        pointwise(in_ch, out_ch),
        Activation::Relu,
        None,
        format!("1x1x{out_ch}"),
    );
    Ok(b)
}

/// Grouped pointwise, channel shuffle, strided depthwise 3x3, grouped
/// pointwise. No shortcut branch.
pub fn shufflenet_block(in_ch: usize, out_ch: usize, groups: usize) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    let mid = shufflenet_bottleneck(out_ch);
    if groups == 0 || !in_ch.is_multiple_of(groups) || !mid.is_multiple_of(groups) || !out_ch.is_multiple_of(groups) {
        return Err(Error::spec(
            None,
            format!("{groups} groups do not divide channels {in_ch} -> {mid} -> {out_ch}"),
        ));
    }
    let gc = |c: usize| {
        if groups == 1 {
            format!("1x1x{c}")
        } else {
            format!("gc{groups} 1x1x{c}")
        }
    };
    let mut b = BlockGraph::new(in_ch, out_ch);
    b.conv_unit(
        "gc1",
        pointwise(in_ch, mid).groups(groups),
        Activation::Relu,
        None,
        gc(mid),
    );
    b.then("shuffle", Op::Shuffle { groups });
    b.conv_unit(
        "dw",
        Conv2d::depthwise(mid, 1, (3, 3)).stride(2, 2),
        Activation::Relu,
        None,
        "dw 3x3 + stride".into(),
    );
    b.conv_unit(
        "gc2",
        pointwise(mid, out_ch).groups(groups),
        Activation::Relu,
        None,
        gc(out_ch),
    );
    Ok(b)
}

/// Inverted residual block: expand, depthwise 3x3, project. With `pooling`
/// a stride-2 request becomes a stride-1 depthwise layer plus 2x2 max pool.
/// The shortcut is added only when the block keeps its shape.
pub fn mobilenet_v2_block(in_ch: usize, out_ch: usize, opts: &MobileNetV2Options) -> Result<BlockGraph> {
    check_channels(in_ch, out_ch)?;
    if opts.expansion_rate.is_nan() || opts.expansion_rate < 1.0 {
        return Err(Error::spec(
            None,
            format!("expansion rate {} below 1", opts.expansion_rate),
        ));
    }
    if !(1..=2).contains(&opts.stride) {
        return Err(Error::spec(
            None,
            format!("mobilenet v2 stride {} not in {{1, 2}}", opts.stride),
        ));
    }
    let expanded = (in_ch as f64 * opts.expansion_rate).floor() as usize;
    let pool = opts.pooling && opts.stride == 2;
    let dw_stride = if pool { 1 } else { opts.stride };
    let tail = if opts.linear_tail {
        Activation::Linear
    } else {
        Activation::LeakyRelu(opts.leaky_alpha)
    };

    let mut b = BlockGraph::new(in_ch, out_ch);
    b.conv_unit(
        "expand",
        pointwise(in_ch, expanded),
        Activation::Relu,
        None,
        format!("1x1x{expanded}"),
    );
    b.conv_unit(
        "dw",
        Conv2d::depthwise(expanded, 1, (3, 3)).stride(dw_stride, dw_stride),
        Activation::Relu,
        pool.then(|| PoolParams::window(2, 2)),
        format!("dw 3x3{}", mp_suffix(pool, dw_stride)),
    );
    b.conv_unit(
        "project",
        pointwise(expanded, out_ch),
        tail,
        None,
        format!("1x1x{out_ch}"),
    );
    if opts.stride == 1 && in_ch == out_ch {
        let last = b.last();
        b.push("residual".into(), Op::Add, vec![last, 0], None);
    }
    Ok(b)
}

pub fn build_block(kind: &BlockKind, in_ch: usize, out_ch: usize) -> Result<BlockGraph> {
    match kind {
        BlockKind::Vanilla => vanilla_block(in_ch, out_ch),
        BlockKind::Effnet(o) => effnet_block(in_ch, out_ch, o),
        BlockKind::EffnetV2(o) => effnet_v2_block(in_ch, out_ch, o),
        BlockKind::Mobilenet { stride } => mobilenet_block(in_ch, out_ch, *stride),
        BlockKind::Shufflenet { groups } => shufflenet_block(in_ch, out_ch, *groups),
        BlockKind::MobilenetV2(o) => mobilenet_v2_block(in_ch, out_ch, o),
        BlockKind::MobImp(o) => mobilenet_v2_block(
            in_ch,
            out_ch,
            &MobileNetV2Options {
                linear_tail: false,
                pooling: true,
                ..*o
            },
        ),
    }
}

/// Appends `block` after value `tail`, prefixing node names.
fn append(nodes: &mut Vec<LayerNode>, block: BlockGraph, tail: ValueId, prefix: &str) {
    let offset = nodes.len();
    for mut node in block.nodes {
        node.name = format!("{prefix}.{}", node.name);
        for v in &mut node.inputs {
            *v = if *v == 0 { tail } else { *v + offset };
        }
        nodes.push(node);
    }
}

/// Static layer list of a model: stages in order, optional dropout, then the
/// fully connected head. Shapes are validated stage by stage.
pub fn build_layers(spec: &ModelSpec) -> Result<Vec<LayerNode>> {
    if spec.stages.is_empty() {
        return Err(Error::spec(None, "model has no stages"));
    }
    if spec.classes == 0 {
        return Err(Error::spec(None, "class count must be positive"));
    }
    if !(0.0..1.0).contains(&spec.dropout) {
        return Err(Error::spec(None, format!("dropout {} outside [0, 1)", spec.dropout)));
    }
    let mut shape = spec.input_shape()?;
    let mut nodes = Vec::new();
    for (i, stage) in spec.stages.iter().enumerate() {
        let kind = spec.effective_block(i);
        let block = build_block(&kind, shape.channels, stage.out_channels).map_err(|e| match e {
            Error::Spec { msg, .. } => Error::spec(Some(i), format!("{}: {msg}", kind.name())),
            other => Error::spec(Some(i), other.to_string()),
        })?;
        shape = block
            .output_shape(shape)
            .map_err(|e| Error::spec(Some(i), format!("{} block on input {shape}: {e}", kind.name())))?;
        let tail = nodes.len();
        append(&mut nodes, block, tail, &format!("s{i}"));
    }
    if spec.dropout > 0.0 {
        nodes.push(LayerNode {
            name: "head.dropout".into(),
            op: Op::Dropout { p: spec.dropout },
            inputs: vec![nodes.len()],
            row: None,
        });
    }
    nodes.push(LayerNode {
        name: "head.fc".into(),
        op: Op::Dense {
            in_features: shape.floats_out(),
            out_features: spec.classes,
        },
        inputs: vec![nodes.len()],
        row: Some("Fully Connected".into()),
    });
    Ok(nodes)
}

pub fn build_model(spec: &ModelSpec, rng: &mut Rng) -> Result<ComputeGraph> {
    let nodes = build_layers(spec)?;
    ComputeGraph::new(nodes, spec.input_shape()?, rng)
}
