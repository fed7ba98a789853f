mod common;

use common::*;
use effnet::autograd::{gradient_check, projection_loss, ComputeGraph, Wrt};
use effnet::blocks::{build_block, BlockKind, EffNetOptions, EffNetV2Options, MobileNetV2Options};
use effnet::graph::{LayerNode, Op};
use effnet::ops::{conv2d, conv2d_backward, Activation, Conv2d, Mode, Padding, PoolParams};
use effnet::{Rng, Tensor};

const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;
/// Central differences of an O(1) loss carry about 1e-10 of rounding noise at
/// this step, which dominates where the true gradient is exactly zero.
const ATOL: f64 = 1e-9;

struct Outcome {
    /// Smallest absolute tolerance that passes at `RTOL`.
    worst: f64,
    checked: usize,
    skipped: usize,
}

fn check_nodes(nodes: Vec<LayerNode>, in_ch: usize, mode: Mode, seed: u64) -> Outcome {
    let s = shape(2, in_ch, 8, 8);
    let mut rng = Rng::new(seed);
    let mut graph = ComputeGraph::new(nodes, s, &mut rng).unwrap();
    randomize_bn(&mut graph, &mut rng);
    let x = random_tensor(s, &mut rng);
    let out_shape = *effnet::graph::infer_shapes(graph.nodes(), s).unwrap().last().unwrap();
    let weights = random_tensor(out_shape, &mut rng);
    let mut wrts = vec![Wrt::Input];
    wrts.extend((0..graph.param_names().len()).map(Wrt::Param));
    let mut o = Outcome {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for wrt in wrts {
        let r = gradient_check(&mut graph, &x, wrt, H, mode, 7, projection_loss(weights.clone())).unwrap();
        o.worst = o.worst.max(r.excess(RTOL));
        o.checked += r.checked;
        o.skipped += r.skipped_kinks;
    }
    o
}

fn check_block(kind: BlockKind, in_ch: usize, out_ch: usize) {
    let block = build_block(&kind, in_ch, out_ch).unwrap();
    let o = check_nodes(block.nodes, in_ch, Mode::Train, 3);
    assert!(o.checked > 0);
    assert!(
        o.worst <= ATOL,
        "{}: error exceeds the relative tolerance by {:.3e}",
        kind.name(),
        o.worst
    );
    assert!(
        o.skipped * 20 < o.checked,
        "{}: {} kinks skipped",
        kind.name(),
        o.skipped
    );
}

#[test]
fn vanilla_block_gradients() {
    check_block(BlockKind::Vanilla, 3, 6);
}

#[test]
fn effnet_block_gradients() {
    check_block(BlockKind::Effnet(EffNetOptions::default()), 3, 12);
}

#[test]
fn effnet_v2_block_gradients() {
    check_block(
        BlockKind::EffnetV2(EffNetV2Options {
            expansion_rate: 2.0,
            ..Default::default()
        }),
        4,
        8,
    );
}

#[test]
fn mobilenet_block_gradients() {
    check_block(BlockKind::Mobilenet { stride: 2 }, 4, 8);
}

#[test]
fn shufflenet_block_gradients() {
    check_block(BlockKind::Shufflenet { groups: 2 }, 4, 8);
}

#[test]
fn mobilenet_v2_linear_tail_gradients() {
    check_block(BlockKind::MobilenetV2(MobileNetV2Options::original(2.0)), 4, 8);
}

#[test]
fn mobilenet_v2_residual_gradients() {
    let opts = MobileNetV2Options {
        stride: 1,
        ..MobileNetV2Options::original(2.0)
    };
    let block = build_block(&BlockKind::MobilenetV2(opts), 4, 4).unwrap();
    assert!(block.nodes.iter().any(|n| n.op == Op::Add));
    check_block(BlockKind::MobilenetV2(opts), 4, 4);
}

#[test]
fn mob_imp_block_gradients() {
    check_block(BlockKind::MobImp(MobileNetV2Options::mob_imp(2.0)), 4, 8);
}

#[test]
fn inference_mode_and_dropout_gradients() {
    // A bias feeding straight into train-mode batch norm has an identically
    // zero gradient, so the nonlinearity sits in between.
    let node = |name: &str, op: Op, input: usize| LayerNode {
        name: name.into(),
        op,
        inputs: vec![input],
        row: None,
    };
    let nodes = vec![
        node("conv", Op::Conv(Conv2d::new(3, 4, (3, 3)).with_bias(true)), 0),
        node("act", Op::Act(Activation::LeakyRelu(0.1)), 1),
        node("pool", Op::MaxPool(PoolParams::window(2, 2)), 2),
        node("bn", Op::BatchNorm { channels: 4 }, 3),
        node("drop", Op::Dropout { p: 0.3 }, 4),
        node(
            "fc",
            Op::Dense {
                in_features: 64,
                out_features: 5,
            },
            5,
        ),
    ];
    for mode in [Mode::Train, Mode::Infer] {
        let o = check_nodes(nodes.clone(), 3, mode, 5);
        assert!(o.worst <= ATOL, "{mode:?}: {:.3e}", o.worst);
    }
}

/// Convolution is bilinear, so its gradients are checked against central
/// differences of the direct-summation oracle.
#[test]
fn conv_backward_matches_oracle_differences() {
    let mut rng = Rng::new(21);
    for (g, s) in [
        (Conv2d::new(4, 6, (3, 3)).groups(2).stride(2, 1), shape(2, 4, 7, 6)),
        (Conv2d::depthwise(3, 2, (1, 3)), shape(1, 3, 5, 5)),
        (
            Conv2d::new(2, 3, (2, 1)).stride(2, 1).padding(Padding::Valid),
            shape(2, 2, 6, 4),
        ),
    ] {
        let x = random_tensor(s, &mut rng);
        let w = random_tensor(g.weight_shape(), &mut rng);
        let gy = random_tensor(g.output_shape(s).unwrap(), &mut rng);
        let grads = conv2d_backward(&x, &g, &w, &gy).unwrap();
        let loss = |x: &Tensor, w: &Tensor| -> f64 {
            conv(x, &g, w, None)
                .data()
                .iter()
                .zip(gy.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += H;
            m.data_mut()[i] -= H;
            let fd = (loss(&p, &w) - loss(&m, &w)) / (2.0 * H);
            assert!((fd - grads.input.data()[i]).abs() < 1e-8);
        }
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.data_mut()[i] += H;
            m.data_mut()[i] -= H;
            let fd = (loss(&x, &p) - loss(&x, &m)) / (2.0 * H);
            assert!((fd - grads.weight.data()[i]).abs() < 1e-8);
        }
        // forward agrees with the oracle as well
        assert!(max_abs_diff(conv2d(&x, &g, &w, None).unwrap().data(), conv(&x, &g, &w, None).data()) < 1e-12);
    }
}
