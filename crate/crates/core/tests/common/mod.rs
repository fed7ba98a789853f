//! Direct-summation reference implementations, written from the operator
//! definitions without sharing code with the library kernels.
#![allow(dead_code)]

use effnet::ops::{Activation, Conv2d, Padding, PoolParams};
use effnet::{Rng, Shape4, Tensor};

pub fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Random grouped convolution on an input no larger than (2, 8, 16, 16).
pub fn random_conv(rng: &mut Rng) -> (Conv2d, Shape4) {
    let groups = [1, 1, 2, 4][rng.below(4)];
    let icg = pick(rng, 1, 8 / groups);
    let ocg = pick(rng, 1, 3);
    let h = pick(rng, 3, 16);
    let w = pick(rng, 3, 16);
    let padding = if rng.below(2) == 0 {
        Padding::Same
    } else {
        Padding::Valid
    };
    let g = Conv2d::new(icg * groups, ocg * groups, (pick(rng, 1, 3), pick(rng, 1, 3)))
        .groups(groups)
        .stride(pick(rng, 1, 2), pick(rng, 1, 2))
        .padding(padding)
        .with_bias(rng.below(2) == 0);
    (g, shape(pick(rng, 1, 2), icg * groups, h, w))
}

pub fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
    Shape4::new(n, c, h, w).unwrap()
}

pub fn random_tensor(s: Shape4, rng: &mut Rng) -> Tensor {
    let data = (0..s.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_vec(s, data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Output size and leading pad along one axis.
pub fn axis(size: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((size - k) / s + 1, 0),
        Padding::Same => {
            let out = size.div_ceil(s);
            let needed = (out - 1) * s + k;
            let total = needed.saturating_sub(size);
            (out, total / 2)
        }
    }
}

pub fn conv(x: &Tensor, g: &Conv2d, w: &Tensor, bias: Option<&[f64]>) -> Tensor {
    let s = x.shape();
    let (oh, pt) = axis(s.height, g.kernel_h, g.stride_h, g.padding);
    let (ow, pl) = axis(s.width, g.kernel_w, g.stride_w, g.padding);
    let icg = g.in_channels / g.groups;
    let ocg = g.out_channels / g.groups;
    let mut out = vec![0.0; s.batch * g.out_channels * oh * ow];
    for n in 0..s.batch {
        for oc in 0..g.out_channels {
            let grp = oc / ocg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for ic in 0..icg {
                        for ky in 0..g.kernel_h {
                            for kx in 0..g.kernel_w {
                                let iy = (oy * g.stride_h + ky) as isize - pt as isize;
                                let ix = (ox * g.stride_w + kx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                    continue;
                                }
                                let xv = x.at(n, grp * icg + ic, iy as usize, ix as usize);
                                acc += xv * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out[((n * g.out_channels + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(shape(s.batch, g.out_channels, oh, ow), out).unwrap()
}

/// Window maxima and flat argmax indices (first maximum in row-major order).
pub fn max_pool(x: &Tensor, p: &PoolParams) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let oh = (s.height - p.kernel_h) / p.stride_h + 1;
    let ow = (s.width - p.kernel_w) / p.stride_w + 1;
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for n in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for ky in 0..p.kernel_h {
                        for kx in 0..p.kernel_w {
                            let (y, xx) = (oy * p.stride_h + ky, ox * p.stride_w + kx);
                            let v = x.at(n, c, y, xx);
                            if v > best {
                                best = v;
                                at = s.index(n, c, y, xx);
                            }
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
    }
    (Tensor::from_vec(shape(s.batch, s.channels, oh, ow), out).unwrap(), arg)
}

/// Two-pass batch statistics (biased variance) per channel.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let count = (s.batch * s.height * s.width) as f64;
    let mut mean = vec![0.0; s.channels];
    let mut var = vec![0.0; s.channels];
    for c in 0..s.channels {
        let mut sum = 0.0;
        for n in 0..s.batch {
            for y in 0..s.height {
                for xx in 0..s.width {
                    sum += x.at(n, c, y, xx);
                }
            }
        }
        let m = sum / count;
        let mut sq = 0.0;
        for n in 0..s.batch {
            for y in 0..s.height {
                for xx in 0..s.width {
                    sq += (x.at(n, c, y, xx) - m).powi(2);
                }
            }
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}

pub fn batch_norm(x: &Tensor, mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let s = x.shape();
    let mut out = x.clone();
    for n in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..s.height {
                for xx in 0..s.width {
                    let v = x.at(n, c, y, xx);
                    out.data_mut()[s.index(n, c, y, xx)] = gamma[c] * (v - mean[c]) / (var[c] + eps).sqrt() + beta[c];
                }
            }
        }
    }
    out
}

/// `y[n, o] = b[o] + sum_i x[n, i] * w[i, o]` with `w` laid out `(in, out, 1, 1)`.
pub fn dense(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
    let s = x.shape();
    let fin = s.floats_out();
    let fout = b.len();
    let mut out = vec![0.0; s.batch * fout];
    for n in 0..s.batch {
        for o in 0..fout {
            let mut acc = b[o];
            for i in 0..fin {
                acc += x.data()[n * fin + i] * w.data()[i * fout + o];
            }
            out[n * fout + o] = acc;
        }
    }
    Tensor::from_vec(shape(s.batch, fout, 1, 1), out).unwrap()
}

/// Reshape channels to `(groups, C / groups)`, transpose, flatten.
pub fn shuffle(x: &Tensor, groups: usize) -> Tensor {
    let s = x.shape();
    let per = s.channels / groups;
    let mut out = x.clone();
    for n in 0..s.batch {
        for i in 0..per {
            for g in 0..groups {
                let src = g * per + i;
                let dst = i * groups + g;
                for y in 0..s.height {
                    for xx in 0..s.width {
                        out.data_mut()[s.index(n, dst, y, xx)] = x.at(n, src, y, xx);
                    }
                }
            }
        }
    }
    out
}

pub fn act(x: &Tensor, a: Activation) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = match a {
            Activation::Relu => {
                if *v > 0.0 {
                    *v
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if *v >= 0.0 {
                    *v
                } else {
                    alpha * *v
                }
            }
            Activation::Linear => *v,
        };
    }
    out
}

/// Mean cross-entropy with a max-shifted log-sum-exp per row.
pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.chunks(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

/// Moves every batch-norm scale and shift away from its initial value. At
/// `gamma = 1, beta = 0` a ReLU followed by a per-channel layer and another
/// train-mode batch norm is scale invariant, so the true gamma gradient is
/// nearly zero and a relative-error check only measures rounding noise.
pub fn randomize_bn(graph: &mut effnet::autograd::ComputeGraph, rng: &mut Rng) {
    for p in graph.node_params_mut() {
        if let effnet::autograd::NodeParams::Bn(bn) = p {
            bn.gamma.iter_mut().for_each(|g| *g = rng.uniform(0.5, 1.5));
            bn.beta.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
        }
    }
}

pub fn spec_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("specs")
        .join(format!("{name}.toml"))
}

pub fn load_model(name: &str) -> effnet::blocks::ModelSpec {
    effnet::cli::load_spec(&spec_path(name)).unwrap().model
}

pub const BUNDLED_SPECS: [&str; 11] = [
    "cifar10_baseline",
    "cifar10_effnet",
    "cifar10_mobilenet",
    "cifar10_shufflenet",
    "effnet_v2_er2",
    "effnet_v2_er4",
    "effnet_v2_er6",
    "mob_imp_er6",
    "mobilenet_v2_er2",
    "mobilenet_v2_er4",
    "mobilenet_v2_er6",
];

/// One data-flow cell: layer label, floats out, marked as a 4x compression.
pub type FlowCell = (&'static str, u64, bool);

/// The data-flow table of the four Cifar10 models, transcribed cell by cell.
pub const DATA_FLOW_TABLE: [(&str, &[FlowCell]); 4] = [
    (
        "cifar10_baseline",
        &[
            ("3x3x64 + mp", 16384, false),
            ("3x3x128 + mp", 8192, false),
            ("3x3x256 + mp", 4096, false),
            ("Fully Connected", 10, true),
        ],
    ),
    (
        "cifar10_mobilenet",
        &[
            ("3x3x64 + mp", 16384, false),
            ("dw 3x3 + stride", 4096, true),
            ("1x1x128", 8192, false),
            ("dw 3x3 + stride", 2048, true),
            ("1x1x256", 4096, false),
            ("Fully Connected", 10, true),
        ],
    ),
    (
        "cifar10_shufflenet",
        &[
            ("3x3x64 + mp", 16384, false),
            ("gc4 1x1x32", 8192, false),
            ("dw 3x3 + stride", 2048, true),
            ("gc4 1x1x128", 8192, false),
            ("gc4 1x1x64", 4096, false),
            ("dw 3x3 + stride", 1024, true),
            ("gc4 1x1x256", 4096, false),
            ("Fully Connected", 10, true),
        ],
    ),
    (
        "cifar10_effnet",
        &[
            ("1x1x32", 32768, false),
            ("dw 1x3 + 1d mp", 16384, false),
            ("dw 3x1", 16384, false),
            ("2x1x64 + 1d stride", 16384, false),
            ("1x1x64", 16384, false),
            ("dw 1x3 + 1d mp", 8192, false),
            ("dw 3x1", 8192, false),
            ("2x1x128 + 1d stride", 8192, false),
            ("1x1x128", 8192, false),
            ("dw 1x3 + 1d mp", 4096, false),
            ("dw 3x1", 4096, false),
            ("2x1x256 + 1d stride", 4096, false),
            ("Fully Connected", 10, true),
        ],
    ),
];

/// Reference totals in millions of FLOPs, relative tolerance, and factor.
pub const FLOP_TABLE: [(&str, f64, f64, f64); 4] = [
    ("cifar10_baseline", 80.3, 0.03, 1.00),
    ("cifar10_effnet", 11.4, 0.03, 0.14),
    ("cifar10_mobilenet", 5.8, 0.03, 0.07),
    ("cifar10_shufflenet", 4.7, 0.08, 0.06),
];
