use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch-norm state. Running statistics follow
/// `running = momentum * running + (1 - momentum) * batch`, using the biased
/// batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BnParams {
    pub fn new(channels: usize) -> BnParams {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

pub fn batch_norm(input: &Tensor, p: &mut BnParams, mode: Mode) -> Result<(Tensor, BnCache)> {
    let s = input.shape();
    let c = s.channels;
    if [p.beta.len(), p.running_mean.len(), p.running_var.len(), p.gamma.len()]
        .iter()
        .any(|&l| l != c)
    {
        return Err(Error::Shape(format!(
            "batch norm has {} channels, input has {c}",
            p.channels()
        )));
    }
    let count = (s.batch * s.plane()) as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for n in 0..s.batch {
                    sum += input.plane(n, ch).iter().sum::<f64>();
                }
                let m = sum / count;
                let mut sq = 0.0;
                for n in 0..s.batch {
                    sq += input.plane(n, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = sq / count;
            }
            for ch in 0..c {
                p.running_mean[ch] = p.momentum * p.running_mean[ch] + (1.0 - p.momentum) * mean[ch];
                p.running_var[ch] = p.momentum * p.running_var[ch] + (1.0 - p.momentum) * var[ch];
            }
            (mean, var)
        }
        Mode::Infer => (p.running_mean.clone(), p.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.epsilon).sqrt()).collect();

    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for (i, ((xn, o), x)) in normalized
        .data_mut()
        .chunks_mut(plane)
        .zip(out.data_mut().chunks_mut(plane))
        .zip(input.data().chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        for ((a, b), &v) in xn.iter_mut().zip(o.iter_mut()).zip(x) {
            *a = (v - mean[ch]) * inv_std[ch];
            *b = p.gamma[ch] * *a + p.beta[ch];
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batch_norm_backward(grad_out: &Tensor, cache: &BnCache, gamma: &[f64]) -> Result<BnGrads> {
    let s = grad_out.shape();
    if cache.normalized.shape() != s {
        return Err(Error::Shape("batch norm backward: shape mismatch".into()));
    }
    let c = s.channels;
    let count = (s.batch * s.plane()) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..s.batch {
        for ch in 0..c {
            for (&dy, &xh) in grad_out.plane(n, ch).iter().zip(cache.normalized.plane(n, ch)) {
                dgamma[ch] += dy * xh;
                dbeta[ch] += dy;
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    let plane = s.plane();
    for (i, d) in dx.data_mut().chunks_mut(plane).enumerate() {
        let (n, ch) = (i / c, i % c);
        let scale = gamma[ch] * cache.inv_std[ch];
        let dy = grad_out.plane(n, ch);
        let xh = cache.normalized.plane(n, ch);
        match cache.mode {
            Mode::Infer => {
                for (o, &g) in d.iter_mut().zip(dy) {
                    *o = scale * g;
                }
            }
            Mode::Train => {
                let mean_dy = dbeta[ch] / count;
                let mean_dy_xh = dgamma[ch] / count;
                for ((o, &g), &x) in d.iter_mut().zip(dy).zip(xh) {
                    *o = scale * (g - mean_dy - x * mean_dy_xh);
                }
            }
        }
    }
    Ok(BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
