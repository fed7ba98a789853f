use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Linear => x,
        }
    }

    /// Derivative at `x`; the ReLU subgradient at zero is taken as 0 and the
    /// leaky slope applies only for `x < 0`.
    #[inline]
    pub fn slope(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn is_piecewise(self) -> bool {
        !matches!(self, Activation::Linear)
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    let mut out = input.clone();
    if kind != Activation::Linear {
        out.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
    }
    out
}

pub fn activation_backward(input: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(input.data())
        .for_each(|(d, &x)| *d *= kind.slope(x));
    g
}
