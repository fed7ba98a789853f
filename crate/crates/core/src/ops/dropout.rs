use crate::error::{Error, Result};
use crate::ops::norm::Mode;
use crate::tensor::{Rng, Tensor};

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p_drop` and survivors are scaled by `1 / (1 - p_drop)`; the returned mask
/// holds the per-element multiplier. Infer mode is the identity.
pub fn dropout(input: &Tensor, p_drop: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Param(format!("drop probability {p_drop} outside [0, 1)")));
    }
    if mode == Mode::Infer || p_drop == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - p_drop);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.next_f64() < p_drop { 0.0 } else { keep })
        .collect();
    let mut out = input.clone();
    out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((out, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    g
}
