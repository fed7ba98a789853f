use super::gemm::{gemm, MatRef};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Affine map over the flattened per-sample input. `weight` is `[in, out]`
/// stored as shape `(in, out, 1, 1)`; the output has shape `(N, out, 1, 1)`.
/// Also returns the multiply-accumulate count.
pub fn fully_connected_counted(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<(Tensor, u64)> {
    let s = input.shape();
    let w = weight.shape();
    let (fan_in, fan_out) = (w.batch, w.channels);
    if w.plane() != 1 || s.floats_out() != fan_in || bias.len() != fan_out {
        return Err(Error::Shape(format!(
            "fully connected: input {s} ({} features), weight {w}, bias {}",
            s.floats_out(),
            bias.len()
        )));
    }
    let out_shape = Shape4::new(s.batch, fan_out, 1, 1)?;
    let mut data: Vec<f64> = bias.iter().copied().cycle().take(s.batch * fan_out).collect();
    gemm(
        s.batch,
        fan_in,
        fan_out,
        MatRef::row_major(input.data(), fan_in),
        MatRef::row_major(weight.data(), fan_out),
        1.0,
        &mut data,
    );
    Ok((Tensor::from_vec(out_shape, data)?, (s.batch * fan_in * fan_out) as u64))
}

pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    fully_connected_counted(input, weight, bias).map(|(t, _)| t)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

pub fn fully_connected_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let s = input.shape();
    let (fan_in, fan_out) = (weight.shape().batch, weight.shape().channels);
    if grad_out.len() != s.batch * fan_out {
        return Err(Error::Shape("fully connected backward: gradient size mismatch".into()));
    }
    let mut dx = Tensor::zeros(s);
    gemm(
        s.batch,
        fan_out,
        fan_in,
        MatRef::row_major(grad_out.data(), fan_out),
        MatRef::transposed(weight.data(), fan_out),
        0.0,
        dx.data_mut(),
    );
    let mut dw = Tensor::zeros(weight.shape());
    gemm(
        fan_in,
        s.batch,
        fan_out,
        MatRef::transposed(input.data(), fan_in),
        MatRef::row_major(grad_out.data(), fan_out),
        0.0,
        dw.data_mut(),
    );
    let mut db = vec![0.0; fan_out];
    for row in grad_out.data().chunks(fan_out) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(DenseGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
