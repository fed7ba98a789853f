use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Shape4, Tensor};

/// Max-pooling window. `1x2` means one row by two columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PoolParams {
    /// Window equal to its stride.
    pub fn window(kernel_h: usize, kernel_w: usize) -> PoolParams {
        PoolParams {
            kernel_h,
            kernel_w,
            stride_h: kernel_h,
            stride_w: kernel_w,
        }
    }

    /// Windows must tile the input exactly; leftover rows or columns are an
    /// error rather than being padded or dropped.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Param(format!("zero extent in {self:?}")));
        }
        let fit =
            |size: usize, k: usize, s: usize| (k <= size && (size - k).is_multiple_of(s)).then(|| (size - k) / s + 1);
        match (
            fit(input.height, self.kernel_h, self.stride_h),
            fit(input.width, self.kernel_w, self.stride_w),
        ) {
            (Some(h), Some(w)) => Ok(Shape4 {
                height: h,
                width: w,
                ..input
            }),
            _ => Err(Error::Shape(format!(
                "{}x{} pool with stride ({}, {}) does not tile {}x{} input",
                self.kernel_h, self.kernel_w, self.stride_h, self.stride_w, input.height, input.width
            ))),
        }
    }
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum (first in row-major window order on ties).
pub fn max_pool2d_with_argmax(input: &Tensor, p: &PoolParams) -> Result<(Tensor, Vec<usize>)> {
    let in_shape = input.shape();
    let out_shape = p.output_shape(in_shape)?;
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let planes = in_shape.batch * in_shape.channels;

    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0usize; out_shape.len()];
    let mut pairs: Vec<(f64, usize)> = vec![(0.0, 0); out_shape.len()];
    parallel::for_each_chunk(&mut pairs, oh * ow, |plane, dst| {
        let base = plane * h * w;
        let src = &input.data()[base..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for ky in 0..p.kernel_h {
                    let iy = oy * p.stride_h + ky;
                    for kx in 0..p.kernel_w {
                        let ix = ox * p.stride_w + kx;
                        let v = src[iy * w + ix];
                        if best.1 == usize::MAX || v > best.0 {
                            best = (v, base + iy * w + ix);
                        }
                    }
                }
                dst[oy * ow + ox] = best;
            }
        }
    });
    debug_assert_eq!(pairs.len(), planes * oh * ow);
    for ((o, a), (v, i)) in out.data_mut().iter_mut().zip(arg.iter_mut()).zip(pairs) {
        *o = v;
        *a = i;
    }
    Ok((out, arg))
}

pub fn max_pool2d(input: &Tensor, p: &PoolParams) -> Result<Tensor> {
    max_pool2d_with_argmax(input, p).map(|(t, _)| t)
}

/// Routes each output gradient to its recorded argmax.
pub fn max_pool2d_backward(input_shape: Shape4, argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "pool backward: {} argmax entries for {} gradients",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &d) in argmax.iter().zip(grad_out.data()) {
        g[i] += d;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::create(shape(1, 2, 4, 4), Fill::Constant(2.5)).unwrap();
        let y = max_pool2d(&x, &PoolParams::window(2, 2)).unwrap();
        assert_eq!(y.shape(), shape(1, 2, 2, 2));
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn table_shapes() {
        let x = Tensor::zeros(shape(1, 64, 32, 32));
        let y = max_pool2d(&x, &PoolParams::window(2, 2)).unwrap();
        assert_eq!(y.shape(), shape(1, 64, 16, 16));
        assert_eq!(y.floats_out(), 16384);
        let y = max_pool2d(&x, &PoolParams::window(1, 2)).unwrap();
        assert_eq!(y.shape(), shape(1, 64, 32, 16));
        let y = max_pool2d(&x, &PoolParams::window(2, 1)).unwrap();
        assert_eq!(y.shape(), shape(1, 64, 16, 32));
    }

    #[test]
    fn ties_go_to_first_element() {
        let x = Tensor::from_vec(shape(1, 1, 2, 2), vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (y, arg) = max_pool2d_with_argmax(&x, &PoolParams::window(2, 2)).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![1]);
        let g = max_pool2d_backward(x.shape(), &arg, &Tensor::from_vec(y.shape(), vec![5.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn partial_windows_rejected() {
        let x = Tensor::zeros(shape(1, 1, 3, 4));
        assert!(matches!(
            max_pool2d(&x, &PoolParams::window(2, 2)),
            Err(Error::Shape(_))
        ));
        let x = Tensor::zeros(shape(1, 1, 1, 4));
        assert!(matches!(
            max_pool2d(&x, &PoolParams::window(2, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn unit_window_is_identity() {
        let x = Tensor::from_vec(shape(1, 1, 2, 3), vec![1.0, -2.0, 3.0, 0.5, 9.0, -1.0]).unwrap();
        let p = PoolParams::window(1, 1);
        let y = max_pool2d(&x, &p).unwrap();
        assert_eq!(y, x);
        assert_eq!(max_pool2d(&y, &p).unwrap(), y);
    }
}
