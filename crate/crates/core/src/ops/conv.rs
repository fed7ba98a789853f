//! Grouped 2-D convolution lowered to im2col + GEMM.
//!
//! Every sample and group gets its own column matrix `[K, P]` with
//! `K = (in_channels / groups) * kernel_h * kernel_w` and `P = out_h * out_w`.
//! Padded taps are materialised as zeros, so the GEMM performs exactly
//! `P * K * out_channels_per_group` multiply-accumulates per group, which is
//! the number reported back to callers for cost instrumentation.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, MatRef};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Shape4, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding; output extent is `ceil(in / stride)`. Odd totals put the
    /// extra row/column at the bottom/right.
    Same,
    /// No padding; output extent is `floor((in - kernel) / stride) + 1`.
    Valid,
}

/// Convolution geometry. Weights are `[out_channels, in_channels / groups, kernel_h, kernel_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
    pub groups: usize,
    pub bias: bool,
}

/// Resolved output extents and leading padding for one input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvPlan {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Conv2d {
        Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: 1,
            stride_w: 1,
            padding: Padding::Same,
            groups: 1,
            bias: false,
        }
    }

    /// Depthwise form: one group per input channel, `multiplier` outputs each.
    pub fn depthwise(channels: usize, multiplier: usize, kernel: (usize, usize)) -> Conv2d {
        Conv2d {
            groups: channels,
            ..Conv2d::new(channels, channels * multiplier, kernel)
        }
    }

    pub fn stride(mut self, h: usize, w: usize) -> Self {
        self.stride_h = h;
        self.stride_w = w;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.out_channels.is_multiple_of(self.in_channels)
    }

    pub fn depth_multiplier(&self) -> usize {
        self.out_channels / self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Param(format!("zero channel count in {self:?}")));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Param(format!("zero kernel or stride in {self:?}")));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::Param(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Length of one im2col column (the reduction depth of the GEMM).
    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel_h * self.kernel_w
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4 {
            batch: self.out_channels,
            channels: self.in_per_group(),
            height: self.kernel_h,
            width: self.kernel_w,
        }
    }

    pub fn plan(&self, height: usize, width: usize) -> Result<ConvPlan> {
        self.validate()?;
        let (out_h, pad_top) =
            extent(height, self.kernel_h, self.stride_h, self.padding).ok_or_else(|| self.too_small(height, width))?;
        let (out_w, pad_left) =
            extent(width, self.kernel_w, self.stride_w, self.padding).ok_or_else(|| self.too_small(height, width))?;
        Ok(ConvPlan {
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let plan = self.plan(input.height, input.width)?;
        Ok(Shape4 {
            batch: input.batch,
            channels: self.out_channels,
            height: plan.out_h,
            width: plan.out_w,
        })
    }

    fn too_small(&self, h: usize, w: usize) -> Error {
        Error::Shape(format!(
            "{}x{} kernel with stride ({}, {}) leaves no output for {h}x{w} input",
            self.kernel_h, self.kernel_w, self.stride_h, self.stride_w
        ))
    }
}

fn extent(size: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > size {
                return None;
            }
            Some(((size - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(size);
            Some((out, total / 2))
        }
    }
}

/// Fills `cols` (`[K, P]`, row-major) for one sample and group.
fn im2col(input: &[f64], h: usize, w: usize, geom: &Conv2d, plan: &ConvPlan, first_channel: usize, cols: &mut [f64]) {
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let p = plan.out_h * plan.out_w;
    for icl in 0..geom.in_per_group() {
        let src = &input[(first_channel + icl) * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((icl * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..plan.out_h {
                    let dst = &mut row[oy * plan.out_w..][..plan.out_w];
                    let iy = (oy * geom.stride_h + ky) as isize - plan.pad_top as isize;
                    if iy < 0 || iy as usize >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * geom.stride_w + kx) as isize - plan.pad_left as isize;
                        *d = if ix < 0 || ix as usize >= w {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input-gradient planes of one group.
fn col2im(cols: &[f64], h: usize, w: usize, geom: &Conv2d, plan: &ConvPlan, first_channel: usize, grad: &mut [f64]) {
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let p = plan.out_h * plan.out_w;
    for icl in 0..geom.in_per_group() {
        let dst = &mut grad[(first_channel + icl) * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((icl * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..plan.out_h {
                    let iy = (oy * geom.stride_h + ky) as isize - plan.pad_top as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..][..w];
                    for (ox, &v) in row[oy * plan.out_w..][..plan.out_w].iter().enumerate() {
                        let ix = (ox * geom.stride_w + kx) as isize - plan.pad_left as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Index range of output columns whose tap `kx` lands inside a row of `w`.
fn valid_cols(out_w: usize, w: usize, stride: usize, kx: usize, pad: usize) -> std::ops::Range<usize> {
    // ox * stride + kx - pad in [0, w)
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    let hi = if w + pad > kx {
        (w + pad - kx).div_ceil(stride).min(out_w)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Direct depthwise forward for one sample. Small per-channel kernels do not
/// amortize a GEMM call, so the taps are applied in place.
fn depthwise_forward(x: &[f64], h: usize, w: usize, geom: &Conv2d, plan: &ConvPlan, weight: &[f64], out: &mut [f64]) {
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let m = geom.out_per_group();
    let p = plan.out_h * plan.out_w;
    for (oc, dst) in out.chunks_mut(p).enumerate() {
        let src = &x[(oc / m) * h * w..][..h * w];
        let taps = &weight[oc * kh * kw..][..kh * kw];
        dst.fill(0.0);
        for ky in 0..kh {
            for kx in 0..kw {
                let t = taps[ky * kw + kx];
                let cols = valid_cols(plan.out_w, w, geom.stride_w, kx, plan.pad_left);
                for oy in 0..plan.out_h {
                    let iy = (oy * geom.stride_h + ky) as isize - plan.pad_top as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let row = &src[iy as usize * w..][..w];
                    let d = &mut dst[oy * plan.out_w..][..plan.out_w];
                    for ox in cols.clone() {
                        d[ox] += t * row[ox * geom.stride_w + kx - plan.pad_left];
                    }
                }
            }
        }
    }
}

/// Direct depthwise backward for one sample, accumulating into `dw` and `dx`.
#[allow(clippy::too_many_arguments)]
fn depthwise_backward(
    x: &[f64],
    dy: &[f64],
    h: usize,
    w: usize,
    geom: &Conv2d,
    plan: &ConvPlan,
    weight: &[f64],
    dw: &mut [f64],
    dx: &mut [f64],
) {
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let m = geom.out_per_group();
    let p = plan.out_h * plan.out_w;
    for (oc, g) in dy.chunks(p).enumerate() {
        let c = oc / m;
        let src = &x[c * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let t = weight[(oc * kh + ky) * kw + kx];
                let cols = valid_cols(plan.out_w, w, geom.stride_w, kx, plan.pad_left);
                let mut acc = 0.0;
                for oy in 0..plan.out_h {
                    let iy = (oy * geom.stride_h + ky) as isize - plan.pad_top as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let iy = iy as usize;
                    let gr = &g[oy * plan.out_w..][..plan.out_w];
                    for ox in cols.clone() {
                        let ix = ox * geom.stride_w + kx - plan.pad_left;
                        acc += gr[ox] * src[iy * w + ix];
                        dx[c * h * w + iy * w + ix] += t * gr[ox];
                    }
                }
                dw[(oc * kh + ky) * kw + kx] = acc;
            }
        }
    }
}

fn check_params(input: Shape4, geom: &Conv2d, weight: &Tensor, bias: Option<&[f64]>) -> Result<Shape4> {
    let out = geom.output_shape(input)?;
    if weight.shape() != geom.weight_shape() {
        return Err(Error::Shape(format!(
            "conv weight has shape {}, expected {}",
            weight.shape(),
            geom.weight_shape()
        )));
    }
    match bias {
        Some(b) if b.len() != geom.out_channels => Err(Error::Shape(format!(
            "conv bias has {} entries, expected {}",
            b.len(),
            geom.out_channels
        ))),
        _ => Ok(out),
    }
}

/// Forward convolution. Returns the output and the number of
/// multiply-accumulates executed by the GEMMs.
pub fn conv2d_counted(input: &Tensor, geom: &Conv2d, weight: &Tensor, bias: Option<&[f64]>) -> Result<(Tensor, u64)> {
    let in_shape = input.shape();
    let out_shape = check_params(in_shape, geom, weight, bias)?;
    let plan = geom.plan(in_shape.height, in_shape.width)?;
    let (h, w) = (in_shape.height, in_shape.width);
    let p = plan.out_h * plan.out_w;
    let k = geom.fan_in();
    let ocg = geom.out_per_group();
    let per_in = in_shape.floats_out();

    let mut out = Tensor::zeros(out_shape);
    parallel::for_each_chunk(out.data_mut(), out_shape.floats_out(), |n, out_n| {
        let x = &input.data()[n * per_in..][..per_in];
        if geom.is_depthwise() {
            depthwise_forward(x, h, w, geom, &plan, weight.data(), out_n);
        } else {
            let mut cols = vec![0.0; k * p];
            for g in 0..geom.groups {
                im2col(x, h, w, geom, &plan, g * geom.in_per_group(), &mut cols);
                let wg = &weight.data()[g * ocg * k..][..ocg * k];
                gemm(
                    ocg,
                    k,
                    p,
                    MatRef::row_major(wg, k),
                    MatRef::row_major(&cols, p),
                    0.0,
                    &mut out_n[g * ocg * p..][..ocg * p],
                );
            }
        }
        if let Some(b) = bias {
            for (oc, plane) in out_n.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
    });
    let macs = (in_shape.batch * geom.groups * ocg * k * p) as u64;
    Ok((out, macs))
}

pub fn conv2d(input: &Tensor, geom: &Conv2d, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    conv2d_counted(input, geom, weight, bias).map(|(t, _)| t)
}

/// Depthwise convolution: `geom` must have `groups == in_channels`; output
/// channel `c * m + k` is computed from input channel `c` only.
pub fn depthwise_conv2d(input: &Tensor, geom: &Conv2d, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    if !geom.is_depthwise() {
        return Err(Error::Param(format!(
            "not a depthwise geometry: {} groups for {}->{} channels",
            geom.groups, geom.in_channels, geom.out_channels
        )));
    }
    conv2d(input, geom, weight, bias)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

pub fn conv2d_backward(input: &Tensor, geom: &Conv2d, weight: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let in_shape = input.shape();
    let out_shape = check_params(in_shape, geom, weight, None)?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv output gradient has shape {}, expected {out_shape}",
            grad_out.shape()
        )));
    }
    let plan = geom.plan(in_shape.height, in_shape.width)?;
    let (h, w) = (in_shape.height, in_shape.width);
    let p = plan.out_h * plan.out_w;
    let k = geom.fan_in();
    let ocg = geom.out_per_group();
    let per_in = in_shape.floats_out();
    let per_out = out_shape.floats_out();
    let wlen = weight.len();

    // Per-sample partials, reduced below in sample order.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = parallel::map_range(in_shape.batch, |n| {
        let x = &input.data()[n * per_in..][..per_in];
        let dy = &grad_out.data()[n * per_out..][..per_out];
        let mut dw = vec![0.0; wlen];
        let mut dx = vec![0.0; per_in];
        if geom.is_depthwise() {
            depthwise_backward(x, dy, h, w, geom, &plan, weight.data(), &mut dw, &mut dx);
            return (dw, dx);
        }
        let mut cols = vec![0.0; k * p];
        let mut dcols = vec![0.0; k * p];
        for g in 0..geom.groups {
            let first = g * geom.in_per_group();
            im2col(x, h, w, geom, &plan, first, &mut cols);
            let dy_g = &dy[g * ocg * p..][..ocg * p];
            let wg = &weight.data()[g * ocg * k..][..ocg * k];
            // dW_g = dY_g [ocg, P] * cols^T [P, K]
            gemm(
                ocg,
                p,
                k,
                MatRef::row_major(dy_g, p),
                MatRef::transposed(&cols, p),
                0.0,
                &mut dw[g * ocg * k..][..ocg * k],
            );
            // dcols = W_g^T [K, ocg] * dY_g [ocg, P]
            gemm(
                k,
                ocg,
                p,
                MatRef::transposed(wg, k),
                MatRef::row_major(dy_g, p),
                0.0,
                &mut dcols,
            );
            col2im(&dcols, h, w, geom, &plan, first, &mut dx);
        }
        (dw, dx)
    });

    let mut grad_w = Tensor::zeros(geom.weight_shape());
    let mut grad_x = Vec::with_capacity(input.len());
    for (dw, dx) in partials {
        grad_w.data_mut().iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        grad_x.extend_from_slice(&dx);
    }
    let bias = geom.bias.then(|| {
        let mut gb = vec![0.0; geom.out_channels];
        for n in 0..out_shape.batch {
            for (oc, g) in gb.iter_mut().enumerate() {
                *g += grad_out.plane(n, oc).iter().sum::<f64>();
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: Tensor::from_vec(in_shape, grad_x)?,
        weight: grad_w,
        bias,
    })
}
