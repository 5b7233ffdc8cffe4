use super::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Gradients of a 2-d convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Output spatial size of a convolution along one axis.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    if kernel > input + 2 * pad {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {}",
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        input.expect_rank(3, "conv2d input")?;
        weights.expect_rank(4, "conv2d weights")?;
        let (channels, height, width) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (filters, wc, kh, kw) = (
            weights.shape()[0],
            weights.shape()[1],
            weights.shape()[2],
            weights.shape()[3],
        );
        if wc != channels {
            return Err(Error::Shape(format!(
                "conv2d: weights expect {wc} input channels, input has {channels}"
            )));
        }
        let out_h = conv2d_output_size(height, kh, stride, pad)?;
        let out_w = conv2d_output_size(width, kw, stride, pad)?;
        Ok(Self {
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            out_h,
            out_w,
            stride,
            pad,
        })
    }

    /// Input row touched by output row `oy` at kernel row `ky`, if in bounds.
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.height).then_some(iy as usize)
    }

    /// Half-open range of output columns whose input column `ox*stride+kx-pad`
    /// is in bounds.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(s)
        } else {
            0
        };
        // largest ox with ox*s + kx - pad <= width - 1
        let top = self.width + self.pad;
        let hi = if top > kx {
            ((top - kx - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn input_col(&self, ox: usize, kx: usize) -> usize {
        ox * self.stride + kx - self.pad
    }
}

/// Cross-correlation of a `[C,H,W]` input with `[F,C,kh,kw]` filters plus a
/// per-filter bias.
///
/// Every output element is accumulated over `(c, ky, kx)` in lexicographic
/// order starting from zero, skipping padded positions, and the bias is added
/// last.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = Geometry::new(input, weights, stride, pad)?;
    if bias.shape() != [g.filters] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?}, expected [{}]",
            bias.shape(),
            g.filters
        )));
    }
    let mut out = Tensor::zeros(&[g.filters, g.out_h, g.out_w]);
    let x = input.data();
    let w = weights.data();
    let plane = g.height * g.width;
    let ksize = g.kh * g.kw;
    let col_ranges: Vec<_> = (0..g.kw).map(|kx| g.col_range(kx)).collect();

    for (f, out_plane) in out.data_mut().chunks_exact_mut(g.out_h * g.out_w).enumerate() {
        for (oy, out_row) in out_plane.chunks_exact_mut(g.out_w).enumerate() {
            for c in 0..g.channels {
                let w_fc = &w[(f * g.channels + c) * ksize..][..ksize];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let in_row = &x[c * plane + iy * g.width..][..g.width];
                    for (kx, &(lo, hi)) in col_ranges.iter().enumerate() {
                        let wv = w_fc[ky * g.kw + kx];
                        if lo >= hi {
                            continue;
                        }
                        if g.stride == 1 {
                            let start = lo + kx - g.pad;
                            axpy(&mut out_row[lo..hi], wv, &in_row[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                out_row[ox] += wv * in_row[g.input_col(ox, kx)];
                            }
                        }
                    }
                }
            }
            let b = bias.data()[f];
            out_row.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Gradients of the loss with respect to the filters and biases only.
pub fn conv2d_weight_grads(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = Geometry::new(input, weights, stride, pad)?;
    check_grad_out(grad_out, &g)?;
    let x = input.data();
    let go = grad_out.data();
    let plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let ksize = g.kh * g.kw;
    let col_ranges: Vec<_> = (0..g.kw).map(|kx| g.col_range(kx)).collect();

    let mut grad_w = Tensor::zeros(weights.shape());
    let gw = grad_w.data_mut();
    let mut grad_b = Tensor::zeros(&[g.filters]);
    for f in 0..g.filters {
        let go_f = &go[f * out_plane..][..out_plane];
        grad_b.data_mut()[f] = go_f.iter().sum();
        for c in 0..g.channels {
            let gw_fc = &mut gw[(f * g.channels + c) * ksize..][..ksize];
            for oy in 0..g.out_h {
                let go_row = &go_f[oy * g.out_w..][..g.out_w];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let in_row = &x[c * plane + iy * g.width..][..g.width];
                    for (kx, &(lo, hi)) in col_ranges.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let acc = if g.stride == 1 {
                            let start = lo + kx - g.pad;
                            dot(&go_row[lo..hi], &in_row[start..start + (hi - lo)])
                        } else {
                            (lo..hi).map(|ox| go_row[ox] * in_row[g.input_col(ox, kx)]).sum()
                        };
                        gw_fc[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((grad_w, grad_b))
}

/// Gradient of the loss with respect to the convolution input.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    input_shape: &[usize],
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let mut grad_in = Tensor::zeros(input_shape);
    let g = Geometry::new(&grad_in, weights, stride, pad)?;
    check_grad_out(grad_out, &g)?;
    let go = grad_out.data();
    let w = weights.data();
    let plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let ksize = g.kh * g.kw;
    let col_ranges: Vec<_> = (0..g.kw).map(|kx| g.col_range(kx)).collect();
    let gi = grad_in.data_mut();

    for f in 0..g.filters {
        let go_f = &go[f * out_plane..][..out_plane];
        for oy in 0..g.out_h {
            let go_row = &go_f[oy * g.out_w..][..g.out_w];
            for c in 0..g.channels {
                let w_fc = &w[(f * g.channels + c) * ksize..][..ksize];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let gi_row = &mut gi[c * plane + iy * g.width..][..g.width];
                    for (kx, &(lo, hi)) in col_ranges.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let wv = w_fc[ky * g.kw + kx];
                        if g.stride == 1 {
                            let start = lo + kx - g.pad;
                            axpy(&mut gi_row[start..start + (hi - lo)], wv, &go_row[lo..hi]);
                        } else {
                            for ox in lo..hi {
                                gi_row[g.input_col(ox, kx)] += wv * go_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Full backward pass of [`conv2d_forward`].
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let (grad_w, grad_b) = conv2d_weight_grads(grad_out, input, weights, stride, pad)?;
    let grad_in = conv2d_input_grad(grad_out, input.shape(), weights, stride, pad)?;
    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

fn check_grad_out(grad_out: &Tensor, g: &Geometry) -> Result<()> {
    if grad_out.shape() != [g.filters, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "conv2d grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.filters, g.out_h, g.out_w]
        )));
    }
    Ok(())
}
