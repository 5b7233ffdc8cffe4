use super::Tensor;
use crate::error::{Error, Result};

fn chw(input_shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match input_shape {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(Error::Shape(format!("{what}: expected [C,H,W], got {other:?}"))),
    }
}

/// 2x2 non-overlapping mean pooling.
///
/// Odd heights or widths are first extended by replicating the last row or
/// column, so the output is `[C, ceil(H/2), ceil(W/2)]`.
pub fn avg_pool2_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(input.shape(), "avg_pool2")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let o = out.data_mut();
    for ch in 0..c {
        let plane = &x[ch * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
            for ox in 0..ow {
                let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                let s = (plane[y0 * w + x0] + plane[y0 * w + x1])
                    + (plane[y1 * w + x0] + plane[y1 * w + x1]);
                o[(ch * oh + oy) * ow + ox] = 0.25 * s;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = chw(input_shape, "avg_pool2 backward")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    if grad_out.shape() != [c, oh, ow] {
        return Err(Error::Shape(format!(
            "avg_pool2 backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [c, oh, ow]
        )));
    }
    let go = grad_out.data();
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for ch in 0..c {
        let plane = &mut gi[ch * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
            for ox in 0..ow {
                let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                let g = 0.25 * go[(ch * oh + oy) * ow + ox];
                plane[y0 * w + x0] += g;
                plane[y0 * w + x1] += g;
                plane[y1 * w + x0] += g;
                plane[y1 * w + x1] += g;
            }
        }
    }
    Ok(grad_in)
}

/// Mean over all spatial positions: `[C,H,W] -> [C]`.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(input.shape(), "global_avg_pool")?;
    let n = (h * w) as f64;
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f64>() / n)
        .collect();
    Tensor::new(&[c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = chw(input_shape, "global_avg_pool backward")?;
    if grad_out.shape() != [c] {
        return Err(Error::Shape(format!(
            "global_avg_pool backward: grad {:?}, expected [{c}]",
            grad_out.shape()
        )));
    }
    let n = (h * w) as f64;
    let mut grad_in = Tensor::zeros(input_shape);
    for (plane, g) in grad_in.data_mut().chunks_exact_mut(h * w).zip(grad_out.data()) {
        plane.fill(g / n);
    }
    Ok(grad_in)
}
