use super::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Matrix product of `[m,k]` and `[k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    // i-p-j order: each output element still sums over p in increasing order.
    for (i, out_row) in out.data_mut().chunks_exact_mut(n).enumerate() {
        for p in 0..k {
            axpy(out_row, ad[i * k + p], &bd[p * n..][..n]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Fully connected layer: `W x + b` for `W: [n,d]`, `x: [d]`.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = fc_dims(input, weights, bias)?;
    let x = input.data();
    let out: Vec<f64> = weights
        .data()
        .chunks_exact(d)
        .zip(bias.data())
        .map(|(row, b)| dot(row, x) + b)
        .collect();
    Tensor::new(&[n], out)
}

pub fn fc_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<FcGrads> {
    input.expect_rank(1, "fc input")?;
    weights.expect_rank(2, "fc weights")?;
    let (n, d) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != d || grad_out.shape() != [n] {
        return Err(Error::Shape(format!(
            "fc backward: weights {:?}, input {:?}, grad_out {:?}",
            weights.shape(),
            input.shape(),
            grad_out.shape()
        )));
    }
    let go = grad_out.data();
    let x = input.data();
    let mut grad_w = Tensor::zeros(&[n, d]);
    let mut grad_in = Tensor::zeros(&[d]);
    for (j, (gw_row, w_row)) in grad_w
        .data_mut()
        .chunks_exact_mut(d)
        .zip(weights.data().chunks_exact(d))
        .enumerate()
    {
        axpy(gw_row, go[j], x);
        axpy(grad_in.data_mut(), go[j], w_row);
    }
    Ok(FcGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_out.clone(),
    })
}

fn fc_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    input.expect_rank(1, "fc input")?;
    weights.expect_rank(2, "fc weights")?;
    let (n, d) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != d {
        return Err(Error::Shape(format!(
            "fc: weights {:?} applied to input of length {}",
            weights.shape(),
            input.len()
        )));
    }
    if bias.shape() != [n] {
        return Err(Error::Shape(format!("fc bias shape {:?}, expected [{n}]", bias.shape())));
    }
    Ok((n, d))
}
