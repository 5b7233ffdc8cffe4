use super::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes gradient through where the forward input was strictly positive.
pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "relu backward: grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let mut out = grad_out.clone();
    out.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &xi)| {
            if xi <= 0.0 {
                *g = 0.0;
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(&[3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0, 0.0]);
        let g = Tensor::full(&[3], 5.0);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 5.0, 0.0]);
    }
}
