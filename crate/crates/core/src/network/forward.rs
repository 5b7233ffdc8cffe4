use super::model::{Layer, Model, Params, PADDING, STRIDE};
use crate::audio::FeatureCube;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// A 64-dim point in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Tensor);

impl Embedding {
    pub fn new(vector: Tensor) -> Result<Self> {
        vector.expect_rank(1, "embedding")?;
        Ok(Self(vector))
    }

    pub fn vector(&self) -> &Tensor {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.data()
    }
}

/// Inputs of every layer from one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
}

/// Gradients for every weighted layer, in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Params>,
}

impl ParamGrads {
    pub fn zeros(model: &Model) -> Self {
        Self {
            layers: model.params().into_iter().map(Params::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_scaled(&b.weights, 1.0);
            a.bias.add_scaled(&b.bias, 1.0);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for p in &mut self.layers {
            p.weights.scale(alpha);
            p.bias.scale(alpha);
        }
    }

    /// All gradient entries flattened in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Params::is_finite)
    }
}

fn apply(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv(p) => tensor::conv2d_forward(x, &p.weights, &p.bias, STRIDE, PADDING),
        Layer::Relu => Ok(tensor::relu_forward(x)),
        Layer::AvgPool2 => tensor::avg_pool2_forward(x),
        Layer::GlobalAvgPool => tensor::global_avg_pool_forward(x),
        Layer::Fc(p) => tensor::fc_forward(x, &p.weights, &p.bias),
    }
}

/// Runs the network on an arbitrary `[C,H,W]` input, recording layer inputs.
pub fn forward_tensor(model: &Model, input: &Tensor) -> Result<(Embedding, ForwardCache)> {
    let mut inputs = Vec::with_capacity(model.layers().len());
    let mut x = input.clone();
    for layer in model.layers() {
        let y = apply(layer, &x)?;
        inputs.push(x);
        x = y;
    }
    Ok((Embedding::new(x)?, ForwardCache { inputs }))
}

/// Runs the network without keeping intermediate activations.
pub fn embed_tensor(model: &Model, input: &Tensor) -> Result<Embedding> {
    let mut layers = model.layers().iter();
    let first = layers
        .next()
        .ok_or_else(|| Error::Config("empty model".into()))?;
    let mut x = apply(first, input)?;
    for layer in layers {
        x = apply(layer, &x)?;
    }
    Embedding::new(x)
}

pub fn forward(model: &Model, cube: &FeatureCube) -> Result<(Embedding, ForwardCache)> {
    forward_tensor(model, cube.tensor())
}

pub fn embed(model: &Model, cube: &FeatureCube) -> Result<Embedding> {
    embed_tensor(model, cube.tensor())
}

/// Both Siamese towers: the same parameter set applied to each input.
pub fn forward_pair(
    model: &Model,
    x1: &FeatureCube,
    x2: &FeatureCube,
) -> Result<((Embedding, ForwardCache), (Embedding, ForwardCache))> {
    Ok((forward(model, x1)?, forward(model, x2)?))
}

/// Euclidean distance between two embeddings.
pub fn distance(e1: &Embedding, e2: &Embedding) -> f64 {
    e1.as_slice()
        .iter()
        .zip(e2.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Back-propagates `grad_embedding` through one tower.
pub fn backward(model: &Model, cache: &ForwardCache, grad_embedding: &Tensor) -> Result<ParamGrads> {
    let layers = model.layers();
    if cache.inputs.len() != layers.len() {
        return Err(Error::Shape("forward cache does not belong to this model".into()));
    }
    let mut grads = Vec::with_capacity(model.num_weighted());
    let mut g = grad_embedding.clone();
    for (i, (layer, x)) in layers.iter().zip(&cache.inputs).enumerate().rev() {
        let need_input = i > 0;
        g = match layer {
            Layer::Conv(p) => {
                let (gw, gb) = tensor::conv2d_weight_grads(&g, x, &p.weights, STRIDE, PADDING)?;
                grads.push(Params {
                    weights: gw,
                    bias: gb,
                });
                if !need_input {
                    break;
                }
                tensor::conv2d_input_grad(&g, x.shape(), &p.weights, STRIDE, PADDING)?
            }
            Layer::Fc(p) => {
                let fg = tensor::fc_backward(&g, x, &p.weights)?;
                grads.push(Params {
                    weights: fg.weights,
                    bias: fg.bias,
                });
                fg.input
            }
            Layer::Relu => tensor::relu_backward(&g, x)?,
            Layer::AvgPool2 => tensor::avg_pool2_backward(&g, x.shape())?,
            Layer::GlobalAvgPool => tensor::global_avg_pool_backward(&g, x.shape())?,
        };
    }
    grads.reverse();
    Ok(ParamGrads { layers: grads })
}

/// Gradient of a pair loss into the shared parameters: the sum of both
/// towers' contributions.
pub fn backward_pair(
    model: &Model,
    caches: (&ForwardCache, &ForwardCache),
    grad_e1: &Tensor,
    grad_e2: &Tensor,
) -> Result<ParamGrads> {
    let mut total = backward(model, caches.0, grad_e1)?;
    total.add_assign(&backward(model, caches.1, grad_e2)?);
    Ok(total)
}
