//! Fixtures shared by the benchmarks.

use svkit_core::network::{build_model, Layer, Model, ModelConfig, Params};
use svkit_core::sparsity::{compact, PruneMask};
use svkit_core::tensor::{he_init, Tensor};

pub fn conv_layer(out_channels: usize, in_channels: usize, seed: u64) -> Layer {
    Layer::Conv(Params {
        weights: he_init(&[out_channels, in_channels, 3, 3], in_channels * 9, seed),
        bias: Tensor::zeros(&[out_channels]),
    })
}

pub fn fc_layer(out_dim: usize, in_dim: usize, seed: u64) -> Layer {
    Layer::Fc(Params {
        weights: he_init(&[out_dim, in_dim], in_dim, seed),
        bias: Tensor::zeros(&[out_dim]),
    })
}

/// Deterministic input of the given shape.
pub fn input(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect()).unwrap()
}

/// A model and its compaction with every other group dropped in each
/// non-embedding layer.
pub fn model_pair(conv_widths: Vec<usize>) -> (Model, Model) {
    let model = build_model(&ModelConfig {
        conv_widths,
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let keep = model
        .params()
        .iter()
        .map(|p| (0..p.groups()).map(|g| g % 2 == 0).collect())
        .collect();
    let mask = PruneMask { tau: 0.0, keep }.exempt_embedding();
    let (compacted, _) = compact(&model, &mask).unwrap();
    (model, compacted)
}
