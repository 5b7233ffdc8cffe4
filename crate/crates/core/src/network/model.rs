use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{he_init, Tensor};

pub const KERNEL_SIZE: usize = 3;
pub const STRIDE: usize = 1;
pub const PADDING: usize = 1;
pub const EMBEDDING_DIM: usize = 64;
/// Channels of a feature cube: static, delta, delta-delta.
pub const INPUT_CHANNELS: usize = 3;

/// Structural description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3, stride 1, padding 1.
    Conv { in_channels: usize, out_channels: usize },
    Relu,
    AvgPool2,
    GlobalAvgPool,
    Fc { in_dim: usize, out_dim: usize },
}

/// Weights and biases of a convolution or fully connected layer.
///
/// Conv weights are `[F, C, 3, 3]`, FC weights `[out, in]`; the bias has one
/// entry per output group either way.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    /// Number of output groups (filters or neurons).
    pub fn groups(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Weights feeding output group `g`, contiguous in row-major order.
    pub fn group(&self, g: usize) -> &[f64] {
        let size = self.group_size();
        &self.weights.data()[g * size..][..size]
    }

    pub fn group_size(&self) -> usize {
        self.weights.len() / self.groups()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Params),
    Relu,
    AvgPool2,
    GlobalAvgPool,
    Fc(Params),
}

impl Layer {
    pub fn params(&self) -> Option<&Params> {
        match self {
            Layer::Conv(p) | Layer::Fc(p) => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut Params> {
        match self {
            Layer::Conv(p) | Layer::Fc(p) => Some(p),
            _ => None,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(p) => LayerSpec::Conv {
                in_channels: p.weights.shape()[1],
                out_channels: p.weights.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::AvgPool2 => LayerSpec::AvgPool2,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Fc(p) => LayerSpec::Fc {
                in_dim: p.weights.shape()[1],
                out_dim: p.weights.shape()[0],
            },
        }
    }
}

/// Widths of the VGG-style embedding network.
///
/// Every conv stage is conv3x3 -> relu -> 2x2 average pool, except the last,
/// which ends in global average pooling. Optional hidden FC layers (each
/// followed by relu) precede the final 64-dim embedding layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_widths: Vec<usize>,
    pub fc_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_widths: vec![16, 32, 64],
            fc_hidden: Vec::new(),
            embedding_dim: EMBEDDING_DIM,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        canonical_specs(INPUT_CHANNELS, &self.conv_widths, &self.fc_hidden, self.embedding_dim)
    }
}

/// The canonical layer sequence for the given conv widths and FC output
/// sizes (the last FC size is the embedding dimension).
pub(crate) fn canonical_specs(
    in_channels: usize,
    conv_widths: &[usize],
    fc_hidden: &[usize],
    embedding_dim: usize,
) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut channels = in_channels;
    for (i, &w) in conv_widths.iter().enumerate() {
        specs.push(LayerSpec::Conv {
            in_channels: channels,
            out_channels: w,
        });
        specs.push(LayerSpec::Relu);
        specs.push(if i + 1 == conv_widths.len() {
            LayerSpec::GlobalAvgPool
        } else {
            LayerSpec::AvgPool2
        });
        channels = w;
    }
    let mut dim = channels;
    for &h in fc_hidden {
        specs.push(LayerSpec::Fc {
            in_dim: dim,
            out_dim: h,
        });
        specs.push(LayerSpec::Relu);
        dim = h;
    }
    specs.push(LayerSpec::Fc {
        in_dim: dim,
        out_dim: embedding_dim,
    });
    specs
}

/// Checks that a layer sequence composes and ends in the 64-dim embedding FC.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    enum State {
        Spatial(usize),
        Vector(usize),
    }
    let bad = |i: usize, msg: String| Err(Error::Config(format!("layer {i}: {msg}")));
    let mut state = State::Spatial(INPUT_CHANNELS);
    for (i, spec) in specs.iter().enumerate() {
        state = match (*spec, state) {
            (LayerSpec::Conv { in_channels, out_channels }, State::Spatial(c)) => {
                if in_channels != c {
                    return bad(i, format!("conv expects {in_channels} channels, receives {c}"));
                }
                if out_channels == 0 {
                    return bad(i, "conv with zero output channels".into());
                }
                State::Spatial(out_channels)
            }
            (LayerSpec::Relu, s) => s,
            (LayerSpec::AvgPool2, State::Spatial(c)) => State::Spatial(c),
            (LayerSpec::GlobalAvgPool, State::Spatial(c)) => State::Vector(c),
            (LayerSpec::Fc { in_dim, out_dim }, State::Vector(d)) => {
                if in_dim != d {
                    return bad(i, format!("fc expects {in_dim} inputs, receives {d}"));
                }
                if out_dim == 0 {
                    return bad(i, "fc with zero outputs".into());
                }
                State::Vector(out_dim)
            }
            (spec, State::Spatial(_)) => {
                return bad(i, format!("{spec:?} needs a vector input, got a feature map"))
            }
            (spec, State::Vector(_)) => {
                return bad(i, format!("{spec:?} needs a feature map, got a vector"))
            }
        };
    }
    match (specs.last(), state) {
        (Some(LayerSpec::Fc { .. }), State::Vector(EMBEDDING_DIM)) => Ok(()),
        (Some(LayerSpec::Fc { .. }), State::Vector(d)) => Err(Error::Config(format!(
            "embedding dimension must be {EMBEDDING_DIM}, got {d}"
        ))),
        _ => Err(Error::Config("network must end in a fully connected embedding layer".into())),
    }
}

/// The shared-weight embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<_> = layers.iter().map(Layer::spec).collect();
        validate_specs(&specs)?;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(p) = layer.params() {
                let ok = match layer {
                    Layer::Conv(_) => {
                        p.weights.shape()[2..] == [KERNEL_SIZE, KERNEL_SIZE]
                            && p.weights.rank() == 4
                    }
                    _ => p.weights.rank() == 2,
                };
                if !ok || p.bias.shape() != [p.groups()] {
                    return Err(Error::Config(format!(
                        "layer {i}: weights {:?} / bias {:?} do not match its kind",
                        p.weights.shape(),
                        p.bias.shape()
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::Config(format!("layer {i}: non-finite parameters")));
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Parameters of the weighted (conv and FC) layers, in order.
    pub fn params(&self) -> Vec<&Params> {
        self.layers.iter().filter_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Params> {
        self.layers.iter_mut().filter_map(Layer::params_mut).collect()
    }

    pub fn num_weighted(&self) -> usize {
        self.layers.iter().filter(|l| l.params().is_some()).count()
    }

    pub fn embedding_dim(&self) -> usize {
        self.params().last().map_or(0, |p| p.groups())
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    /// Whether the layer sequence is the canonical conv-stage/FC pattern the
    /// checkpoint format can represent.
    pub fn is_canonical(&self) -> bool {
        let (convs, fcs) = self.weighted_widths();
        self.specs() == canonical_specs(INPUT_CHANNELS, &convs, &fcs[..fcs.len() - 1], *fcs.last().unwrap())
    }

    /// Output widths of the conv layers and of the FC layers.
    pub(crate) fn weighted_widths(&self) -> (Vec<usize>, Vec<usize>) {
        let mut convs = Vec::new();
        let mut fcs = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => convs.push(p.groups()),
                Layer::Fc(p) => fcs.push(p.groups()),
                _ => {}
            }
        }
        (convs, fcs)
    }

    /// Rebuilds the canonical topology around the given weighted parameters.
    pub(crate) fn from_weighted(params: Vec<Params>) -> Result<Self> {
        let mut layers = Vec::new();
        let n_conv = params.iter().take_while(|p| p.weights.rank() == 4).count();
        let n_fc = params.len() - n_conv;
        if n_fc == 0 || params[n_conv..].iter().any(|p| p.weights.rank() != 2) {
            return Err(Error::Config(
                "weighted layers must be convolutions followed by fully connected layers".into(),
            ));
        }
        if n_conv == 0 {
            return Err(Error::Config("network needs at least one convolution".into()));
        }
        for (i, p) in params.into_iter().enumerate() {
            if i < n_conv {
                layers.push(Layer::Conv(p));
                layers.push(Layer::Relu);
                layers.push(if i + 1 == n_conv {
                    Layer::GlobalAvgPool
                } else {
                    Layer::AvgPool2
                });
            } else {
                layers.push(Layer::Fc(p));
                if i + 1 < n_conv + n_fc {
                    layers.push(Layer::Relu);
                }
            }
        }
        Self::from_layers(layers)
    }
}

fn layer_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// He-initialized model for `config`, with zero biases.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    if config.conv_widths.is_empty() {
        return Err(Error::Config("model.conv_widths must not be empty".into()));
    }
    let specs = config.layer_specs();
    validate_specs(&specs)?;
    let mut weighted = 0u64;
    let layers = specs
        .into_iter()
        .map(|spec| match spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
            } => {
                let fan_in = in_channels * KERNEL_SIZE * KERNEL_SIZE;
                let shape = [out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE];
                let seed = layer_seed(config.seed, weighted);
                weighted += 1;
                Layer::Conv(Params {
                    weights: he_init(&shape, fan_in, seed),
                    bias: Tensor::zeros(&[out_channels]),
                })
            }
            LayerSpec::Fc { in_dim, out_dim } => {
                let seed = layer_seed(config.seed, weighted);
                weighted += 1;
                Layer::Fc(Params {
                    weights: he_init(&[out_dim, in_dim], in_dim, seed),
                    bias: Tensor::zeros(&[out_dim]),
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::AvgPool2 => Layer::AvgPool2,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
        })
        .collect();
    Model::from_layers(layers)
}
