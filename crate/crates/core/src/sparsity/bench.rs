use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Layer, Model, PADDING, STRIDE};
use crate::tensor::{self, Tensor};

pub const WARMUP_RUNS: usize = 5;
pub const MIN_REPEATS: usize = 20;
const INPUT_SEED: u64 = 0x5eed;

/// Dense versus compacted forward time for one weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub layer: usize,
    pub dense_ns: f64,
    pub compact_ns: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResult {
    pub entries: Vec<BenchEntry>,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,dense_ns,compact_ns,speedup\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.layer, e.dense_ns, e.compact_ns, e.speedup));
        }
        out
    }

    pub fn mean_speedup(&self) -> Option<f64> {
        (!self.entries.is_empty())
            .then(|| self.entries.iter().map(|e| e.speedup).sum::<f64>() / self.entries.len() as f64)
    }
}

fn random_input(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(INPUT_SEED);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn run_layer(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv(p) => tensor::conv2d_forward(x, &p.weights, &p.bias, STRIDE, PADDING),
        Layer::Fc(p) => tensor::fc_forward(x, &p.weights, &p.bias),
        Layer::Relu => Ok(tensor::relu_forward(x)),
        Layer::AvgPool2 => tensor::avg_pool2_forward(x),
        Layer::GlobalAvgPool => tensor::global_avg_pool_forward(x),
    }
}

/// Median wall-clock nanoseconds of one single-threaded forward of `layer`
/// over `repeats` runs, after a warmup.
pub fn bench_layer(layer: &Layer, input_shape: &[usize], repeats: usize) -> Result<f64> {
    if repeats < MIN_REPEATS {
        return Err(Error::Bench(format!("need at least {MIN_REPEATS} repeats, got {repeats}")));
    }
    let x = random_input(input_shape);
    for _ in 0..WARMUP_RUNS {
        black_box(run_layer(layer, black_box(&x))?);
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(run_layer(layer, black_box(&x))?);
        times.push(start.elapsed().as_nanos() as f64);
    }
    times.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        times[repeats / 2]
    } else {
        0.5 * (times[repeats / 2 - 1] + times[repeats / 2])
    };
    if median <= 0.0 {
        return Err(Error::Bench("timer resolution too coarse: median of 0 ns".into()));
    }
    Ok(median)
}

/// Times a dense layer against its compacted counterpart.
pub fn bench_pair(
    index: usize,
    dense: (&Layer, &[usize]),
    compacted: (&Layer, &[usize]),
    repeats: usize,
) -> Result<BenchEntry> {
    let dense_ns = bench_layer(dense.0, dense.1, repeats)?;
    let compact_ns = bench_layer(compacted.0, compacted.1, repeats)?;
    Ok(BenchEntry {
        layer: index,
        dense_ns,
        compact_ns,
        speedup: dense_ns / compact_ns,
    })
}

/// Input shape seen by each weighted layer for a network input of
/// `input_shape`.
pub fn layer_input_shapes(model: &Model, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shape = input_shape.to_vec();
    let mut out = Vec::new();
    for layer in model.layers() {
        if layer.params().is_some() {
            out.push(shape.clone());
        }
        shape = match (layer, shape.as_slice()) {
            (Layer::Conv(p), &[_, h, w]) => vec![p.groups(), h, w],
            (Layer::AvgPool2, &[c, h, w]) => vec![c, h.div_ceil(2), w.div_ceil(2)],
            (Layer::GlobalAvgPool, &[c, _, _]) => vec![c],
            (Layer::Fc(p), &[_]) => vec![p.groups()],
            (Layer::Relu, _) => shape,
            (l, s) => {
                return Err(Error::Shape(format!("{:?} cannot take input {s:?}", l.spec())))
            }
        };
    }
    Ok(out)
}

/// Per-weighted-layer speedup of `compacted` over `dense`.
pub fn bench_models(
    dense: &Model,
    compacted: &Model,
    input_shape: &[usize],
    repeats: usize,
) -> Result<BenchResult> {
    if dense.num_weighted() != compacted.num_weighted() {
        return Err(Error::Shape("models have different numbers of weighted layers".into()));
    }
    let dense_shapes = layer_input_shapes(dense, input_shape)?;
    let compact_shapes = layer_input_shapes(compacted, input_shape)?;
    let dense_layers = dense.layers().iter().filter(|l| l.params().is_some());
    let compact_layers = compacted.layers().iter().filter(|l| l.params().is_some());
    let entries = dense_layers
        .zip(compact_layers)
        .enumerate()
        .map(|(i, (d, c))| bench_pair(i, (d, &dense_shapes[i]), (c, &compact_shapes[i]), repeats))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchResult { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_model, ModelConfig};

    #[test]
    fn input_shapes_follow_topology() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let shapes = layer_input_shapes(&m, &[3, 256, 100]).unwrap();
        assert_eq!(
            shapes,
            vec![vec![3, 256, 100], vec![16, 128, 50], vec![32, 64, 25], vec![64]]
        );
    }

    #[test]
    fn too_few_repeats_is_bench_error() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let fc = m.layers().last().unwrap();
        assert!(matches!(bench_layer(fc, &[64], 5), Err(Error::Bench(_))));
        assert!(bench_layer(fc, &[64], 21).unwrap() > 0.0);
    }
}
