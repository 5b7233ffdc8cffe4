use serde::{Deserialize, Serialize};

use super::PruneMask;
use crate::error::{Error, Result};
use crate::network::{Layer, Model, Params};
use crate::tensor::Tensor;

/// How one weighted layer was shrunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCompaction {
    pub original_groups: usize,
    /// Surviving output groups, ascending original indices.
    pub kept: Vec<usize>,
    pub original_inputs: usize,
    /// Surviving input channels / features, ascending original indices.
    pub input_kept: Vec<usize>,
}

/// Structural record of a compaction, one entry per weighted layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionMap {
    pub layers: Vec<LayerCompaction>,
}

fn select(params: &Params, rows: &[usize], inputs: &[usize]) -> Result<Params> {
    let shape = params.weights.shape();
    let in_total = shape[1];
    let inner: usize = shape[2..].iter().product();
    let w = params.weights.data();
    let mut data = Vec::with_capacity(rows.len() * inputs.len() * inner);
    for &r in rows {
        for &c in inputs {
            data.extend_from_slice(&w[(r * in_total + c) * inner..][..inner]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[0] = rows.len();
    new_shape[1] = inputs.len();
    Ok(Params {
        weights: Tensor::new(&new_shape, data)?,
        bias: Tensor::new(&[rows.len()], rows.iter().map(|&r| params.bias.data()[r]).collect())?,
    })
}

/// Physically removes dropped groups and the matching inputs of the next
/// weighted layer.
///
/// Relu and pooling layers act channel-wise and pass the kept set through;
/// global average pooling maps conv channels one-to-one onto FC inputs. The
/// embedding layer must be fully kept.
pub fn compact(model: &Model, mask: &PruneMask) -> Result<(Model, CompactionMap)> {
    mask.check_against(model)?;
    let last = mask.keep.len() - 1;
    if !mask.keep[last].iter().all(|&k| k) {
        return Err(Error::Contract("the embedding layer cannot be pruned".into()));
    }
    let mut layers = Vec::with_capacity(model.layers().len());
    let mut record = Vec::with_capacity(mask.keep.len());
    let mut upstream: Option<Vec<usize>> = None;
    let mut weighted = 0;
    for layer in model.layers() {
        let Some(params) = layer.params() else {
            layers.push(layer.clone());
            continue;
        };
        let inputs = upstream
            .take()
            .unwrap_or_else(|| (0..params.weights.shape()[1]).collect());
        let kept = mask.kept_indices(weighted);
        let shrunk = select(params, &kept, &inputs)?;
        layers.push(match layer {
            Layer::Conv(_) => Layer::Conv(shrunk),
            _ => Layer::Fc(shrunk),
        });
        record.push(LayerCompaction {
            original_groups: params.groups(),
            kept: kept.clone(),
            original_inputs: params.weights.shape()[1],
            input_kept: inputs,
        });
        upstream = Some(kept);
        weighted += 1;
    }
    Ok((Model::from_layers(layers)?, CompactionMap { layers: record }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_model, ModelConfig};

    #[test]
    fn all_keep_is_identity() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let (c, map) = compact(&m, &PruneMask::all_keep(&m)).unwrap();
        assert_eq!(c, m);
        assert!(map.layers.iter().all(|l| l.kept.len() == l.original_groups));
    }

    #[test]
    fn single_kept_channel_narrows_next_conv() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let mut mask = PruneMask::all_keep(&m);
        mask.keep[0] = (0..16).map(|i| i == 5).collect();
        let (c, map) = compact(&m, &mask).unwrap();
        let p = c.params();
        assert_eq!(p[0].weights.shape(), &[1, 3, 3, 3]);
        assert_eq!(p[1].weights.shape(), &[32, 1, 3, 3]);
        assert_eq!(map.layers[1].input_kept, vec![5]);
        assert_eq!(c.embedding_dim(), 64);
    }

    #[test]
    fn pruning_embedding_is_contract_error() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let mut mask = PruneMask::all_keep(&m);
        mask.keep[3][0] = false;
        assert!(matches!(compact(&m, &mask), Err(Error::Contract(_))));
    }

    #[test]
    fn last_conv_feeds_fc_inputs_one_to_one() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let mut mask = PruneMask::all_keep(&m);
        mask.keep[2] = (0..64).map(|i| i % 4 == 1).collect();
        let (c, _) = compact(&m, &mask).unwrap();
        let fc = c.params()[3];
        assert_eq!(fc.weights.shape(), &[64, 16]);
        let orig = m.params()[3];
        assert_eq!(fc.weights.get(&[7, 2]), orig.weights.get(&[7, 9]));
    }
}
