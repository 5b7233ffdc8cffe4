//! Group-norm analysis, threshold pruning, structural compaction and
//! per-layer speedup measurement.

mod bench;
mod compact;

pub use bench::{bench_layer, bench_models, bench_pair, layer_input_shapes, BenchEntry, BenchResult, MIN_REPEATS, WARMUP_RUNS};
pub use compact::{compact, CompactionMap, LayerCompaction};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Model;
use crate::objective::layer_groups;

/// Euclidean norm of every group (biases excluded), per weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormReport {
    pub layers: Vec<Vec<f64>>,
}

impl GroupNormReport {
    /// `layer,group,norm` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,group,norm\n");
        for (l, norms) in self.layers.iter().enumerate() {
            for (g, n) in norms.iter().enumerate() {
                out.push_str(&format!("{l},{g},{n}\n"));
            }
        }
        out
    }
}

pub fn group_norms(model: &Model) -> GroupNormReport {
    GroupNormReport {
        layers: model
            .params()
            .into_iter()
            .map(|p| {
                layer_groups(p)
                    .into_iter()
                    .map(|g| g.iter().map(|w| w * w).sum::<f64>().sqrt())
                    .collect()
            })
            .collect(),
    }
}

/// Per-layer keep flags for every group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub tau: f64,
    pub keep: Vec<Vec<bool>>,
}

impl PruneMask {
    pub fn all_keep(model: &Model) -> Self {
        Self {
            tau: 0.0,
            keep: model.params().iter().map(|p| vec![true; p.groups()]).collect(),
        }
    }

    /// Marks every group of the final (embedding) layer as kept.
    pub fn exempt_embedding(mut self) -> Self {
        if let Some(last) = self.keep.last_mut() {
            last.fill(true);
        }
        self
    }

    pub fn kept_indices(&self, layer: usize) -> Vec<usize> {
        self.keep[layer]
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }

    pub fn dropped(&self) -> usize {
        self.keep.iter().flatten().filter(|&&k| !k).count()
    }

    pub fn is_all_keep(&self) -> bool {
        self.dropped() == 0
    }

    pub(crate) fn check_against(&self, model: &Model) -> Result<()> {
        let params = model.params();
        if params.len() != self.keep.len()
            || params.iter().zip(&self.keep).any(|(p, k)| p.groups() != k.len())
        {
            return Err(Error::Shape("prune mask does not match model layers".into()));
        }
        Ok(())
    }
}

/// Keeps groups with norm `>= tau`. A layer that would lose every group keeps
/// its largest-norm group (lowest index on ties).
pub fn prune_mask(report: &GroupNormReport, tau: f64) -> Result<PruneMask> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Domain(format!("pruning threshold must be >= 0, got {tau}")));
    }
    let keep = report
        .layers
        .iter()
        .map(|norms| {
            let mut keep: Vec<bool> = norms.iter().map(|&n| n >= tau).collect();
            if !keep.iter().any(|&k| k) {
                let best = norms
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &n)| if n > norms[best] { i } else { best });
                keep[best] = true;
            }
            keep
        })
        .collect();
    Ok(PruneMask { tau, keep })
}

/// Zeroes the weights and biases of dropped groups; shapes are unchanged.
pub fn apply_mask(model: &Model, mask: &PruneMask) -> Result<Model> {
    mask.check_against(model)?;
    let mut out = model.clone();
    for (p, keep) in out.params_mut().into_iter().zip(&mask.keep) {
        let size = p.group_size();
        for (g, &k) in keep.iter().enumerate() {
            if !k {
                p.weights.data_mut()[g * size..][..size].fill(0.0);
                p.bias.data_mut()[g] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Fraction of groups whose norm is below `tau`, per layer and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    pub tau: f64,
    pub per_layer: Vec<f64>,
    pub total: f64,
}

impl SparsityStats {
    pub fn from_report(report: &GroupNormReport, tau: f64) -> Self {
        let mut below = 0usize;
        let mut count = 0usize;
        let per_layer = report
            .layers
            .iter()
            .map(|norms| {
                let b = norms.iter().filter(|&&n| n < tau).count();
                below += b;
                count += norms.len();
                b as f64 / norms.len().max(1) as f64
            })
            .collect();
        Self {
            tau,
            per_layer,
            total: if count == 0 { 0.0 } else { below as f64 / count as f64 },
        }
    }
}

pub fn sparsity_stats(model: &Model, tau: f64) -> SparsityStats {
    SparsityStats::from_report(&group_norms(model), tau)
}
