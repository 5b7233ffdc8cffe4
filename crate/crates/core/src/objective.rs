//! Training objective: contrastive pair loss on embedding distances, L2 weight
//! decay, and group lasso over output channels / neurons scaled per layer by
//! `1/sqrt(group count)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Model, ParamGrads, Params};
use crate::tensor::Tensor;

/// Norm below which a group's subgradient is taken to be zero.
pub const GROUP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Weight-decay coefficient.
    pub lambda_r: f64,
    /// Group-sparsity coefficient.
    pub lambda_gs: f64,
    /// Contrastive margin.
    pub eta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda_r: 1e-4,
            lambda_gs: 0.0,
            eta: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::Config(format!("lambda_r must be >= 0, got {}", self.lambda_r)));
        }
        if !(self.lambda_gs >= 0.0 && self.lambda_gs.is_finite()) {
            return Err(Error::Config(format!("lambda_gs must be >= 0, got {}", self.lambda_gs)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Genuine pairs share a speaker; impostor pairs do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    Impostor = 0,
    Genuine = 1,
}

impl PairLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(y: u8) -> Result<Self> {
        match y {
            0 => Ok(PairLabel::Impostor),
            1 => Ok(PairLabel::Genuine),
            _ => Err(Error::Domain(format!("pair label must be 0 or 1, got {y}"))),
        }
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be finite and >= 0, got {d}")));
    }
    Ok(())
}

/// `½D²` for genuine pairs, `½·max(0, eta − D)²` for impostors.
pub fn contrastive_pair_loss(d: f64, label: PairLabel, eta: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(match label {
        PairLabel::Genuine => 0.5 * d * d,
        PairLabel::Impostor => {
            let gap = (eta - d).max(0.0);
            0.5 * gap * gap
        }
    })
}

/// Mean pair loss over a batch.
pub fn contrastive_batch_loss(pairs: &[(f64, PairLabel)], eta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut sum = 0.0;
    for &(d, y) in pairs {
        sum += contrastive_pair_loss(d, y, eta)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Derivative of [`contrastive_pair_loss`] with respect to the distance.
pub fn contrastive_grad_d(d: f64, label: PairLabel, eta: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(match label {
        PairLabel::Genuine => d,
        PairLabel::Impostor => -(eta - d).max(0.0),
    })
}

/// Sum of Euclidean norms of the groups.
pub fn group_lasso(groups: &[&[f64]]) -> f64 {
    groups
        .iter()
        .map(|g| g.iter().map(|w| w * w).sum::<f64>().sqrt())
        .sum()
}

/// `w / max(‖w‖, eps)`, or zero when `‖w‖ <= eps`.
pub fn group_lasso_subgrad(w: &[f64], eps: f64) -> Vec<f64> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= eps {
        return vec![0.0; w.len()];
    }
    w.iter().map(|v| v / norm.max(eps)).collect()
}

/// One weight group of a layer: a conv filter or the incoming weights of an
/// FC neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupView<'a> {
    /// Index among the weighted layers.
    pub layer: usize,
    pub group: usize,
    /// Number of groups in this layer.
    pub layer_groups: usize,
    pub weights: &'a [f64],
}

pub fn layer_groups(params: &Params) -> Vec<&[f64]> {
    params.weights.data().chunks_exact(params.group_size()).collect()
}

pub fn group_views(model: &Model) -> Vec<GroupView<'_>> {
    model
        .params()
        .into_iter()
        .enumerate()
        .flat_map(|(layer, p)| {
            let count = p.groups();
            layer_groups(p)
                .into_iter()
                .enumerate()
                .map(move |(group, weights)| GroupView {
                    layer,
                    group,
                    layer_groups: count,
                    weights,
                })
        })
        .collect()
}

/// `½ Σ w²` over all weights (biases excluded).
pub fn l2_penalty(model: &Model) -> f64 {
    0.5 * model.params().iter().map(|p| p.weights.sum_squares()).sum::<f64>()
}

/// `Σ_m group_lasso(layer m) / sqrt(|G_m|)` over all weighted layers.
pub fn group_sparsity_penalty(model: &Model) -> f64 {
    model
        .params()
        .iter()
        .map(|p| group_lasso(&layer_groups(p)) / (p.groups() as f64).sqrt())
        .sum()
}

/// Adds the weight-decay and group-lasso gradients to `grads`.
pub fn add_regularizer_grads(model: &Model, hp: &Hyperparams, grads: &mut ParamGrads) {
    for (p, g) in model.params().into_iter().zip(&mut grads.layers) {
        if hp.lambda_r > 0.0 {
            g.weights.add_scaled(&p.weights, hp.lambda_r);
        }
        if hp.lambda_gs > 0.0 {
            let scale = hp.lambda_gs / (p.groups() as f64).sqrt();
            let size = p.group_size();
            for (w, gw) in p
                .weights
                .data()
                .chunks_exact(size)
                .zip(g.weights.data_mut().chunks_exact_mut(size))
            {
                for (gi, si) in gw.iter_mut().zip(group_lasso_subgrad(w, GROUP_EPS)) {
                    *gi += scale * si;
                }
            }
        }
    }
}

/// Proximal step for `step · Σ_m group_lasso(layer m) / sqrt(|G_m|)`: every
/// group is shrunk toward zero by its scaled step, and groups whose norm is
/// within the step become exactly zero. Returns which groups were zeroed.
pub fn group_prox(model: &mut Model, step: f64) -> Vec<Vec<bool>> {
    model
        .params_mut()
        .into_iter()
        .map(|p| {
            let shrink = step / (p.groups() as f64).sqrt();
            let size = p.group_size();
            p.weights
                .data_mut()
                .chunks_exact_mut(size)
                .map(|w| {
                    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let factor = if norm > shrink { 1.0 - shrink / norm } else { 0.0 };
                    w.iter_mut().for_each(|v| *v *= factor);
                    factor == 0.0
                })
                .collect()
        })
        .collect()
}

/// A labeled pair of network inputs.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub x1: &'a Tensor,
    pub x2: &'a Tensor,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Default)]
pub struct PairBatch<'a> {
    pub pairs: Vec<Pair<'a>>,
}

impl<'a> PairBatch<'a> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Components of the objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    /// `½ Σ w²`, before multiplying by `lambda_r`.
    pub l2: f64,
    /// Layer-scaled group lasso, before multiplying by `lambda_gs`.
    pub group_lasso: f64,
}

/// Loss of one pair and its gradient with respect to both embeddings.
fn pair_loss_and_grad(model: &Model, pair: &Pair<'_>, eta: f64) -> Result<(f64, ParamGrads)> {
    let (e1, c1) = network::forward_tensor(model, pair.x1)?;
    let (e2, c2) = network::forward_tensor(model, pair.x2)?;
    let d = network::distance(&e1, &e2);
    let loss = contrastive_pair_loss(d, pair.label, eta)?;
    let diff: Vec<f64> = e1
        .as_slice()
        .iter()
        .zip(e2.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    // dC/de1 = dC/dD * (e1 - e2) / D; the genuine case simplifies to (e1 - e2)
    let coef = match pair.label {
        PairLabel::Genuine => 1.0,
        PairLabel::Impostor if d > 0.0 => contrastive_grad_d(d, pair.label, eta)? / d,
        PairLabel::Impostor => 0.0,
    };
    let g1 = Tensor::new(&[diff.len()], diff.iter().map(|v| coef * v).collect())?;
    let g2 = Tensor::new(&[diff.len()], diff.iter().map(|v| -coef * v).collect())?;
    let grads = network::backward_pair(model, (&c1, &c2), &g1, &g2)?;
    Ok((loss, grads))
}

/// Mean contrastive loss over a batch and its averaged parameter gradient.
///
/// Pairs are evaluated in parallel and reduced in batch order.
pub fn data_loss_and_grads(model: &Model, batch: &PairBatch<'_>, eta: f64) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let per_pair = batch
        .pairs
        .par_iter()
        .map(|p| pair_loss_and_grad(model, p, eta))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = ParamGrads::zeros(model);
    let mut loss = 0.0;
    for (l, g) in &per_pair {
        loss += l;
        grads.add_assign(g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Mean contrastive loss over a batch, without gradients.
pub fn data_loss(model: &Model, batch: &PairBatch<'_>, eta: f64) -> Result<f64> {
    let scored = batch
        .pairs
        .par_iter()
        .map(|p| {
            let e1 = network::embed_tensor(model, p.x1)?;
            let e2 = network::embed_tensor(model, p.x2)?;
            Ok((network::distance(&e1, &e2), p.label))
        })
        .collect::<Result<Vec<_>>>()?;
    contrastive_batch_loss(&scored, eta)
}

/// Full objective: data loss + `lambda_r`·L2 + `lambda_gs`·scaled group lasso,
/// with the gradient of all three.
pub fn total_loss(model: &Model, batch: &PairBatch<'_>, hp: &Hyperparams) -> Result<(LossBreakdown, ParamGrads)> {
    hp.validate()?;
    let (data, mut grads) = data_loss_and_grads(model, batch, hp.eta)?;
    let l2 = l2_penalty(model);
    let gl = group_sparsity_penalty(model);
    add_regularizer_grads(model, hp, &mut grads);
    let breakdown = LossBreakdown {
        total: data + hp.lambda_r * l2 + hp.lambda_gs * gl,
        data,
        l2,
        group_lasso: gl,
    };
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_loss_values() {
        assert_eq!(contrastive_pair_loss(2.0, PairLabel::Genuine, 1.0).unwrap(), 2.0);
        assert_eq!(contrastive_pair_loss(1.5, PairLabel::Impostor, 1.5).unwrap(), 0.0);
        assert_eq!(contrastive_pair_loss(0.0, PairLabel::Impostor, 1.0).unwrap(), 0.5);
        assert!(matches!(
            contrastive_pair_loss(-0.1, PairLabel::Genuine, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn batch_loss_is_mean() {
        let one = [(0.7, PairLabel::Impostor)];
        assert_eq!(
            contrastive_batch_loss(&one, 1.0).unwrap(),
            contrastive_pair_loss(0.7, PairLabel::Impostor, 1.0).unwrap()
        );
        let zero = [(0.0, PairLabel::Genuine), (3.0, PairLabel::Impostor), (1.0, PairLabel::Impostor)];
        assert_eq!(contrastive_batch_loss(&zero, 1.0).unwrap(), 0.0);
        assert!(contrastive_batch_loss(&[], 1.0).is_err());
    }

    #[test]
    fn grad_d_values() {
        assert_eq!(contrastive_grad_d(2.0, PairLabel::Genuine, 1.0).unwrap(), 2.0);
        assert_eq!(contrastive_grad_d(1.0, PairLabel::Impostor, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_grad_d(3.0, PairLabel::Impostor, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_grad_d(0.25, PairLabel::Impostor, 1.0).unwrap(), -0.75);
    }

    #[test]
    fn group_lasso_values() {
        assert_eq!(group_lasso(&[&[3.0, 4.0]]), 5.0);
        assert_eq!(group_lasso(&[&[0.0, 0.0], &[0.0]]), 0.0);
    }

    #[test]
    fn subgrad_edge_cases() {
        assert_eq!(group_lasso_subgrad(&[0.0, 0.0, 0.0], GROUP_EPS), vec![0.0; 3]);
        let unit = [0.6, 0.0, -0.8];
        let g = group_lasso_subgrad(&unit, GROUP_EPS);
        for (a, b) in g.iter().zip(unit) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { lambda_gs: -1.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }
}
