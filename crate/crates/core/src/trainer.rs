//! Mini-batch SGD with momentum over Siamese pairs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate, TrialSet};
use crate::network::{Model, ParamGrads};
use crate::objective::{data_loss, group_prox, total_loss, Hyperparams, Pair, PairBatch, PairLabel};
use crate::sparsity::{sparsity_stats, PruneMask};

/// How the group-lasso term enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupUpdate {
    /// Its subgradient is added to the momentum gradient.
    Subgradient,
    /// A group soft-threshold of `lr · lambda_gs` follows each momentum step
    /// on the smooth part; velocities of zeroed groups are reset.
    #[default]
    Proximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub genuine_ratio: f64,
    pub seed: u64,
    pub lambda_r: f64,
    pub lambda_gs: f64,
    pub eta: f64,
    /// Norm threshold used for the logged sparsity fraction.
    pub prune_tau: f64,
    /// Dev EER is computed every this many epochs and after the last one.
    pub eval_every: usize,
    pub group_update: GroupUpdate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            genuine_ratio: 0.5,
            seed: 0,
            lambda_r: hp.lambda_r,
            lambda_gs: hp.lambda_gs,
            eta: hp.eta,
            prune_tau: 1e-3,
            eval_every: 1,
            group_update: GroupUpdate::default(),
        }
    }
}

impl TrainConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lambda_r: self.lambda_r,
            lambda_gs: self.lambda_gs,
            eta: self.eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.genuine_ratio > 0.0 && self.genuine_ratio < 1.0) {
            return bad(format!("genuine_ratio must be in (0, 1), got {}", self.genuine_ratio));
        }
        if self.prune_tau.is_nan() || self.prune_tau < 0.0 {
            return bad(format!("prune_tau must be >= 0, got {}", self.prune_tau));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        self.hyperparams().validate()
    }

    /// Steps per epoch: one pass of as many pairs as there are utterances.
    pub fn steps_per_epoch(&self, dataset: &FeatureSet) -> usize {
        dataset.len().div_ceil(self.batch_size).max(1)
    }
}

/// Uniform sampler over genuine (same-speaker) and impostor pairs.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    dataset: &'a FeatureSet,
    by_speaker: Vec<Vec<usize>>,
    /// Cumulative genuine-pair counts per speaker.
    cumulative: Vec<u64>,
}

impl<'a> PairSampler<'a> {
    pub fn new(dataset: &'a FeatureSet) -> Self {
        let by_speaker = dataset.by_speaker();
        let mut total = 0u64;
        let cumulative = by_speaker
            .iter()
            .map(|u| {
                let n = u.len() as u64;
                total += n * n.saturating_sub(1) / 2;
                total
            })
            .collect();
        Self {
            dataset,
            by_speaker,
            cumulative,
        }
    }

    pub fn genuine_pairs(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Indices of one same-speaker pair, uniform over all such pairs.
    pub fn genuine(&self, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let total = self.genuine_pairs();
        if total == 0 {
            return Err(Error::Capacity("no speaker has two utterances".into()));
        }
        let r = rng.random_range(0..total);
        let s = self.cumulative.partition_point(|&c| c <= r);
        let utts = &self.by_speaker[s];
        let i = rng.random_range(0..utts.len());
        let mut j = rng.random_range(0..utts.len() - 1);
        if j >= i {
            j += 1;
        }
        Ok((utts[i], utts[j]))
    }

    /// Indices of one different-speaker pair, uniform over all such pairs.
    pub fn impostor(&self, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        if self.by_speaker.len() < 2 {
            return Err(Error::Capacity("impostor pairs need at least two speakers".into()));
        }
        let labels = self.dataset.speaker_labels();
        let n = labels.len();
        loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if labels[i] != labels[j] {
                return Ok((i, j));
            }
        }
    }

    pub fn batch(&self, batch_size: usize, genuine_ratio: f64, rng: &mut ChaCha8Rng) -> Result<PairBatch<'a>> {
        let n_genuine = (genuine_ratio * batch_size as f64).round() as usize;
        let mut pairs = Vec::with_capacity(batch_size);
        for k in 0..batch_size {
            let (label, (i, j)) = if k < n_genuine {
                (PairLabel::Genuine, self.genuine(rng)?)
            } else {
                (PairLabel::Impostor, self.impostor(rng)?)
            };
            pairs.push(Pair {
                x1: self.dataset.features(i),
                x2: self.dataset.features(j),
                label,
            });
        }
        Ok(PairBatch { pairs })
    }
}

/// `round(genuine_ratio * batch_size)` genuine pairs followed by impostor
/// pairs, each drawn uniformly.
pub fn sample_pair_batch<'a>(
    dataset: &'a FeatureSet,
    batch_size: usize,
    genuine_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch<'a>> {
    PairSampler::new(dataset).batch(batch_size, genuine_ratio, rng)
}

/// A fixed, seeded pair set for tracking data loss across training.
pub fn fixed_pairs(dataset: &FeatureSet, n_pairs: usize, seed: u64) -> Result<PairBatch<'_>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pair_batch(dataset, n_pairs, 0.5, &mut rng)
}

/// `v <- mu*v - lr*grad; w <- w + v`, in place.
pub fn sgd_momentum_step(w: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, mu: f64) {
    assert!(w.len() == grad.len() && w.len() == velocity.len());
    for ((w, g), v) in w.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * g;
        *w += *v;
    }
}

fn apply_step(model: &mut Model, grads: &ParamGrads, velocity: &mut ParamGrads, lr: f64, mu: f64) {
    for ((p, g), v) in model
        .params_mut()
        .into_iter()
        .zip(&grads.layers)
        .zip(velocity.layers.iter_mut())
    {
        sgd_momentum_step(p.weights.data_mut(), g.weights.data(), v.weights.data_mut(), lr, mu);
        sgd_momentum_step(p.bias.data_mut(), g.bias.data(), v.bias.data_mut(), lr, mu);
    }
}

fn reset_velocity(velocity: &mut ParamGrads, zeroed: &[Vec<bool>]) {
    for (v, zeroed) in velocity.layers.iter_mut().zip(zeroed) {
        let size = v.group_size();
        for (g, _) in zeroed.iter().enumerate().filter(|(_, &z)| z) {
            v.weights.data_mut()[g * size..][..size].fill(0.0);
        }
    }
}

fn zero_dropped(model: &mut Model, velocity: &mut ParamGrads, mask: &PruneMask) {
    let pairs = model.params_mut().into_iter().zip(velocity.layers.iter_mut());
    for ((p, v), keep) in pairs.zip(&mask.keep) {
        let size = p.group_size();
        for (g, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
            p.weights.data_mut()[g * size..][..size].fill(0.0);
            v.weights.data_mut()[g * size..][..size].fill(0.0);
            p.bias.data_mut()[g] = 0.0;
            v.bias.data_mut()[g] = 0.0;
        }
    }
}

/// Held-out utterances and the trials scored on them.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub features: &'a FeatureSet,
    pub trials: &'a TrialSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub data_loss: f64,
    pub group_lasso: f64,
    pub sparsity_fraction: f64,
    pub dev_eer: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total_loss,data_loss,group_lasso,sparsity_fraction,dev_eer\n");
        for e in &self.epochs {
            let eer = e.dev_eer.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.total_loss, e.data_loss, e.group_lasso, e.sparsity_fraction, eer
            );
        }
        out
    }

    pub fn last_dev_eer(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.dev_eer)
    }
}

pub fn train(model: &Model, dataset: &FeatureSet, config: &TrainConfig) -> Result<(Model, TrainLog)> {
    run(model, dataset, config, None, None)
}

pub fn train_with_dev(
    model: &Model,
    dataset: &FeatureSet,
    config: &TrainConfig,
    dev: Option<DevSet<'_>>,
) -> Result<(Model, TrainLog)> {
    run(model, dataset, config, None, dev)
}

/// Training that keeps every dropped group (weights, bias and velocity) at
/// exactly zero after each step.
pub fn fine_tune(
    model: &Model,
    mask: &PruneMask,
    dataset: &FeatureSet,
    config: &TrainConfig,
    dev: Option<DevSet<'_>>,
) -> Result<(Model, TrainLog)> {
    mask.check_against(model)?;
    run(model, dataset, config, Some(mask), dev)
}

fn run(
    initial: &Model,
    dataset: &FeatureSet,
    config: &TrainConfig,
    mask: Option<&PruneMask>,
    dev: Option<DevSet<'_>>,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Capacity("training set is empty".into()));
    }
    let hp = config.hyperparams();
    let proximal = config.group_update == GroupUpdate::Proximal && hp.lambda_gs > 0.0;
    let step_hp = if proximal {
        Hyperparams { lambda_gs: 0.0, ..hp }
    } else {
        hp
    };
    let sampler = PairSampler::new(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = initial.clone();
    let mut velocity = ParamGrads::zeros(&model);
    if let Some(mask) = mask {
        zero_dropped(&mut model, &mut velocity, mask);
    }
    let steps = config.steps_per_epoch(dataset);
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let (mut total, mut data, mut gl) = (0.0, 0.0, 0.0);
        for step in 1..=steps {
            let batch = sampler.batch(config.batch_size, config.genuine_ratio, &mut rng)?;
            let (mut loss, grads) = total_loss(&model, &batch, &step_hp)?;
            loss.total += (hp.lambda_gs - step_hp.lambda_gs) * loss.group_lasso;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: loss.total,
                });
            }
            apply_step(&mut model, &grads, &mut velocity, config.learning_rate, config.momentum);
            if proximal {
                let zeroed = group_prox(&mut model, config.learning_rate * hp.lambda_gs);
                reset_velocity(&mut velocity, &zeroed);
            }
            if let Some(mask) = mask {
                zero_dropped(&mut model, &mut velocity, mask);
            }
            total += loss.total;
            data += loss.data;
            gl += loss.group_lasso;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                step: steps,
                loss: f64::NAN,
            });
        }
        let n = steps as f64;
        let dev_eer = match dev {
            Some(d) if epoch % config.eval_every == 0 || epoch == config.epochs => {
                Some(evaluate(&model, d.trials, d.features)?.eer)
            }
            _ => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            total_loss: total / n,
            data_loss: data / n,
            group_lasso: gl / n,
            sparsity_fraction: sparsity_stats(&model, config.prune_tau).total,
            dev_eer,
        });
    }
    Ok((model, log))
}

/// Mean contrastive loss of `model` on a fixed pair set.
pub fn evaluation_loss(model: &Model, pairs: &PairBatch<'_>, eta: f64) -> Result<f64> {
    data_loss(model, pairs, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Utterance;
    use crate::tensor::Tensor;

    fn toy_set(speakers: usize, utts: usize) -> FeatureSet {
        let mut items = Vec::new();
        for s in 0..speakers {
            for u in 0..utts {
                items.push(Utterance {
                    speaker_id: format!("s{s}"),
                    utt_id: format!("u{u}"),
                    features: Tensor::full(&[1], (s * 100 + u) as f64),
                });
            }
        }
        FeatureSet::new(items)
    }

    #[test]
    fn momentum_step_arithmetic() {
        let (mut w, mut v) = (vec![1.0], vec![0.0]);
        sgd_momentum_step(&mut w, &[1.0], &mut v, 0.1, 0.0);
        assert!((w[0] - 0.9).abs() < 1e-15);

        let (mut w, mut v) = (vec![2.0], vec![0.5]);
        sgd_momentum_step(&mut w, &[0.3], &mut v, 0.1, 0.9);
        sgd_momentum_step(&mut w, &[-0.2], &mut v, 0.1, 0.9);
        let v1 = 0.9 * 0.5 - 0.1 * 0.3;
        let v2 = 0.9 * v1 - 0.1 * -0.2;
        assert_eq!(v[0], v2);
        assert_eq!(w[0], 2.0 + v1 + v2);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut w, mut v) = (vec![1.5, -2.0], vec![0.0, 0.0]);
        sgd_momentum_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.9);
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn batch_composition_and_labels() {
        let set = toy_set(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_pair_batch(&set, 8, 0.5, &mut rng).unwrap();
        let genuine = batch.pairs.iter().filter(|p| p.label == PairLabel::Genuine).count();
        assert_eq!(genuine, 4);
        for _ in 0..125 {
            let batch = sample_pair_batch(&set, 8, 0.5, &mut rng).unwrap();
            for p in &batch.pairs {
                let (a, b) = (p.x1.data()[0] as usize / 100, p.x2.data()[0] as usize / 100);
                assert_eq!(a == b, p.label == PairLabel::Genuine);
                assert_ne!(p.x1.data()[0], p.x2.data()[0]);
            }
        }
    }

    #[test]
    fn same_rng_state_same_batch() {
        let set = toy_set(3, 4);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ba = sample_pair_batch(&set, 10, 0.3, &mut a).unwrap();
        let bb = sample_pair_batch(&set, 10, 0.3, &mut b).unwrap();
        for (p, q) in ba.pairs.iter().zip(&bb.pairs) {
            assert_eq!((p.x1, p.x2, p.label), (q.x1, q.x2, q.label));
        }
    }

    #[test]
    fn capacity_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_pair_batch(&toy_set(3, 1), 4, 0.5, &mut rng),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            sample_pair_batch(&toy_set(1, 3), 4, 0.5, &mut rng),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { genuine_ratio: 1.0, ..Default::default() },
            TrainConfig { genuine_ratio: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn log_csv_leaves_missing_eer_blank() {
        let log = TrainLog {
            epochs: vec![EpochLog {
                epoch: 1,
                total_loss: 0.5,
                data_loss: 0.25,
                group_lasso: 2.0,
                sparsity_fraction: 0.0,
                dev_eer: None,
            }],
        };
        assert_eq!(
            log.to_csv(),
            "epoch,total_loss,data_loss,group_lasso,sparsity_fraction,dev_eer\n1,0.5,0.25,2,0,\n"
        );
    }
}
