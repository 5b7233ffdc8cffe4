//! Verification trials, distance scoring, EER and DET curves.
//!
//! Scores are embedding distances: a trial is accepted as genuine when its
//! distance is at most the threshold.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::network::{self, Model};
use crate::objective::PairLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub seed: u64,
}

/// Samples distinct genuine and impostor trials without replacement.
///
/// `speaker_of[i]` is the speaker of utterance `i`. Genuine trials come first,
/// each block ordered by pair enumeration order.
pub fn make_trials(speaker_of: &[usize], n_genuine: usize, n_impostor: usize, seed: u64) -> Result<TrialSet> {
    let n_speakers = speaker_of.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_speakers];
    speaker_of.iter().for_each(|&s| counts[s] += 1);
    if counts.iter().filter(|&&c| c > 0).count() < 2 || counts.contains(&1) {
        return Err(Error::Capacity(
            "trials need at least 2 speakers with at least 2 utterances each".into(),
        ));
    }
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for a in 0..speaker_of.len() {
        for b in a + 1..speaker_of.len() {
            if speaker_of[a] == speaker_of[b] {
                genuine.push((a, b));
            } else {
                impostor.push((a, b));
            }
        }
    }
    if n_genuine > genuine.len() || n_impostor > impostor.len() {
        return Err(Error::Capacity(format!(
            "requested {n_genuine} genuine / {n_impostor} impostor trials, only {} / {} distinct pairs exist",
            genuine.len(),
            impostor.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool: &[(usize, usize)], n: usize, label| {
        let mut chosen = index::sample(&mut rng, pool.len(), n).into_vec();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|i| Trial {
                a: pool[i].0,
                b: pool[i].1,
                label,
            })
            .collect::<Vec<_>>()
    };
    let mut trials = pick(&genuine, n_genuine, PairLabel::Genuine);
    trials.extend(pick(&impostor, n_impostor, PairLabel::Impostor));
    Ok(TrialSet { trials, seed })
}

/// Embedding distance of every trial, in trial order.
///
/// Each utterance referenced by a trial is embedded once.
pub fn score_trials(model: &Model, trials: &TrialSet, features: &FeatureSet) -> Result<Vec<f64>> {
    let mut used: Vec<usize> = trials.trials.iter().flat_map(|t| [t.a, t.b]).collect();
    used.sort_unstable();
    used.dedup();
    if let Some(&bad) = used.iter().find(|&&i| i >= features.len()) {
        return Err(Error::Domain(format!("trial references utterance {bad} of {}", features.len())));
    }
    let embedded = used
        .par_iter()
        .map(|&i| network::embed_tensor(model, features.features(i)))
        .collect::<Result<Vec<_>>>()?;
    let lookup = |i: usize| &embedded[used.binary_search(&i).unwrap()];
    Ok(trials
        .trials
        .iter()
        .map(|t| network::distance(lookup(t.a), lookup(t.b)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    /// Fraction of impostor distances `<= threshold`.
    pub far: f64,
    /// Fraction of genuine distances `> threshold`.
    pub frr: f64,
}

fn check_scores(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Domain("EER needs non-empty genuine and impostor scores".into()));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    Ok(())
}

/// FAR/FRR at every candidate threshold: a sentinel below the lowest score,
/// each midpoint between consecutive distinct scores, and a sentinel above
/// the highest score.
pub fn det_points(genuine: &[f64], impostor: &[f64]) -> Result<Vec<DetPoint>> {
    check_scores(genuine, impostor)?;
    // (score, is_genuine), sorted by score
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let lo = all[0].0;
    let hi = all[all.len() - 1].0;

    let mut points = vec![DetPoint {
        threshold: lo - (1.0 + lo.abs()),
        far: 0.0,
        frr: 1.0,
    }];
    let (mut gen_le, mut imp_le) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                gen_le += 1;
            } else {
                imp_le += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            0.5 * (v + all[i].0)
        } else {
            hi + (1.0 + hi.abs())
        };
        points.push(DetPoint {
            threshold,
            far: imp_le as f64 / ni,
            frr: (ng - gen_le as f64) / ng,
        });
    }
    Ok(points)
}

/// Equal error rate and the threshold where it occurs.
///
/// `FAR - FRR` is non-decreasing over the candidate thresholds. The EER is
/// read at the first candidate where it reaches zero, or linearly
/// interpolated between the two candidates that bracket its sign change.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    let points = det_points(genuine, impostor)?;
    let k = points
        .iter()
        .position(|p| p.far - p.frr >= 0.0)
        .expect("last candidate has FAR = 1, FRR = 0");
    let cur = points[k];
    let diff = cur.far - cur.frr;
    if diff == 0.0 || k == 0 {
        return Ok((cur.far, cur.threshold));
    }
    let prev = points[k - 1];
    let prev_diff = prev.far - prev.frr;
    let alpha = -prev_diff / (diff - prev_diff);
    let rate = prev.far + alpha * (cur.far - prev.far);
    let threshold = prev.threshold + alpha * (cur.threshold - prev.threshold);
    Ok((rate, threshold))
}

/// Scores and error rates of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<PairLabel>,
    pub distances: Vec<f64>,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub eer: f64,
    pub threshold: f64,
    pub det: Vec<DetPoint>,
}

impl EvalReport {
    pub fn from_scores(trials: &TrialSet, distances: Vec<f64>) -> Result<Self> {
        let labels: Vec<_> = trials.trials.iter().map(|t| t.label).collect();
        let split = |want| {
            labels
                .iter()
                .zip(&distances)
                .filter(|(&l, _)| l == want)
                .map(|(_, &d)| d)
                .collect::<Vec<_>>()
        };
        let genuine = split(PairLabel::Genuine);
        let impostor = split(PairLabel::Impostor);
        let (rate, threshold) = eer(&genuine, &impostor)?;
        let det = det_points(&genuine, &impostor)?;
        Ok(Self {
            labels,
            distances,
            genuine,
            impostor,
            eer: rate,
            threshold,
            det,
        })
    }

    /// `trial_id,label,distance`
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("trial_id,label,distance\n");
        for (i, (l, d)) in self.labels.iter().zip(&self.distances).enumerate() {
            out.push_str(&format!("{i},{},{d}\n", l.as_u8()));
        }
        out
    }

    /// `metric,value`
    pub fn report_csv(&self, extra: &[(&str, f64)]) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("eer,{}\n", self.eer));
        out.push_str(&format!("threshold,{}\n", self.threshold));
        out.push_str(&format!("n_genuine,{}\n", self.genuine.len()));
        out.push_str(&format!("n_impostor,{}\n", self.impostor.len()));
        for (k, v) in extra {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    /// `threshold,far,frr`
    pub fn det_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.det {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        out
    }
}

/// Scores `trials` with `model` and computes the EER.
pub fn evaluate(model: &Model, trials: &TrialSet, features: &FeatureSet) -> Result<EvalReport> {
    let distances = score_trials(model, trials, features)?;
    EvalReport::from_scores(trials, distances)
}
