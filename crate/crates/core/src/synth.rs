//! Seeded synthetic speakers: harmonic voices shaped by per-speaker formant
//! envelopes, for end-to-end runs without a speech corpus.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::audio::{feature_cube, write_wav, AudioClip, SAMPLE_RATE};
use crate::dataset::{FeatureSet, ManifestRow};
use crate::error::{Error, Result};

pub const F0_RANGE: (f64, f64) = (90.0, 255.0);
/// Sub-ranges for the three formants, ordered and disjoint.
const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (1000.0, 2000.0), (2100.0, 3400.0)];
const GAIN_RANGE: (f64, f64) = (0.4, 1.0);
const FORMANT_WIDTH_HZ: f64 = 150.0;
const ENVELOPE_FLOOR: f64 = 0.02;
const MAX_PARTIAL_HZ: f64 = 4000.0;
const F0_JITTER: f64 = 0.03;
const SNR_DB: f64 = 20.0;
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub f0: f64,
    /// Formant centre frequencies in Hz, strictly increasing.
    pub formants: [f64; 3],
    pub gains: [f64; 3],
    pub seed: u64,
}

impl SpeakerProfile {
    /// Spectral envelope at `freq`: Gaussian bumps at the formants over a
    /// small floor.
    pub fn envelope(&self, freq: f64) -> f64 {
        ENVELOPE_FLOOR
            + self
                .formants
                .iter()
                .zip(&self.gains)
                .map(|(&fc, &g)| g * (-(freq - fc).powi(2) / (2.0 * FORMANT_WIDTH_HZ.powi(2))).exp())
                .sum::<f64>()
    }
}

pub fn synth_speaker(seed: u64) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(F0_RANGE.0..F0_RANGE.1);
    let formants = FORMANT_RANGES.map(|(lo, hi)| rng.random_range(lo..hi));
    let gains = [(); 3].map(|_| rng.random_range(GAIN_RANGE.0..GAIN_RANGE.1));
    SpeakerProfile {
        f0,
        formants,
        gains,
        seed,
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn utterance_rng(profile: &SpeakerProfile, utterance_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(profile.seed, utterance_seed))
}

/// Fundamental frequency of one utterance after its jitter is applied.
pub fn utterance_f0(profile: &SpeakerProfile, utterance_seed: u64) -> f64 {
    let mut rng = utterance_rng(profile, utterance_seed);
    profile.f0 * (1.0 + rng.random_range(-F0_JITTER..F0_JITTER))
}

/// One second of a speaker's voice: jittered harmonics up to 4 kHz weighted
/// by the formant envelope with random phases, plus white noise at 20 dB SNR,
/// peak-normalized to 0.9.
pub fn synth_utterance(profile: &SpeakerProfile, utterance_seed: u64) -> AudioClip {
    let mut rng = utterance_rng(profile, utterance_seed);
    let f0 = profile.f0 * (1.0 + rng.random_range(-F0_JITTER..F0_JITTER));
    let n = SAMPLE_RATE as usize;
    let rate = SAMPLE_RATE as f64;
    let mut x = vec![0.0; n];
    let mut h = 1.0;
    while h * f0 <= MAX_PARTIAL_HZ {
        let freq = h * f0;
        let amp = profile.envelope(freq);
        let phase = rng.random_range(0.0..2.0 * PI);
        let step = 2.0 * PI * freq / rate;
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (step * i as f64 + phase).sin();
        }
        h += 1.0;
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_std = (power / 10f64.powf(SNR_DB / 10.0)).sqrt();
    let noise = Normal::new(0.0, noise_std).expect("finite std");
    x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    x.iter_mut().for_each(|v| *v *= PEAK / peak);
    AudioClip::new(x, SAMPLE_RATE).expect("normalized clip is valid")
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub speakers: Vec<SpeakerProfile>,
    /// `utterances[s][u]` is utterance `u` of speaker `s`.
    pub utterances: Vec<Vec<AudioClip>>,
    pub master_seed: u64,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

pub fn utt_id(u: usize) -> String {
    format!("utt{u:03}")
}

pub fn synth_dataset(n_speakers: usize, n_utterances: usize, master_seed: u64) -> SynthDataset {
    let speakers: Vec<_> = (0..n_speakers)
        .map(|s| synth_speaker(mix(master_seed, s as u64)))
        .collect();
    let utterances = speakers
        .par_iter()
        .map(|p| (0..n_utterances).map(|u| synth_utterance(p, u as u64)).collect())
        .collect();
    SynthDataset {
        speakers,
        utterances,
        master_seed,
    }
}

impl SynthDataset {
    pub fn num_clips(&self) -> usize {
        self.utterances.iter().map(Vec::len).sum()
    }

    /// Writes `<out>/<speaker_id>/<utt_id>.wav` and returns manifest rows with
    /// paths relative to `out`.
    pub fn write_wavs(&self, out: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
        let out = out.as_ref();
        let mut rows = Vec::with_capacity(self.num_clips());
        for (s, clips) in self.utterances.iter().enumerate() {
            let dir = out.join(speaker_id(s));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (u, clip) in clips.iter().enumerate() {
                let rel = format!("{}/{}.wav", speaker_id(s), utt_id(u));
                write_wav(out.join(&rel), clip)?;
                rows.push(ManifestRow {
                    speaker_id: speaker_id(s),
                    utt_id: utt_id(u),
                    path: rel,
                });
            }
        }
        Ok(rows)
    }

    /// Extracts feature cubes for every clip in memory.
    pub fn feature_set(&self, vad_threshold: f64) -> Result<FeatureSet> {
        let jobs: Vec<(usize, usize)> = self
            .utterances
            .iter()
            .enumerate()
            .flat_map(|(s, c)| (0..c.len()).map(move |u| (s, u)))
            .collect();
        let cubes = jobs
            .par_iter()
            .map(|&(s, u)| {
                feature_cube(&self.utterances[s][u], vad_threshold)
                    .map(|cube| (speaker_id(s), utt_id(u), cube))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet::from_cubes(cubes))
    }
}
