//! Audio input and the 3x256x100 feature cube: WAV parsing, energy VAD,
//! log-spectrogram, time fitting and regression deltas.

mod features;
mod spectrogram;
mod vad;
mod wav;

pub use features::{
    deltas, feature_cube, fit_time, read_fcub, write_fcub, FeatureCube, CUBE_SHAPE, FCUB_MAGIC,
    FCUB_VERSION,
};
pub use spectrogram::{spectrogram, FFT_SIZE, HOP_LENGTH, N_BINS, WINDOW_LENGTH};
pub use vad::{vad_trim, DEFAULT_VAD_THRESHOLD, VAD_FRAME};
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at 16 kHz with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedRate(sample_rate));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Domain(format!("audio sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
