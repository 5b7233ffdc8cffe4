use rustfft::{num_complex::Complex, FftPlanner};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 25 ms analysis window.
pub const WINDOW_LENGTH: usize = 400;
/// 10 ms hop, giving 15 ms of overlap between consecutive windows.
pub const HOP_LENGTH: usize = 160;
pub const FFT_SIZE: usize = 512;
/// Bins 0..256 of the 512-point transform; the Nyquist bin is dropped.
pub const N_BINS: usize = 256;

const LOG_FLOOR: f64 = 1e-10;

fn hamming(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Number of frames for a clip of `len` samples.
pub(crate) fn frame_count(len: usize) -> usize {
    (len - WINDOW_LENGTH) / HOP_LENGTH + 1
}

/// Log-magnitude spectrogram `[256, T]`, `T = floor((len - 400) / 160) + 1`.
///
/// Each frame is Hamming-windowed, zero-padded to 512 points and transformed;
/// entries are `ln(|X_k| + 1e-10)` for bins `k = 0..256`.
pub fn spectrogram(clip: &AudioClip) -> Result<Tensor> {
    let x = clip.samples();
    if x.len() < WINDOW_LENGTH {
        return Err(Error::Shape(format!(
            "clip of {} samples is shorter than one {WINDOW_LENGTH}-sample window",
            x.len()
        )));
    }
    let frames = frame_count(x.len());
    let window = hamming(WINDOW_LENGTH);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Tensor::zeros(&[N_BINS, frames]);
    let o = out.data_mut();
    for t in 0..frames {
        let frame = &x[t * HOP_LENGTH..][..WINDOW_LENGTH];
        for (b, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        buf[WINDOW_LENGTH..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..N_BINS].iter().enumerate() {
            o[k * frames + t] = (c.norm() + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}
