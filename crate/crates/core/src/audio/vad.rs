use super::AudioClip;
use crate::error::{Error, Result};

/// VAD frame length in samples (10 ms at 16 kHz).
pub const VAD_FRAME: usize = 160;

pub const DEFAULT_VAD_THRESHOLD: f64 = 0.05;

/// Energy-based voice activity trimming.
///
/// The clip is cut into 10 ms frames (the last one may be shorter). A frame is
/// kept when its mean-square energy is at least `rel_threshold` times the
/// largest frame energy of the clip; kept frames are concatenated in order.
pub fn vad_trim(clip: &AudioClip, rel_threshold: f64) -> Result<AudioClip> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "VAD threshold {rel_threshold} outside (0, 1)"
        )));
    }
    let energies: Vec<f64> = clip
        .samples()
        .chunks(VAD_FRAME)
        .map(|f| f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64)
        .collect();
    let max = energies.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyVoice);
    }
    let cutoff = rel_threshold * max;
    let kept: Vec<f64> = clip
        .samples()
        .chunks(VAD_FRAME)
        .zip(&energies)
        .filter(|(_, &e)| e >= cutoff)
        .flat_map(|(f, _)| f.iter().copied())
        .collect();
    AudioClip::new(kept, clip.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_is_empty_voice() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        assert!(matches!(vad_trim(&clip, 0.05), Err(Error::EmptyVoice)));
    }

    #[test]
    fn uniform_energy_is_unchanged() {
        let s: Vec<f64> = (0..16_000).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let clip = AudioClip::new(s, 16_000).unwrap();
        assert_eq!(vad_trim(&clip, 0.05).unwrap(), clip);
    }

    #[test]
    fn tone_then_silence_keeps_half() {
        let mut s: Vec<f64> = (0..8_000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        s.extend(std::iter::repeat_n(0.0, 8_000));
        let clip = AudioClip::new(s, 16_000).unwrap();
        let kept = vad_trim(&clip, 0.1).unwrap();
        assert!((kept.len() as i64 - 8_000).abs() <= VAD_FRAME as i64);
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        let clip = AudioClip::new(vec![0.1; 320], 16_000).unwrap();
        assert!(vad_trim(&clip, 0.0).is_err());
        assert!(vad_trim(&clip, 1.0).is_err());
    }
}
