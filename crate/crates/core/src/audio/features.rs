use std::io::{Read, Write};
use std::path::Path;

use super::spectrogram::{spectrogram, N_BINS};
use super::vad::vad_trim;
use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Time columns of a fitted spectrogram.
pub const N_FRAMES: usize = 100;
pub const CUBE_SHAPE: [usize; 3] = [3, N_BINS, N_FRAMES];

pub const FCUB_MAGIC: &[u8; 4] = b"FCUB";
pub const FCUB_VERSION: u32 = 1;

const DELTA_WINDOW: usize = 2;
const VAR_FLOOR: f64 = 1e-8;

/// Static log-spectrogram, first and second deltas stacked on the channel
/// axis, each channel normalized to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube(Tensor);

impl FeatureCube {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape() != CUBE_SHAPE {
            return Err(Error::Shape(format!(
                "feature cube shape {:?}, expected {CUBE_SHAPE:?}",
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Domain("feature cube contains non-finite values".into()));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Index into `0..len` for a position `p` of a symmetric (edge-excluded)
/// reflection of the sequence, repeating the reflection as needed.
fn reflect_index(p: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let i = p.rem_euclid(period);
    if i < len as isize {
        i as usize
    } else {
        (period - i) as usize
    }
}

/// Brings a `[256, T]` spectrogram to exactly 100 columns: reflect-padding
/// split evenly (extra column on the right) when short, centre-cropping when
/// long.
pub fn fit_time(spec: &Tensor) -> Result<Tensor> {
    spec.expect_rank(2, "fit_time")?;
    let (rows, t) = (spec.shape()[0], spec.shape()[1]);
    if t == N_FRAMES {
        return Ok(spec.clone());
    }
    let mut out = Tensor::zeros(&[rows, N_FRAMES]);
    let src = spec.data();
    let dst = out.data_mut();
    if t > N_FRAMES {
        let start = (t - N_FRAMES) / 2;
        for r in 0..rows {
            dst[r * N_FRAMES..][..N_FRAMES].copy_from_slice(&src[r * t + start..][..N_FRAMES]);
        }
    } else {
        let left = ((N_FRAMES - t) / 2) as isize;
        for r in 0..rows {
            let row = &src[r * t..][..t];
            for (j, d) in dst[r * N_FRAMES..][..N_FRAMES].iter_mut().enumerate() {
                *d = row[reflect_index(j as isize - left, t)];
            }
        }
    }
    Ok(out)
}

/// Regression deltas along the time axis with a +-2 frame window and
/// replicated edges:
/// `d_t = sum_{n=1..2} n (c_{t+n} - c_{t-n}) / (2 sum_{n=1..2} n^2)`.
pub fn deltas(spec: &Tensor) -> Result<Tensor> {
    spec.expect_rank(2, "deltas")?;
    let (rows, t) = (spec.shape()[0], spec.shape()[1]);
    let denom = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Tensor::zeros(&[rows, t]);
    let last = t as isize - 1;
    for (row, drow) in spec.data().chunks_exact(t).zip(out.data_mut().chunks_exact_mut(t)) {
        for (i, d) in drow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for n in 1..=DELTA_WINDOW {
                let fwd = (i as isize + n as isize).min(last) as usize;
                let back = (i as isize - n as isize).max(0) as usize;
                acc += n as f64 * (row[fwd] - row[back]);
            }
            *d = acc / denom;
        }
    }
    Ok(out)
}

/// Full feature pipeline for one utterance.
///
/// Applies VAD at `vad_threshold`, keeps at most the first second of voiced
/// audio, then builds and normalizes the `[3, 256, 100]` cube.
pub fn feature_cube(clip: &AudioClip, vad_threshold: f64) -> Result<FeatureCube> {
    let voiced = vad_trim(clip, vad_threshold)?;
    let one_second = SAMPLE_RATE as usize;
    let voiced = if voiced.len() > one_second {
        AudioClip::new(voiced.samples()[..one_second].to_vec(), voiced.sample_rate())?
    } else {
        voiced
    };
    let stat = fit_time(&spectrogram(&voiced)?)?;
    let d1 = deltas(&stat)?;
    let d2 = deltas(&d1)?;

    let plane = N_BINS * N_FRAMES;
    let mut data = Vec::with_capacity(3 * plane);
    for channel in [&stat, &d1, &d2] {
        let x = channel.data();
        let mean = x.iter().sum::<f64>() / plane as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv_std = 1.0 / var.max(VAR_FLOOR).sqrt();
        data.extend(x.iter().map(|v| (v - mean) * inv_std));
    }
    FeatureCube::new(Tensor::new(&CUBE_SHAPE, data)?)
}

pub fn write_fcub(path: impl AsRef<Path>, cube: &FeatureCube) -> Result<()> {
    let path = path.as_ref();
    let t = cube.tensor();
    let mut buf = Vec::with_capacity(24 + 8 * t.len());
    buf.extend_from_slice(FCUB_MAGIC);
    buf.extend_from_slice(&FCUB_VERSION.to_le_bytes());
    buf.extend_from_slice(&3u32.to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_fcub(path: impl AsRef<Path>) -> Result<FeatureCube> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::FeatureFile(format!("{}: {msg}", path.display()));
    if bytes.len() < 24 || &bytes[..4] != FCUB_MAGIC {
        return Err(bad("missing FCUB header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != FCUB_VERSION {
        return Err(Error::Version {
            kind: "feature file",
            found: version,
            expected: FCUB_VERSION,
        });
    }
    if word(2) != 3 {
        return Err(bad("expected 3 dimensions"));
    }
    let shape = [word(3) as usize, word(4) as usize, word(5) as usize];
    if shape != CUBE_SHAPE {
        return Err(bad(&format!("shape {shape:?}, expected {CUBE_SHAPE:?}")));
    }
    let n: usize = shape.iter().product();
    let body = &bytes[24..];
    if body.len() != 8 * n {
        return Err(bad(&format!("payload of {} bytes, expected {}", body.len(), 8 * n)));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureCube::new(Tensor::new(&shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, t: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let mut x = Tensor::zeros(&[rows, t]);
        for r in 0..rows {
            for c in 0..t {
                x.set(&[r, c], f(r, c));
            }
        }
        x
    }

    #[test]
    fn fit_time_identity_at_100() {
        let x = ramp(4, 100, |r, c| (r * 1000 + c) as f64);
        assert_eq!(fit_time(&x).unwrap(), x);
    }

    #[test]
    fn fit_time_reflects_98_to_100() {
        let x = ramp(3, 98, |r, c| (r * 1000 + c) as f64);
        let y = fit_time(&x).unwrap();
        for r in 0..3 {
            assert_eq!(y.get(&[r, 0]), x.get(&[r, 1]));
            for c in 0..98 {
                assert_eq!(y.get(&[r, c + 1]), x.get(&[r, c]));
            }
            assert_eq!(y.get(&[r, 99]), x.get(&[r, 96]));
        }
    }

    #[test]
    fn fit_time_center_crops_120() {
        let x = ramp(2, 120, |r, c| (r * 1000 + c) as f64);
        let y = fit_time(&x).unwrap();
        for c in 0..100 {
            assert_eq!(y.get(&[1, c]), x.get(&[1, c + 10]));
        }
    }

    #[test]
    fn fit_time_handles_very_short_input() {
        let x = ramp(1, 3, |_, c| c as f64);
        let y = fit_time(&x).unwrap();
        // reflection of [0,1,2] continues ...,1,0,1,2,1,0,1,2,...
        for c in 0..100 {
            let v = y.get(&[0, c]);
            assert!((0.0..=2.0).contains(&v));
        }
        assert_eq!(y.get(&[0, 48]), 0.0);
        assert_eq!(y.get(&[0, 49]), 1.0);
        assert_eq!(y.get(&[0, 50]), 2.0);
        assert_eq!(y.get(&[0, 51]), 1.0);
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let x = Tensor::full(&[5, 100], 3.25);
        assert!(deltas(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deltas_of_ramp_are_slope_inside() {
        let s = 0.75;
        let x = ramp(2, 100, |r, c| r as f64 + s * c as f64);
        let d = deltas(&x).unwrap();
        for c in 2..98 {
            assert!((d.get(&[0, c]) - s).abs() < 1e-12);
            assert!((d.get(&[1, c]) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_index_matches_numpy_reflect() {
        // numpy.pad([0,1,2,3], 5, mode="reflect")
        let expected = [1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2];
        for (j, &e) in expected.iter().enumerate() {
            assert_eq!(reflect_index(j as isize - 5, 4), e);
        }
    }

    #[test]
    fn fcub_round_trip_and_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fcub");
        let data: Vec<f64> = (0..76_800).map(|i| (i as f64 * 0.37).sin()).collect();
        let cube = FeatureCube::new(Tensor::new(&CUBE_SHAPE, data).unwrap()).unwrap();
        write_fcub(&p, &cube).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 24 + 8 * 76_800);
        assert_eq!(read_fcub(&p).unwrap(), cube);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(1000);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_fcub(&p), Err(Error::FeatureFile(_))));

        bytes[4] = 2;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_fcub(&p), Err(Error::Version { found: 2, .. })));
    }
}
