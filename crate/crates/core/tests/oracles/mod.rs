//! Slow, direct reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svkit_core::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors of near-zero derivatives.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Largest relative error between `analytic` and central differences of `f`
/// at `coords` coordinates drawn from `rng` (all of them if there are fewer).
pub fn max_fd_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let picks: Vec<usize> = if x.len() <= coords {
        (0..x.len()).collect()
    } else {
        (0..coords).map(|_| rng.random_range(0..x.len())).collect()
    };
    picks
        .into_iter()
        .map(|i| rel_err(central_diff(f, x, i, FD_STEP), analytic[i]))
        .fold(0.0, f64::max)
}

/// Nested-loop cross-correlation: sum over (c, ky, kx) from zero, padded taps
/// skipped, bias added last.
pub fn conv2d_nested(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [c_in, h, w] = input.shape().try_into().unwrap();
    let [f_out, _, kh, kw] = weights.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[f_out, oh, ow]);
    for f in 0..f_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += weights.get(&[f, c, ky, kx]) * input.get(&[c, iy as usize, ix as usize]);
                        }
                    }
                }
                out.set(&[f, oy, ox], acc + bias.data()[f]);
            }
        }
    }
    out
}

pub fn group_lasso_direct(groups: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let mut s = 0.0;
        for v in g {
            s += v * v;
        }
        total += s.sqrt();
    }
    total
}

/// EER by counting FAR/FRR directly at every candidate threshold (sentinels
/// plus midpoints of distinct sorted scores), then reading the first
/// non-negative `FAR - FRR` and interpolating against its predecessor.
pub fn eer_sweep(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut scores: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let lo = scores[0];
    let hi = *scores.last().unwrap();
    let mut thresholds = vec![lo - (1.0 + lo.abs())];
    thresholds.extend(scores.windows(2).map(|p| 0.5 * (p[0] + p[1])));
    thresholds.push(hi + (1.0 + hi.abs()));

    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let fa = impostor.iter().filter(|&&s| s <= t).count() as f64 / impostor.len() as f64;
            let fr = genuine.iter().filter(|&&s| s > t).count() as f64 / genuine.len() as f64;
            (fa, fr)
        })
        .collect();
    let k = rates.iter().position(|(fa, fr)| fa - fr >= 0.0).unwrap();
    let (fa, fr) = rates[k];
    if fa - fr == 0.0 || k == 0 {
        return fa;
    }
    let (pfa, pfr) = rates[k - 1];
    let alpha = (pfr - pfa) / ((fa - fr) - (pfa - pfr));
    pfa + alpha * (fa - pfa)
}

/// Regression delta with window 2 and replicated edges, evaluated term by term.
pub fn deltas_direct(spec: &Tensor) -> Tensor {
    let [rows, t] = spec.shape().try_into().unwrap();
    let mut out = Tensor::zeros(&[rows, t]);
    let at = |r: usize, i: isize| spec.get(&[r, i.clamp(0, t as isize - 1) as usize]);
    for r in 0..rows {
        for i in 0..t as isize {
            let num = 1.0 * (at(r, i + 1) - at(r, i - 1)) + 2.0 * (at(r, i + 2) - at(r, i - 2));
            out.set(&[r, i as usize], num / 10.0);
        }
    }
    out
}

/// Magnitude of the DFT of `x` at integer bin `k`, by direct summation.
pub fn dft_magnitude(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n;
        re += v * ang.cos();
        im += v * ang.sin();
    }
    (re * re + im * im).sqrt()
}
