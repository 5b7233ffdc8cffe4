mod oracles;

use oracles::*;
use svkit_core::objective::PairLabel;
use svkit_core::synth::*;
use svkit_core::trainer::fixed_pairs;

/// Magnitude spectrum at 1 Hz resolution (a one-second clip) up to `max_hz`.
fn spectrum(x: &[f64], max_hz: usize) -> Vec<f64> {
    (0..=max_hz).map(|k| dft_magnitude(x, k)).collect()
}

#[test]
fn spectral_peak_sits_on_a_harmonic() {
    for seed in 0..4 {
        let profile = synth_speaker(seed);
        let clip = synth_utterance(&profile, 7);
        let f0 = utterance_f0(&profile, 7);
        let mag = spectrum(clip.samples(), 4000);
        let peak = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap() as f64;
        let nearest = (peak / f0).round().max(1.0) * f0;
        assert!((peak - nearest).abs() <= 2.0, "seed {seed}: peak {peak} Hz, f0 {f0}");
    }
}

#[test]
fn utterances_of_a_speaker_share_envelope_peaks() {
    let profile = synth_speaker(21);
    let a = synth_utterance(&profile, 1);
    let b = synth_utterance(&profile, 2);
    assert_ne!(a, b);
    // band energies over 250 Hz bands smooth out the harmonic comb
    let bands = |x: &[f64]| -> Vec<f64> {
        let mag = spectrum(x, 3999);
        mag.chunks(250).map(|c| c.iter().map(|v| v * v).sum()).collect()
    };
    let (ea, eb) = (bands(a.samples()), bands(b.samples()));
    let argmax = |e: &[f64]| (0..e.len()).max_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap();
    assert_eq!(argmax(&ea), argmax(&eb));
    let strongest = |e: &[f64]| {
        let mut idx: Vec<usize> = (0..e.len()).collect();
        idx.sort_by(|&i, &j| e[j].total_cmp(&e[i]));
        let mut top = idx[..3].to_vec();
        top.sort();
        top
    };
    let shared = strongest(&ea).iter().filter(|i| strongest(&eb).contains(i)).count();
    assert!(shared >= 2);
}

#[test]
fn dataset_is_reproducible() {
    let a = synth_dataset(20, 10, 5);
    assert_eq!(a.num_clips(), 200);
    let b = synth_dataset(20, 10, 5);
    assert_eq!(a.speakers, b.speakers);
    assert_eq!(a.utterances, b.utterances);
    assert!(a.utterances.iter().flatten().all(|c| c.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0)));
}

#[test]
fn raw_features_already_separate_speakers() {
    let set = synth_dataset(20, 10, 42).feature_set(0.05).unwrap();
    let pairs = fixed_pairs(&set, 100, 3).unwrap();
    let (mut gen, mut imp) = (Vec::new(), Vec::new());
    for p in &pairs.pairs {
        let d = p
            .x1
            .data()
            .iter()
            .zip(p.x2.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        match p.label {
            PairLabel::Genuine => gen.push(d),
            PairLabel::Impostor => imp.push(d),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&gen) < mean(&imp), "{} !< {}", mean(&gen), mean(&imp));
}

#[test]
fn wav_tree_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(2, 2, 1);
    let rows = ds.write_wavs(dir.path()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3].path, "spk001/utt001.wav");
    for row in &rows {
        let clip = svkit_core::audio::load_wav(dir.path().join(&row.path)).unwrap();
        assert_eq!(clip.len(), 16_000);
    }
}
