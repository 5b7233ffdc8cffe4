use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svkit_core::audio::{feature_cube, load_wav, read_fcub, DEFAULT_VAD_THRESHOLD};
use svkit_core::dataset::{read_manifest, FeatureSet};
use svkit_core::eval::{evaluate, make_trials};
use svkit_core::network::{build_model, load_checkpoint, ModelConfig};

fn svkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svkit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = svkit(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_and_extract(dir: &Path, speakers: usize, utts: usize) -> PathBuf {
    let wav = dir.join("wav");
    let feat = dir.join("feat");
    ok(&["synth", "--speakers", &speakers.to_string(), "--utts", &utts.to_string(), "--seed", "4", "--out", s(&wav)]);
    ok(&["extract", "--manifest", s(&wav.join("manifest.csv")), "--out", s(&feat)]);
    feat
}

fn write_config(dir: &Path, feat: &Path, extra_train: &str, dev_speakers: usize) -> PathBuf {
    write_config_lr(dir, feat, extra_train, dev_speakers, 0.05)
}

fn write_config_lr(dir: &Path, feat: &Path, extra_train: &str, dev_speakers: usize, lr: f64) -> PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
  "run_id": "t",
  "model": {{"conv_widths": [2, 3], "seed": 5}},
  "train": {{"epochs": 1, "batch_size": 8, "learning_rate": {lr}, "seed": 2{extra_train}}},
  "prune": {{"tau": 0.001, "fine_tune_epochs": 1}},
  "eval": {{"n_genuine": 12, "n_impostor": 12, "seed": 3, "dev_speakers": {dev_speakers}}},
  "paths": {{"data_dir": "{}", "out_dir": "{}"}}
}}"#,
        s(feat),
        s(&dir.join("out"))
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_writes_wavs_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--speakers", "2", "--utts", "2", "--seed", "9", "--out", s(out)]);
    }
    let rows = read_manifest(a.join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!(a.join(&row.path).is_file());
        assert_eq!(fs::read(a.join(&row.path)).unwrap(), fs::read(b.join(&row.path)).unwrap());
    }
    assert_eq!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(b.join("manifest.csv")).unwrap());
}

#[test]
fn manifest_row_count_is_speakers_times_utterances() {
    let dir = tempfile::tempdir().unwrap();
    for (n, m) in [(1, 7), (3, 1), (4, 3)] {
        let out = dir.path().join(format!("{n}x{m}"));
        ok(&["synth", "--speakers", &n.to_string(), "--utts", &m.to_string(), "--out", s(&out)]);
        assert_eq!(read_manifest(out.join("manifest.csv")).unwrap().len(), n * m);
    }
}

#[test]
fn extract_matches_the_library_and_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("wav");
    ok(&["synth", "--speakers", "2", "--utts", "2", "--seed", "1", "--out", s(&wav)]);
    let good = dir.path().join("good");
    ok(&["extract", "--manifest", s(&wav.join("manifest.csv")), "--out", s(&good)]);
    let rows = read_manifest(good.join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let clip = load_wav(wav.join("spk001/utt000.wav")).unwrap();
    let expected = feature_cube(&clip, DEFAULT_VAD_THRESHOLD).unwrap();
    assert_eq!(read_fcub(good.join("spk001/utt000.fcub")).unwrap(), expected);

    fs::write(wav.join("spk000/utt001.wav"), b"not a wav file").unwrap();
    let bad = dir.path().join("bad");
    let out = svkit(&["extract", "--manifest", s(&wav.join("manifest.csv")), "--out", s(&bad)]);
    assert!(!out.status.success());
    let errors = fs::read_to_string(bad.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 2, "{errors}");
    assert!(errors.contains("spk000,utt001"));
    assert_eq!(read_manifest(bad.join("manifest.csv")).unwrap().len(), 3);
    assert_eq!(fs::read(bad.join("spk001/utt000.fcub")).unwrap(), fs::read(good.join("spk001/utt000.fcub")).unwrap());
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let feat = dir.path().join("feat");
    fs::create_dir(&feat).unwrap();
    let cfg = write_config(dir.path(), &feat, r#", "learning_rat": 0.1"#, 1);
    let out = svkit(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`train.learning_rat`"), "{err}");

    let cfg = write_config(dir.path(), &dir.path().join("missing"), "", 1);
    let err = String::from_utf8_lossy(&svkit(&["train", "--config", s(&cfg)]).stderr).into_owned();
    assert!(err.contains("paths.data_dir"), "{err}");
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth_and_extract(dir.path(), 4, 4);
    let cfg = write_config(dir.path(), &feat, "", 2);
    ok(&["train", "--config", s(&cfg)]);
    let ckpt = dir.path().join("out/baseline.ssvw");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    let bad = dir.path().join("bad.ssvw");
    fs::write(&bad, bytes).unwrap();
    let out = svkit(&["eval", "--config", s(&cfg), "--checkpoint", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn zero_learning_rate_evaluates_like_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth_and_extract(dir.path(), 4, 4);
    let cfg = write_config_lr(dir.path(), &feat, "", 2, 0.0);
    ok(&["train", "--config", s(&cfg)]);
    ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&dir.path().join("out/baseline.ssvw"))]);
    let report = fs::read_to_string(dir.path().join("out/baseline_eval.csv")).unwrap();
    let eer: f64 = report.lines().find_map(|l| l.strip_prefix("eer,")).unwrap().parse().unwrap();

    let initial = build_model(&ModelConfig { conv_widths: vec![2, 3], seed: 5, ..Default::default() }).unwrap();
    assert_eq!(load_checkpoint(dir.path().join("out/baseline.ssvw")).unwrap(), initial);
    let (_, dev) = FeatureSet::load(feat.join("manifest.csv")).unwrap().split_speakers(2).unwrap();
    let trials = make_trials(dev.speaker_labels(), 12, 12, 3).unwrap();
    assert_eq!(eer, evaluate(&initial, &trials, &dev).unwrap().eer);
}

#[test]
fn zero_tau_compaction_keeps_every_shape() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth_and_extract(dir.path(), 4, 4);
    let cfg = write_config(dir.path(), &feat, "", 2);
    let text = fs::read_to_string(&cfg).unwrap().replace("\"tau\": 0.001", "\"tau\": 0.0");
    fs::write(&cfg, text).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let ckpt = dir.path().join("out/baseline.ssvw");
    ok(&["prune", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    ok(&["compact", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--mask", s(&dir.path().join("out/baseline_mask.json"))]);
    let dense = load_checkpoint(&ckpt).unwrap();
    let compacted = load_checkpoint(dir.path().join("out/baseline_compact.ssvw")).unwrap();
    assert_eq!(dense.specs(), compacted.specs());
}

#[test]
fn full_pipeline_on_twenty_speakers_writes_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth_and_extract(dir.path(), 20, 10);
    let cfg = write_config(dir.path(), &feat, r#", "lambda_gs": 2.0"#, 5);
    let out = dir.path().join("out");
    ok(&["train", "--config", s(&cfg), "--lambda-gs", "0"]);
    ok(&["train", "--config", s(&cfg)]);
    for m in ["baseline", "ssl"] {
        ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&out.join(format!("{m}.ssvw")))]);
    }
    ok(&["compact", "--config", s(&cfg), "--checkpoint", s(&out.join("ssl.ssvw")), "--fine-tune"]);
    ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&out.join("ssl_compact.ssvw"))]);
    ok(&[
        "bench", "--config", s(&cfg), "--dense", s(&out.join("ssl.ssvw")),
        "--compact", s(&out.join("ssl_compact.ssvw")),
    ]);
    ok(&["report", "--config", s(&cfg)]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "run_id,model_variant,eer,sparsity_fraction,mean_speedup");
    assert!(lines.iter().any(|l| l.starts_with("t,baseline,")));
    assert!(lines.iter().any(|l| l.starts_with("t,ssl,")));
    let compact_row = lines.iter().find(|l| l.starts_with("t,ssl_compact,")).unwrap();
    assert!(!compact_row.ends_with(','), "bench speedup missing: {compact_row}");
}
