use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use svkit_core::audio::{feature_cube, load_wav, write_fcub, CUBE_SHAPE};
use svkit_core::dataset::{read_manifest, resolve, write_manifest, FeatureSet, ManifestRow};
use svkit_core::eval::{evaluate, make_trials, TrialSet};
use svkit_core::network::{build_model, load_checkpoint, save_checkpoint, Model};
use svkit_core::sparsity::{bench_models, compact as compact_model, group_norms, prune_mask, sparsity_stats, PruneMask};
use svkit_core::synth::synth_dataset;
use svkit_core::trainer::{fine_tune, train_with_dev, DevSet, TrainConfig};

use crate::config::RunConfig;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("{} has no usable file name", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

struct Data {
    train: FeatureSet,
    dev: FeatureSet,
    trials: TrialSet,
}

impl Data {
    fn load(config: &RunConfig) -> Result<Self> {
        let manifest = config.manifest();
        let all = FeatureSet::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
        let (train, dev) = all.split_speakers(config.eval.dev_speakers)?;
        let trials = make_trials(dev.speaker_labels(), config.eval.n_genuine, config.eval.n_impostor, config.eval.seed)?;
        Ok(Self { train, dev, trials })
    }

    fn dev(&self) -> DevSet<'_> {
        DevSet {
            features: &self.dev,
            trials: &self.trials,
        }
    }
}

pub fn synth(speakers: usize, utts: usize, seed: u64, out: &Path) -> Result<ExitCode> {
    if speakers == 0 || utts == 0 {
        bail!("--speakers and --utts must be >= 1");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows = synth_dataset(speakers, utts, seed).write_wavs(out)?;
    write_manifest(out.join("manifest.csv"), &rows)?;
    println!("wrote {} clips to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn extract(manifest: &Path, out: &Path, vad_threshold: f64) -> Result<ExitCode> {
    let rows = read_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let results: Vec<Result<ManifestRow, String>> = rows
        .par_iter()
        .map(|row| {
            let rel = format!("{}/{}.fcub", row.speaker_id, row.utt_id);
            let run = || -> Result<()> {
                let clip = load_wav(resolve(manifest, &row.path))?;
                let cube = feature_cube(&clip, vad_threshold)?;
                let target = out.join(&rel);
                if let Some(dir) = target.parent() {
                    fs::create_dir_all(dir)?;
                }
                write_fcub(&target, &cube)?;
                Ok(())
            };
            run().map(|()| ManifestRow { path: rel, ..row.clone() }).map_err(|e| format!("{e:#}"))
        })
        .collect();

    let mut ok = Vec::new();
    let mut errors = csv::Writer::from_writer(Vec::new());
    errors.write_record(["speaker_id", "utt_id", "path", "error"])?;
    let mut failed = 0;
    for (row, result) in rows.iter().zip(results) {
        match result {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed += 1;
                errors.write_record([&row.speaker_id, &row.utt_id, &row.path, &e])?;
            }
        }
    }
    write_manifest(out.join("manifest.csv"), &ok)?;
    write(&out.join("errors.csv"), errors.into_inner()?)?;
    println!("extracted {} of {} clips into {}", ok.len(), rows.len(), out.display());
    if failed > 0 {
        eprintln!("{failed} clip(s) failed; see {}", out.join("errors.csv").display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train(config_path: &Path, lambda_gs: Option<f64>, name: Option<String>) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let mut train_cfg = config.train.clone();
    if let Some(l) = lambda_gs {
        train_cfg.lambda_gs = l;
        train_cfg.validate().context("--lambda-gs")?;
    }
    let name = name.unwrap_or_else(|| if train_cfg.lambda_gs == 0.0 { "baseline" } else { "ssl" }.into());
    let data = Data::load(&config)?;
    let model = build_model(&config.model)?;
    let (trained, log) = train_with_dev(&model, &data.train, &train_cfg, Some(data.dev()))?;
    let ckpt = config.out(&format!("{name}.ssvw"));
    save_checkpoint(&trained, &ckpt)?;
    write(&config.out(&format!("{name}_train_log.csv")), log.to_csv())?;
    println!(
        "{name}: {} epochs, dev EER {:.4}, checkpoint {}",
        log.epochs.len(),
        log.last_dev_eer().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn eval(config_path: &Path, checkpoint: &Path) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let name = stem(checkpoint)?;
    let model = load_model(checkpoint)?;
    let data = Data::load(&config)?;
    let report = evaluate(&model, &data.trials, &data.dev)?;
    let sparsity = sparsity_stats(&model, config.prune.tau).total;
    let extra = [
        ("sparsity_fraction", sparsity),
        ("num_parameters", model.num_parameters() as f64),
    ];
    write(&config.out(&format!("{name}_eval.csv")), report.report_csv(&extra))?;
    write(&config.out(&format!("{name}_scores.csv")), report.scores_csv())?;
    write(&config.out(&format!("{name}_det.csv")), report.det_csv())?;
    println!("{name}: EER {:.4} over {} trials", report.eer, report.distances.len());
    Ok(ExitCode::SUCCESS)
}

fn mask_for(model: &Model, tau: f64) -> Result<PruneMask> {
    Ok(prune_mask(&group_norms(model), tau)?.exempt_embedding())
}

pub fn prune(config_path: &Path, checkpoint: &Path) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let name = stem(checkpoint)?;
    let model = load_model(checkpoint)?;
    let report = group_norms(&model);
    let mask = mask_for(&model, config.prune.tau)?;
    write(&config.out(&format!("{name}_group_norms.csv")), report.to_csv())?;
    write(
        &config.out(&format!("{name}_mask.json")),
        serde_json::to_string_pretty(&mask)? + "\n",
    )?;
    let groups: usize = mask.keep.iter().map(Vec::len).sum();
    println!("{name}: dropping {} of {groups} groups at tau {}", mask.dropped(), config.prune.tau);
    Ok(ExitCode::SUCCESS)
}

pub fn compact(config_path: &Path, checkpoint: &Path, mask: Option<&Path>, tune: bool) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let name = stem(checkpoint)?;
    let model = load_model(checkpoint)?;
    let mask = match mask {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing mask {}", p.display()))?
        }
        None => mask_for(&model, config.prune.tau)?,
    };
    let (mut compacted, map) = compact_model(&model, &mask)?;
    if tune {
        let data = Data::load(&config)?;
        let cfg = TrainConfig {
            epochs: config.prune.fine_tune_epochs,
            learning_rate: config.prune.fine_tune_learning_rate,
            lambda_gs: 0.0,
            ..config.train.clone()
        };
        let (tuned, log) = fine_tune(&compacted, &PruneMask::all_keep(&compacted), &data.train, &cfg, Some(data.dev()))?;
        write(&config.out(&format!("{name}_compact_fine_tune_log.csv")), log.to_csv())?;
        compacted = tuned;
    }
    let out = config.out(&format!("{name}_compact.ssvw"));
    save_checkpoint(&compacted, &out)?;
    write(
        &config.out(&format!("{name}_compaction.json")),
        serde_json::to_string_pretty(&map)? + "\n",
    )?;
    println!(
        "{name}: {} -> {} parameters, checkpoint {}",
        model.num_parameters(),
        compacted.num_parameters(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn bench(config_path: &Path, dense: &Path, compacted: &Path, repeats: usize) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let name = stem(compacted)?;
    let result = bench_models(&load_model(dense)?, &load_model(compacted)?, &CUBE_SHAPE, repeats)?;
    write(&config.out(&format!("{name}_bench.csv")), result.to_csv())?;
    for e in &result.entries {
        println!("layer {}: {:.2}x", e.layer, e.speedup);
    }
    Ok(ExitCode::SUCCESS)
}

fn read_metric_table(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    reader
        .records()
        .map(|r| {
            let r = r.with_context(|| format!("parsing {}", path.display()))?;
            Ok((r.get(0).unwrap_or_default().to_owned(), r.get(1).unwrap_or_default().to_owned()))
        })
        .collect()
}

fn mean_speedup(path: &Path) -> Result<Option<f64>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let col = reader
        .headers()?
        .iter()
        .position(|h| h == "speedup")
        .with_context(|| format!("{} has no speedup column", path.display()))?;
    let mut values = Vec::new();
    for r in reader.records() {
        let r = r?;
        values.push(r[col].parse::<f64>().with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

pub fn report(config_path: &Path) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let mut variants: Vec<String> = fs::read_dir(&config.paths.out_dir)?
        .filter_map(|e| e.ok()?.file_name().to_str()?.strip_suffix("_eval.csv").map(str::to_owned))
        .collect();
    variants.sort();
    let mut out = String::from("run_id,model_variant,eer,sparsity_fraction,mean_speedup\n");
    for variant in &variants {
        let table = read_metric_table(&config.out(&format!("{variant}_eval.csv")))?;
        let get = |k: &str| table.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone()).unwrap_or_default();
        let speedup = mean_speedup(&config.out(&format!("{variant}_bench.csv")))?
            .map(|s| s.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{variant},{},{},{speedup}",
            config.run_id,
            get("eer"),
            get("sparsity_fraction")
        );
    }
    write(&config.out("summary.csv"), &out)?;
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}
