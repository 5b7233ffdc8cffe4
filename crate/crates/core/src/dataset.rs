//! Collections of labeled feature cubes and the manifest files that list them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_fcub, FeatureCube};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One row of a `speaker_id,utt_id,path` manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub speaker_id: String,
    pub utt_id: String,
    pub path: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            _ => unreachable!(),
        }
    } else {
        Error::Config(format!("{}: {err}", path.display()))
    }
}

/// Resolves a manifest path relative to the manifest's directory.
pub fn resolve(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub utt_id: String,
    pub features: Tensor,
}

/// Utterances with dense speaker indices in order of first appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    items: Vec<Utterance>,
    speaker_of: Vec<usize>,
    speaker_names: Vec<String>,
}

impl FeatureSet {
    pub fn new(items: Vec<Utterance>) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut speaker_names = Vec::new();
        let speaker_of = items
            .iter()
            .map(|u| {
                *index.entry(u.speaker_id.clone()).or_insert_with(|| {
                    speaker_names.push(u.speaker_id.clone());
                    speaker_names.len() - 1
                })
            })
            .collect();
        Self {
            items,
            speaker_of,
            speaker_names,
        }
    }

    pub fn from_cubes(items: Vec<(String, String, FeatureCube)>) -> Self {
        Self::new(
            items
                .into_iter()
                .map(|(speaker_id, utt_id, cube)| Utterance {
                    speaker_id,
                    utt_id,
                    features: cube.into_tensor(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Utterance] {
        &self.items
    }

    pub fn features(&self, i: usize) -> &Tensor {
        &self.items[i].features
    }

    /// Speaker index of every utterance.
    pub fn speaker_labels(&self) -> &[usize] {
        &self.speaker_of
    }

    pub fn num_speakers(&self) -> usize {
        self.speaker_names.len()
    }

    pub fn speaker_names(&self) -> &[String] {
        &self.speaker_names
    }

    /// Utterance indices grouped by speaker index.
    pub fn by_speaker(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_speakers()];
        for (i, &s) in self.speaker_of.iter().enumerate() {
            groups[s].push(i);
        }
        groups
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self::new(
            self.items
                .iter()
                .enumerate()
                .filter(|&(i, _)| keep(i))
                .map(|(_, u)| u.clone())
                .collect(),
        )
    }

    /// Splits off the last `dev_speakers` speakers (by first appearance) as a
    /// disjoint development set.
    pub fn split_speakers(&self, dev_speakers: usize) -> Result<(Self, Self)> {
        if dev_speakers == 0 || dev_speakers >= self.num_speakers() {
            return Err(Error::Config(format!(
                "cannot hold out {dev_speakers} of {} speakers",
                self.num_speakers()
            )));
        }
        let first_dev = self.num_speakers() - dev_speakers;
        let train = self.subset(|i| self.speaker_of[i] < first_dev);
        let dev = self.subset(|i| self.speaker_of[i] >= first_dev);
        Ok((train, dev))
    }

    /// Loads every FCUB file listed in a manifest.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let rows = read_manifest(manifest)?;
        let items = rows
            .par_iter()
            .map(|row| {
                let cube = read_fcub(resolve(manifest, &row.path))?;
                Ok(Utterance {
                    speaker_id: row.speaker_id.clone(),
                    utt_id: row.utt_id.clone(),
                    features: cube.into_tensor(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(s: &str, u: &str) -> Utterance {
        Utterance {
            speaker_id: s.into(),
            utt_id: u.into(),
            features: Tensor::zeros(&[1]),
        }
    }

    #[test]
    fn speaker_indices_follow_first_appearance() {
        let set = FeatureSet::new(vec![item("b", "1"), item("a", "1"), item("b", "2")]);
        assert_eq!(set.speaker_labels(), &[0, 1, 0]);
        assert_eq!(set.by_speaker(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn speaker_split_is_disjoint() {
        let items = (0..4)
            .flat_map(|s| (0..3).map(move |u| item(&format!("s{s}"), &format!("u{u}"))))
            .collect();
        let set = FeatureSet::new(items);
        let (train, dev) = set.split_speakers(1).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(dev.len(), 3);
        assert_eq!(dev.speaker_names(), &["s3".to_string()]);
        assert!(set.split_speakers(4).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        let rows = vec![ManifestRow {
            speaker_id: "spk000".into(),
            utt_id: "utt001".into(),
            path: "spk000/utt001.wav".into(),
        }];
        write_manifest(&p, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "speaker_id,utt_id,path\nspk000,utt001,spk000/utt001.wav\n"
        );
        assert_eq!(read_manifest(&p).unwrap(), rows);
        assert_eq!(resolve(&p, "x/y.wav"), dir.path().join("x/y.wav"));
    }
}
