//! Dataset manifests: per-scene metadata and the train/val/test partition.
//!
//! The manifest is a JSON document with two top-level fields, `entries` and
//! `splits`, plus an optional `generator` record for synthetic datasets.
//! File paths inside entries are relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BandId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiBounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub crs_code: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub event_date: NaiveDate,
    pub band_files: BTreeMap<BandId, PathBuf>,
    /// Optional pre-fire acquisition, used by the dNBR baseline.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pre_fire_band_files: BTreeMap<BandId, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delineation_file: Option<PathBuf>,
    pub landcover_file: PathBuf,
    pub cloud_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity_file: Option<PathBuf>,
    pub aoi_bounds: AoiBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Which generator produced a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub prng: String,
    pub seed: u64,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub entries: Vec<SceneEntry>,
    pub splits: Splits,
}

impl DatasetManifest {
    /// Checks that ids are unique and every entry sits in exactly one split with a label file.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::ManifestIntegrity(format!("duplicate entry id {:?}", e.id)));
            }
            if e.delineation_file.is_none() && e.severity_file.is_none() {
                return Err(Error::ManifestIntegrity(format!(
                    "entry {:?} has neither a delineation nor a severity file",
                    e.id
                )));
            }
        }
        let mut assigned = HashSet::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for id in self.splits.ids(split) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::ManifestIntegrity(format!("split lists unknown id {id:?}")));
                }
                if !assigned.insert(id.as_str()) {
                    return Err(Error::ManifestIntegrity(format!("id {id:?} assigned to more than one split")));
                }
            }
        }
        if let Some(missing) = self.entries.iter().find(|e| !assigned.contains(e.id.as_str())) {
            return Err(Error::ManifestIntegrity(format!("id {:?} is not assigned to any split", missing.id)));
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&SceneEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries of one split, in split order.
    pub fn split_entries(&self, split: Split) -> Vec<&SceneEntry> {
        self.splits
            .ids(split)
            .iter()
            .filter_map(|id| self.entry(id))
            .collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-split counts: floor of each fraction, leftovers dealt round-robin
/// starting with train.
pub fn split_counts(n: usize, train_frac: f64, val_frac: f64) -> Result<[usize; 3]> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Split(format!(
            "fractions must be positive and sum below 1, got {train_frac} + {val_frac}"
        )));
    }
    let fracs = [train_frac, val_frac, 1.0 - train_frac - val_frac];
    // The epsilon absorbs representation error such as 10 * (1 - 0.8 - 0.1) = 0.99999...
    let mut counts = fracs.map(|f| (n as f64 * f + 1e-9).floor() as usize);
    let mut i = 0;
    while counts.iter().sum::<usize>() < n {
        counts[i % 3] += 1;
        i += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Split(format!(
            "{n} entries cannot give every split at least one entry ({counts:?})"
        )));
    }
    Ok(counts)
}

/// Reassigns every entry to a split with a seeded shuffle.
pub fn split_manifest(manifest: &DatasetManifest, train_frac: f64, val_frac: f64, seed: u64) -> Result<DatasetManifest> {
    let counts = split_counts(manifest.entries.len(), train_frac, val_frac)?;
    split_manifest_counts(manifest, counts, seed)
}

pub fn split_manifest_counts(manifest: &DatasetManifest, counts: [usize; 3], seed: u64) -> Result<DatasetManifest> {
    let n = manifest.entries.len();
    if n < 3 || counts.iter().sum::<usize>() != n || counts.contains(&0) {
        return Err(Error::Split(format!("cannot split {n} entries as {counts:?}")));
    }
    let mut ids: Vec<String> = manifest.entries.iter().map(|e| e.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_start = counts[0];
    let test_start = counts[0] + counts[1];
    let splits = Splits {
        train: ids[..val_start].to_vec(),
        val: ids[val_start..test_start].to_vec(),
        test: ids[test_start..].to_vec(),
    };
    let out = DatasetManifest {
        generator: manifest.generator.clone(),
        entries: manifest.entries.clone(),
        splits,
    };
    out.validate()?;
    Ok(out)
}
