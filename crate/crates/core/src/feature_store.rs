//! Versioned, immutable reference statistics per `(dataset_id, feature)`.
//!
//! Layout under the store root:
//!
//! ```text
//! features/<dataset_id>/index.json               feature -> latest version
//! features/<dataset_id>/.lock                    advisory writer lock
//! features/<dataset_id>/<feature>/<version>.json one record per version
//! ```
//!
//! Writers hold the dataset lock; readers never take it. Every file is
//! published with write-temp-then-rename, record first and index second.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, ColumnKind};
use crate::drift::{self, BinnedDistribution, Binning, DriftError};
use crate::fsutil::{self, LockGuard};

#[derive(Debug, Error)]
pub enum FeatureStoreError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("stats not found: {dataset_id}/{feature}{}", version.map(|v| format!(" v{v}")).unwrap_or_default())]
    NotFound {
        dataset_id: String,
        feature: String,
        version: Option<u64>,
    },
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureStoreError + '_ {
    move |source| FeatureStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Moments> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Some(Moments {
            mean,
            std: var.sqrt(),
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStatsRecord {
    pub dataset_id: String,
    pub feature: String,
    /// Assigned by the store on `put_stats`.
    pub version: u64,
    pub binning: Binning,
    pub proportions: Vec<f64>,
    pub moments: Option<Moments>,
    pub sample_count: u64,
    pub created_at: DateTime<Utc>,
}

impl FeatureStatsRecord {
    /// Fits reference statistics for one column.
    ///
    /// Numeric columns with fewer than `bins` distinct values (flags, one-hot
    /// codes) are binned by label instead, keeping their moments.
    pub fn fit(dataset_id: &str, column: &Column, bins: usize) -> Result<Self, FeatureStoreError> {
        let numeric = column.kind() == ColumnKind::Numeric;
        let binning = if numeric {
            let values = column.numeric_values();
            match drift::build_reference_binning(drift::FeatureValues::Numeric(&values), bins) {
                Err(DriftError::TooFewDistinct { .. }) if !values.is_empty() => {
                    column.with_values(true, |v| drift::build_reference_binning(v, bins))?
                }
                other => other?,
            }
        } else {
            column.with_values(true, |v| drift::build_reference_binning(v, bins))?
        };
        let dist = column.with_values(!binning.is_numeric(), |v| drift::bin_distribution(v, &binning))?;
        let moments = if numeric {
            Moments::of(&column.numeric_values())
        } else {
            None
        };
        Ok(FeatureStatsRecord {
            dataset_id: dataset_id.to_string(),
            feature: column.name.clone(),
            version: 0,
            binning,
            proportions: dist.proportions,
            moments,
            sample_count: dist.sample_count,
            created_at: Utc::now(),
        })
    }

    pub fn distribution(&self) -> BinnedDistribution {
        BinnedDistribution {
            binning: self.binning.clone(),
            proportions: self.proportions.clone(),
            sample_count: self.sample_count,
        }
    }

    pub fn check(&self) -> Result<(), FeatureStoreError> {
        if !fsutil::is_safe_component(&self.dataset_id) {
            return Err(FeatureStoreError::Invalid(format!("bad dataset id `{}`", self.dataset_id)));
        }
        if !fsutil::is_safe_component(&self.feature) || self.feature == "index.json" {
            return Err(FeatureStoreError::Invalid(format!("bad feature name `{}`", self.feature)));
        }
        self.binning.check()?;
        drift::check_proportions(&self.proportions, self.binning.k())?;
        Ok(())
    }
}

/// Which version to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionSel {
    Latest,
    Exact(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub feature: String,
    pub latest_version: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Index {
    features: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    /// Opens the feature store under `<store_root>/features`.
    pub fn open(store_root: &Path) -> Self {
        FeatureStore {
            root: store_root.join("features"),
        }
    }

    fn dataset_dir(&self, dataset_id: &str) -> PathBuf {
        self.root.join(dataset_id)
    }

    fn record_path(&self, dataset_id: &str, feature: &str, version: u64) -> PathBuf {
        self.dataset_dir(dataset_id).join(feature).join(format!("{version}.json"))
    }

    fn read_index(&self, dataset_id: &str) -> Result<Index, FeatureStoreError> {
        let path = self.dataset_dir(dataset_id).join("index.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| FeatureStoreError::Corrupt { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    // Highest published version file, including ones the index never caught up with.
    fn max_version_on_disk(&self, dataset_id: &str, feature: &str) -> Result<u64, FeatureStoreError> {
        let dir = self.dataset_dir(dataset_id).join(feature);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut max = 0;
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(v) = name.strip_suffix(".json").and_then(|s| s.parse::<u64>().ok()) {
                max = max.max(v);
            }
        }
        Ok(max)
    }

    /// Writes both files to temporaries under the dataset lock without
    /// publishing them. [`StagedPut::commit`] publishes.
    pub fn stage(&self, mut record: FeatureStatsRecord) -> Result<StagedPut, FeatureStoreError> {
        record.check()?;
        let dir = self.dataset_dir(&record.dataset_id);
        let lock_path = dir.join(".lock");
        let lock = LockGuard::acquire(&lock_path).map_err(io_err(&lock_path))?;

        let mut index = self.read_index(&record.dataset_id)?;
        let indexed = index.features.get(&record.feature).copied().unwrap_or(0);
        let version = indexed.max(self.max_version_on_disk(&record.dataset_id, &record.feature)?) + 1;
        record.version = version;
        index.features.insert(record.feature.clone(), version);

        let record_path = self.record_path(&record.dataset_id, &record.feature, version);
        let index_path = dir.join("index.json");
        let record_bytes = serde_json::to_vec_pretty(&record).expect("record serializes");
        let index_bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        let record_tmp = fsutil::write_temp(&record_path, &record_bytes).map_err(io_err(&record_path))?;
        let index_tmp = fsutil::write_temp(&index_path, &index_bytes).map_err(io_err(&index_path))?;
        Ok(StagedPut {
            _lock: lock,
            version,
            moves: [(record_tmp, record_path), (index_tmp, index_path)],
        })
    }

    /// Persists `record` under the next version for its feature and returns
    /// that version. The version field of the input is ignored.
    pub fn put_stats(&self, record: FeatureStatsRecord) -> Result<u64, FeatureStoreError> {
        self.stage(record)?.commit()
    }

    pub fn get_stats(
        &self,
        dataset_id: &str,
        feature: &str,
        version: VersionSel,
    ) -> Result<FeatureStatsRecord, FeatureStoreError> {
        let not_found = || FeatureStoreError::NotFound {
            dataset_id: dataset_id.to_string(),
            feature: feature.to_string(),
            version: match version {
                VersionSel::Latest => None,
                VersionSel::Exact(v) => Some(v),
            },
        };
        if !fsutil::is_safe_component(dataset_id) || !fsutil::is_safe_component(feature) {
            return Err(not_found());
        }
        let v = match version {
            VersionSel::Exact(v) => v,
            VersionSel::Latest => *self
                .read_index(dataset_id)?
                .features
                .get(feature)
                .ok_or_else(not_found)?,
        };
        let path = self.record_path(dataset_id, feature, v);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(not_found()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|source| FeatureStoreError::Corrupt { path, source })
    }

    /// Latest record for each requested feature.
    pub fn latest_set(&self, dataset_id: &str, features: &[&str]) -> Result<Vec<FeatureStatsRecord>, FeatureStoreError> {
        features
            .iter()
            .map(|f| self.get_stats(dataset_id, f, VersionSel::Latest))
            .collect()
    }

    /// Latest version of every feature, sorted by feature name.
    pub fn list_stats(&self, dataset_id: &str) -> Result<Vec<StatsSummary>, FeatureStoreError> {
        if !fsutil::is_safe_component(dataset_id) {
            return Ok(Vec::new());
        }
        let index = self.read_index(dataset_id)?;
        index
            .features
            .iter()
            .map(|(feature, &v)| {
                let record = self.get_stats(dataset_id, feature, VersionSel::Exact(v))?;
                Ok(StatsSummary {
                    feature: feature.clone(),
                    latest_version: v,
                    created_at: record.created_at,
                })
            })
            .collect()
    }

    /// Dataset ids present in the store, sorted.
    pub fn datasets(&self) -> Result<Vec<String>, FeatureStoreError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join("index.json").exists() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }
}

/// A put whose files are written but not yet visible to readers.
#[derive(Debug)]
#[must_use = "a staged put is invisible until committed"]
pub struct StagedPut {
    _lock: LockGuard,
    version: u64,
    moves: [(PathBuf, PathBuf); 2],
}

impl StagedPut {
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Publishes the record, then the index.
    pub fn commit(self) -> Result<u64, FeatureStoreError> {
        for (tmp, target) in &self.moves {
            fs::rename(tmp, target).map_err(io_err(target))?;
        }
        Ok(self.version)
    }

    /// Releases the lock and leaves the temporaries behind, which is what a
    /// writer dying between the temp write and the rename leaves on disk.
    pub fn abandon(self) {}
}
