//! Model registry: versioned artifacts with metrics, lineage and stages.
//!
//! Layout under the store root:
//!
//! ```text
//! models/<name>/<version>/artifact.bin   parameter file, byte copy
//! models/<name>/<version>/meta.json      digest, metrics, trained_at, lineage
//! models/<name>/events.log               append-only JSON lines
//! models/<name>/state.json               stages, production pointer, ex-production stack
//! models/<name>/.lock                    advisory writer lock
//! ```
//!
//! Stages only change through events, and [`RegistryState::apply`] is the
//! single transition function used both live and on replay.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::{self, LockGuard};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid model name `{0}`")]
    InvalidName(String),
    #[error("artifact {path} is missing or unreadable: {source}")]
    MissingArtifact {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model `{model}` not found")]
    UnknownModel { model: String },
    #[error("model `{model}` has no version {version}")]
    UnknownVersion { model: String, version: u64 },
    #[error("model `{model}` v{version} is {stage}; {action} needs a candidate")]
    BadStage {
        model: String,
        version: u64,
        stage: Stage,
        action: &'static str,
    },
    #[error("model `{model}` has nothing to roll back to")]
    NothingToRollBack { model: String },
    #[error("model `{model}` v{version} was never production; cannot roll back to it")]
    NotInHistory { model: String, version: u64 },
    #[error("model `{model}` has no production version")]
    NoProduction { model: String },
    #[error("artifact digest mismatch for `{model}` v{version}: recorded {recorded}, found {found}")]
    DigestMismatch {
        model: String,
        version: u64,
        recorded: String,
        found: String,
    },
    #[error("event out of order for `{model}`: {detail}")]
    BadEvent { model: String, detail: String },
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt registry file {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Candidate,
    Production,
    Archived,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Candidate => "candidate",
            Stage::Production => "production",
            Stage::Archived => "archived",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub run_id: Option<String>,
    pub parent_version: Option<u64>,
    /// Feature name -> feature-store version consumed by training.
    #[serde(default)]
    pub feature_stats: BTreeMap<String, u64>,
}

/// Immutable part of a version, stored in `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_name: String,
    pub version: u64,
    pub artifact_digest: String,
    pub metrics: BTreeMap<String, f64>,
    pub trained_at: DateTime<Utc>,
    pub lineage: Lineage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    #[serde(flatten)]
    pub meta: ModelMeta,
    pub stage: Stage,
}

impl ModelVersion {
    pub fn version(&self) -> u64 {
        self.meta.version
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Registered,
    Promoted,
    RolledBack,
    Archived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub kind: EventKind,
    pub model_name: String,
    /// The version the event acts on; for `rolled_back`, the restored version.
    pub version: u64,
    pub timestamp: DateTime<Utc>,
    pub cause: String,
}

/// Stage bookkeeping for one model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegistryState {
    pub stages: BTreeMap<u64, Stage>,
    pub production: Option<u64>,
    /// Versions displaced from production by a promotion, oldest first.
    pub history: Vec<u64>,
}

impl RegistryState {
    pub fn latest_version(&self) -> u64 {
        self.stages.keys().next_back().copied().unwrap_or(0)
    }

    pub fn stage(&self, version: u64) -> Option<Stage> {
        self.stages.get(&version).copied()
    }

    fn candidate(&self, model: &str, version: u64, action: &'static str) -> Result<(), RegistryError> {
        match self.stage(version) {
            None => Err(RegistryError::UnknownVersion {
                model: model.to_string(),
                version,
            }),
            Some(Stage::Candidate) => Ok(()),
            Some(stage) => Err(RegistryError::BadStage {
                model: model.to_string(),
                version,
                stage,
                action,
            }),
        }
    }

    /// The version a one-step rollback would restore.
    pub fn rollback_target(&self) -> Option<u64> {
        self.production.and(self.history.last().copied())
    }

    /// Validates `event` against the current state and applies it.
    pub fn apply(&mut self, event: &RegistryEvent) -> Result<(), RegistryError> {
        let model = event.model_name.as_str();
        let v = event.version;
        match event.kind {
            EventKind::Registered => {
                if v <= self.latest_version() {
                    return Err(RegistryError::BadEvent {
                        model: model.to_string(),
                        detail: format!("registered v{v} not above v{}", self.latest_version()),
                    });
                }
                self.stages.insert(v, Stage::Candidate);
            }
            EventKind::Promoted => {
                self.candidate(model, v, "promotion")?;
                if let Some(prev) = self.production.replace(v) {
                    self.stages.insert(prev, Stage::Archived);
                    self.history.push(prev);
                }
                self.stages.insert(v, Stage::Production);
            }
            EventKind::RolledBack => {
                let Some(current) = self.production else {
                    return Err(RegistryError::NothingToRollBack { model: model.to_string() });
                };
                let Some(pos) = self.history.iter().rposition(|&h| h == v) else {
                    return Err(if self.history.is_empty() {
                        RegistryError::NothingToRollBack { model: model.to_string() }
                    } else {
                        RegistryError::NotInHistory {
                            model: model.to_string(),
                            version: v,
                        }
                    });
                };
                self.history.truncate(pos);
                self.stages.insert(current, Stage::Archived);
                self.stages.insert(v, Stage::Production);
                self.production = Some(v);
            }
            EventKind::Archived => {
                self.candidate(model, v, "archiving")?;
                self.stages.insert(v, Stage::Archived);
            }
        }
        Ok(())
    }

    /// Rebuilds state from an event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a RegistryEvent>) -> Result<Self, RegistryError> {
        let mut state = RegistryState::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn production_count(&self) -> usize {
        self.stages.values().filter(|s| **s == Stage::Production).count()
    }
}

/// Production pointer before and after a promotion or rollback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub previous_production: Option<u64>,
    pub production: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageLink {
    pub version: u64,
    pub run_id: Option<String>,
    pub parent_version: Option<u64>,
    pub feature_stats: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct ModelRegistry {
    root: PathBuf,
}

impl ModelRegistry {
    /// Opens the registry under `<store_root>/models`.
    pub fn open(store_root: &Path) -> Self {
        ModelRegistry {
            root: store_root.join("models"),
        }
    }

    fn model_dir(&self, model: &str) -> Result<PathBuf, RegistryError> {
        if !fsutil::is_safe_component(model) {
            return Err(RegistryError::InvalidName(model.to_string()));
        }
        Ok(self.root.join(model))
    }

    fn version_dir(&self, model: &str, version: u64) -> Result<PathBuf, RegistryError> {
        Ok(self.model_dir(model)?.join(version.to_string()))
    }

    fn lock(&self, model: &str) -> Result<LockGuard, RegistryError> {
        let path = self.model_dir(model)?.join(".lock");
        LockGuard::acquire(&path).map_err(io_err(&path))
    }

    /// Current stage bookkeeping; empty for an unknown model.
    pub fn state(&self, model: &str) -> Result<RegistryState, RegistryError> {
        let path = self.model_dir(model)?.join("state.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| RegistryError::Corrupt { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RegistryState::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn events(&self, model: &str) -> Result<Vec<RegistryEvent>, RegistryError> {
        let path = self.model_dir(model)?.join("events.log");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|source| RegistryError::Corrupt { path: path.clone(), source }))
            .collect()
    }

    /// State rebuilt purely from `events.log`.
    pub fn replay(&self, model: &str) -> Result<RegistryState, RegistryError> {
        RegistryState::replay(&self.events(model)?)
    }

    // Applies the event, appends it to the log, then publishes the new state.
    fn commit(&self, model: &str, state: &mut RegistryState, event: RegistryEvent) -> Result<(), RegistryError> {
        state.apply(&event)?;
        let dir = self.model_dir(model)?;
        let log_path = dir.join("events.log");
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(io_err(&log_path))?;
        let state_path = dir.join("state.json");
        let bytes = serde_json::to_vec_pretty(state).expect("state serializes");
        fsutil::atomic_write(&state_path, &bytes).map_err(io_err(&state_path))
    }

    fn event(model: &str, kind: EventKind, version: u64, cause: impl Into<String>) -> RegistryEvent {
        RegistryEvent {
            kind,
            model_name: model.to_string(),
            version,
            timestamp: Utc::now(),
            cause: cause.into(),
        }
    }

    /// Copies `artifact` into the registry as the next version, stage candidate.
    pub fn register(
        &self,
        model: &str,
        artifact: &Path,
        metrics: BTreeMap<String, f64>,
        lineage: Lineage,
    ) -> Result<ModelVersion, RegistryError> {
        let bytes = fs::read(artifact).map_err(|source| RegistryError::MissingArtifact {
            path: artifact.to_path_buf(),
            source,
        })?;
        self.register_bytes(model, &bytes, metrics, lineage, Utc::now())
    }

    pub fn register_bytes(
        &self,
        model: &str,
        artifact: &[u8],
        metrics: BTreeMap<String, f64>,
        lineage: Lineage,
        trained_at: DateTime<Utc>,
    ) -> Result<ModelVersion, RegistryError> {
        let _lock = self.lock(model)?;
        let mut state = self.state(model)?;
        let version = state.latest_version().max(self.max_version_dir(model)?) + 1;
        let meta = ModelMeta {
            model_name: model.to_string(),
            version,
            artifact_digest: fsutil::sha256_hex(artifact),
            metrics,
            trained_at,
            lineage,
        };
        let dir = self.version_dir(model, version)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let artifact_path = dir.join("artifact.bin");
        fsutil::atomic_write(&artifact_path, artifact).map_err(io_err(&artifact_path))?;
        let meta_path = dir.join("meta.json");
        let meta_bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        fsutil::atomic_write(&meta_path, &meta_bytes).map_err(io_err(&meta_path))?;
        self.commit(model, &mut state, Self::event(model, EventKind::Registered, version, "registered"))?;
        Ok(ModelVersion {
            meta,
            stage: Stage::Candidate,
        })
    }

    // Version directories left behind by a register that never reached the log.
    fn max_version_dir(&self, model: &str) -> Result<u64, RegistryError> {
        let dir = self.model_dir(model)?;
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        Ok(entries
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().to_string_lossy().parse::<u64>().ok())
            .max()
            .unwrap_or(0))
    }

    /// Moves a candidate to production and archives the previous production version.
    pub fn promote(&self, model: &str, version: u64) -> Result<Transition, RegistryError> {
        let _lock = self.lock(model)?;
        let mut state = self.state(model)?;
        let previous_production = state.production;
        let cause = match previous_production {
            Some(p) => format!("promoted over v{p}"),
            None => "first production version".to_string(),
        };
        self.commit(model, &mut state, Self::event(model, EventKind::Promoted, version, cause))?;
        Ok(Transition {
            previous_production,
            production: version,
        })
    }

    /// Restores the most recently displaced production version.
    pub fn rollback(&self, model: &str) -> Result<Transition, RegistryError> {
        let _lock = self.lock(model)?;
        let mut state = self.state(model)?;
        let target = state
            .rollback_target()
            .ok_or_else(|| RegistryError::NothingToRollBack { model: model.to_string() })?;
        self.rollback_locked(model, &mut state, target)
    }

    /// Walks the production pointer back to a specific ex-production version.
    pub fn rollback_to(&self, model: &str, version: u64) -> Result<Transition, RegistryError> {
        let _lock = self.lock(model)?;
        let mut state = self.state(model)?;
        self.rollback_locked(model, &mut state, version)
    }

    fn rollback_locked(&self, model: &str, state: &mut RegistryState, target: u64) -> Result<Transition, RegistryError> {
        let previous_production = state.production;
        let cause = format!(
            "rolled back from v{}",
            previous_production.map_or_else(|| "?".to_string(), |v| v.to_string())
        );
        self.commit(model, state, Self::event(model, EventKind::RolledBack, target, cause))?;
        Ok(Transition {
            previous_production,
            production: target,
        })
    }

    /// Retires a candidate without ever deploying it.
    pub fn archive(&self, model: &str, version: u64) -> Result<(), RegistryError> {
        let _lock = self.lock(model)?;
        let mut state = self.state(model)?;
        self.commit(model, &mut state, Self::event(model, EventKind::Archived, version, "archived"))
    }

    fn read_meta(&self, model: &str, version: u64) -> Result<ModelMeta, RegistryError> {
        let path = self.version_dir(model, version)?.join("meta.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RegistryError::UnknownVersion {
                    model: model.to_string(),
                    version,
                })
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|source| RegistryError::Corrupt { path, source })
    }

    /// Reads one version. With `verify`, the stored artifact is re-hashed.
    pub fn get(&self, model: &str, version: u64, verify: bool) -> Result<ModelVersion, RegistryError> {
        let state = self.state(model)?;
        let stage = state.stage(version).ok_or_else(|| RegistryError::UnknownVersion {
            model: model.to_string(),
            version,
        })?;
        let meta = self.read_meta(model, version)?;
        if verify {
            self.verified_artifact(&meta)?;
        }
        Ok(ModelVersion { meta, stage })
    }

    fn verified_artifact(&self, meta: &ModelMeta) -> Result<Vec<u8>, RegistryError> {
        let path = self.artifact_path(&meta.model_name, meta.version)?;
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let found = fsutil::sha256_hex(&bytes);
        if found != meta.artifact_digest {
            return Err(RegistryError::DigestMismatch {
                model: meta.model_name.clone(),
                version: meta.version,
                recorded: meta.artifact_digest.clone(),
                found,
            });
        }
        Ok(bytes)
    }

    pub fn artifact_path(&self, model: &str, version: u64) -> Result<PathBuf, RegistryError> {
        Ok(self.version_dir(model, version)?.join("artifact.bin"))
    }

    /// All versions of `model`, ascending.
    pub fn list(&self, model: &str) -> Result<Vec<ModelVersion>, RegistryError> {
        let state = self.state(model)?;
        state
            .stages
            .iter()
            .map(|(&v, &stage)| Ok(ModelVersion {
                meta: self.read_meta(model, v)?,
                stage,
            }))
            .collect()
    }

    /// Registered model names, sorted.
    pub fn models(&self) -> Result<Vec<String>, RegistryError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut out: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join("state.json").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn production(&self, model: &str) -> Result<Option<ModelVersion>, RegistryError> {
        match self.state(model)?.production {
            Some(v) => self.get(model, v, false).map(Some),
            None => Ok(None),
        }
    }

    /// Serving stub: the production version and its digest-checked artifact bytes.
    pub fn load_production(&self, model: &str) -> Result<(ModelVersion, Vec<u8>), RegistryError> {
        let current = self
            .production(model)?
            .ok_or_else(|| RegistryError::NoProduction { model: model.to_string() })?;
        let bytes = self.verified_artifact(&current.meta)?;
        Ok((current, bytes))
    }

    /// Lineage chain from `version` back through its parents.
    pub fn lineage_of(&self, model: &str, version: u64) -> Result<Vec<LineageLink>, RegistryError> {
        let mut chain = Vec::new();
        let mut next = Some(version);
        while let Some(v) = next {
            if chain.iter().any(|l: &LineageLink| l.version == v) {
                break;
            }
            let meta = self.read_meta(model, v)?;
            next = meta.lineage.parent_version;
            chain.push(LineageLink {
                version: v,
                run_id: meta.lineage.run_id,
                parent_version: meta.lineage.parent_version,
                feature_stats: meta.lineage.feature_stats,
            });
        }
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, ModelRegistry) {
        let dir = tempfile::tempdir().unwrap();
        let reg = ModelRegistry::open(dir.path());
        (dir, reg)
    }

    fn reg_n(reg: &ModelRegistry, n: u8) -> u64 {
        reg.register_bytes("m", &[n], BTreeMap::new(), Lineage::default(), Utc::now())
            .unwrap()
            .version()
    }

    #[test]
    fn first_register_is_candidate_v1() {
        let (dir, reg) = setup();
        let artifact = dir.path().join("model.json");
        fs::write(&artifact, b"{}").unwrap();
        let mv = reg.register("m", &artifact, BTreeMap::new(), Lineage::default()).unwrap();
        assert_eq!((mv.version(), mv.stage), (1, Stage::Candidate));
        let mv2 = reg.register("m", &artifact, BTreeMap::new(), Lineage::default()).unwrap();
        assert_eq!(mv2.version(), 2);
        assert_eq!(mv.meta.artifact_digest, mv2.meta.artifact_digest);
    }

    #[test]
    fn missing_artifact_rejected() {
        let (dir, reg) = setup();
        let err = reg
            .register("m", &dir.path().join("nope.bin"), BTreeMap::new(), Lineage::default())
            .unwrap_err();
        assert!(matches!(err, RegistryError::MissingArtifact { .. }));
    }

    #[test]
    fn promote_archives_previous() {
        let (_dir, reg) = setup();
        let v1 = reg_n(&reg, 1);
        let v2 = reg_n(&reg, 2);
        reg.promote("m", v1).unwrap();
        assert_eq!(reg.get("m", v1, false).unwrap().stage, Stage::Production);
        let t = reg.promote("m", v2).unwrap();
        assert_eq!(t.previous_production, Some(v1));
        assert_eq!(reg.get("m", v1, false).unwrap().stage, Stage::Archived);
        assert_eq!(reg.get("m", v2, false).unwrap().stage, Stage::Production);
        assert!(matches!(reg.promote("m", v1), Err(RegistryError::BadStage { .. })));
        assert!(matches!(reg.promote("m", 9), Err(RegistryError::UnknownVersion { .. })));
    }

    #[test]
    fn rollback_walks_back_through_production_history() {
        let (_dir, reg) = setup();
        for i in 1..=3 {
            let v = reg_n(&reg, i);
            reg.promote("m", v).unwrap();
        }
        let t = reg.rollback("m").unwrap();
        assert_eq!((t.previous_production, t.production), (Some(3), 2));
        reg.rollback("m").unwrap();
        let state = reg.state("m").unwrap();
        assert_eq!(state.production, Some(1));
        assert_eq!(state.stage(2), Some(Stage::Archived));
        assert_eq!(state.stage(3), Some(Stage::Archived));
        assert!(matches!(reg.rollback("m"), Err(RegistryError::NothingToRollBack { .. })));
        assert_eq!(reg.replay("m").unwrap(), state);
    }

    #[test]
    fn rollback_needs_history() {
        let (_dir, reg) = setup();
        let v = reg_n(&reg, 1);
        assert!(reg.rollback("m").is_err());
        reg.promote("m", v).unwrap();
        assert!(matches!(reg.rollback("m"), Err(RegistryError::NothingToRollBack { .. })));
    }

    #[test]
    fn rollback_to_named_version() {
        let (_dir, reg) = setup();
        for i in 1..=4 {
            let v = reg_n(&reg, i);
            reg.promote("m", v).unwrap();
        }
        assert!(matches!(reg.rollback_to("m", 7), Err(RegistryError::NotInHistory { .. })));
        let t = reg.rollback_to("m", 2).unwrap();
        assert_eq!(t.production, 2);
        let state = reg.state("m").unwrap();
        assert_eq!(state.history, vec![1]);
        assert_eq!(state.production_count(), 1);
    }

    #[test]
    fn tampered_artifact_detected() {
        let (_dir, reg) = setup();
        let v = reg_n(&reg, 7);
        reg.get("m", v, true).unwrap();
        fs::write(reg.artifact_path("m", v).unwrap(), [8u8]).unwrap();
        assert!(matches!(reg.get("m", v, true), Err(RegistryError::DigestMismatch { .. })));
        assert!(reg.get("m", v, false).is_ok());
    }

    #[test]
    fn lineage_chain_and_listing() {
        let (_dir, reg) = setup();
        let mut parent = None;
        for i in 1..=3u8 {
            let lineage = Lineage {
                run_id: Some(format!("run-{i}")),
                parent_version: parent,
                feature_stats: [("age".to_string(), u64::from(i))].into(),
            };
            parent = Some(reg.register_bytes("m", &[i], BTreeMap::new(), lineage, Utc::now()).unwrap().version());
        }
        let chain = reg.lineage_of("m", 3).unwrap();
        let versions: Vec<u64> = chain.iter().map(|l| l.version).collect();
        assert_eq!(versions, [3, 2, 1]);
        assert_eq!(chain[2].run_id.as_deref(), Some("run-1"));
        let listed: Vec<u64> = reg.list("m").unwrap().iter().map(ModelVersion::version).collect();
        assert_eq!(listed, [1, 2, 3]);
        assert!(matches!(reg.get("m", 9, false), Err(RegistryError::UnknownVersion { .. })));
        assert_eq!(reg.models().unwrap(), ["m"]);
    }

    #[test]
    fn serve_stub_loads_production() {
        let (_dir, reg) = setup();
        assert!(matches!(reg.load_production("m"), Err(RegistryError::NoProduction { .. })));
        let v = reg_n(&reg, 42);
        reg.promote("m", v).unwrap();
        let (mv, bytes) = reg.load_production("m").unwrap();
        assert_eq!((mv.version(), bytes), (v, vec![42]));
    }

    #[test]
    fn archive_candidate_only() {
        let (_dir, reg) = setup();
        let v = reg_n(&reg, 1);
        reg.archive("m", v).unwrap();
        assert!(matches!(reg.promote("m", v), Err(RegistryError::BadStage { .. })));
        assert!(reg.archive("m", v).is_err());
    }
}
