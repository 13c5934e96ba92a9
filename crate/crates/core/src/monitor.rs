//! Batch monitoring loop with automatic retraining.
//!
//! Each batch is scored against the feature-store reference (per-feature PSI,
//! drift score = max) and, when labels are present, against the production
//! model's reference accuracy through the posterior policy. Either rule
//! triggers a retrain, which runs the configured pipeline on the recent-batch
//! buffer and promotes the model it registers.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::drift::{DriftThresholds, DEFAULT_BINS};
use crate::feature_store::{FeatureStatsRecord, FeatureStore, FeatureStoreError};
use crate::fsutil;
use crate::learner::{LearnerError, LogisticModel};
use crate::pipeline::steps::Registration;
use crate::pipeline::{
    execute, parse_yaml, validate_graph, BuiltinRunner, ExecError, ExecOptions, ParamValue, PipelineSpec,
    RunRecord, RunStatus, StepKind,
};
use crate::registry::{ModelRegistry, RegistryError};
use crate::retrain::{DegradationSignal, PolicyConfig, PolicyError, RetrainPolicy};
use crate::validation::{self, ValidationError};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor config: {0}")]
    Config(String),
    #[error("retrain pipeline {path}: {message}")]
    Pipeline { path: PathBuf, message: String },
    #[error("no reference statistics for dataset `{0}`")]
    MissingReference(String),
    #[error(transparent)]
    Store(#[from] FeatureStoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MonitorError + '_ {
    move |source| MonitorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_cooldown() -> usize {
    3
}

fn default_window() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_parallel() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Registry name of the served model.
    pub model_name: String,
    /// Feature-store dataset holding the reference statistics.
    pub dataset_id: String,
    /// Monitored features; every stored feature except the target when empty.
    #[serde(default)]
    pub features: Vec<String>,
    /// Label column, used for accuracy and the posterior rule.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default = "default_true")]
    pub labels_available: bool,
    #[serde(default)]
    pub thresholds: DriftThresholds,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub retrain_pipeline: PathBuf,
    /// Batches after a retrain during which triggers are suppressed.
    #[serde(default = "default_cooldown")]
    pub cooldown: usize,
    /// Recent batches kept as retraining data.
    #[serde(default = "default_window")]
    pub retrain_window: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    /// Output directory name under `runs/monitor/`; generated when absent.
    #[serde(default)]
    pub session: Option<String>,
}

impl MonitorConfig {
    pub fn new(model_name: &str, dataset_id: &str, retrain_pipeline: impl Into<PathBuf>) -> Self {
        MonitorConfig {
            model_name: model_name.to_string(),
            dataset_id: dataset_id.to_string(),
            features: Vec::new(),
            target: None,
            labels_available: true,
            thresholds: DriftThresholds::default(),
            policy: PolicyConfig::default(),
            retrain_pipeline: retrain_pipeline.into(),
            cooldown: default_cooldown(),
            retrain_window: default_window(),
            max_parallel: default_parallel(),
            session: None,
        }
    }

    pub fn check(&self) -> Result<(), MonitorError> {
        for (what, name) in [("model_name", &self.model_name), ("dataset_id", &self.dataset_id)] {
            if !fsutil::is_safe_component(name) {
                return Err(MonitorError::Config(format!("{what} `{name}` is not a valid name")));
            }
        }
        if let Some(s) = &self.session {
            if !fsutil::is_safe_component(s) {
                return Err(MonitorError::Config(format!("session `{s}` is not a valid name")));
            }
        }
        if self.retrain_window == 0 {
            return Err(MonitorError::Config("retrain_window must be at least 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(MonitorError::Config("max_parallel must be at least 1".into()));
        }
        self.thresholds
            .check()
            .map_err(|e| MonitorError::Config(e.to_string()))?;
        self.policy.check()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorEventKind {
    DriftFlagged,
    RetrainTriggered,
    RetrainCompleted,
    RetrainFailed,
    ModelPromoted,
    CooldownSuppressed,
    BatchRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub kind: MonitorEventKind,
    pub batch: usize,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl MonitorEvent {
    fn new(kind: MonitorEventKind, batch: usize, detail: impl Into<String>) -> Self {
        MonitorEvent {
            kind,
            batch,
            detail: detail.into(),
            version: None,
            run_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub batch: usize,
    pub per_feature_psi: BTreeMap<String, f64>,
    pub drift_score: f64,
    pub accuracy: Option<f64>,
    pub latency_ms: f64,
    pub posterior: Option<f64>,
}

/// Maximum per-feature PSI; zero for no features.
pub fn drift_score(per_feature_psi: &BTreeMap<String, f64>) -> f64 {
    per_feature_psi.values().copied().fold(0.0, f64::max)
}

/// The data-drift half of the trigger rule.
pub fn psi_trigger(drift_score: f64, thresholds: &DriftThresholds) -> bool {
    drift_score > thresholds.psi_threshold
}

struct Production {
    version: u64,
    model: LogisticModel,
    reference_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub batches: usize,
    pub events: Vec<MonitorEvent>,
    pub production_version: Option<u64>,
    pub events_path: PathBuf,
    pub metrics_path: PathBuf,
}

pub struct Monitor {
    config: MonitorConfig,
    store_root: PathBuf,
    runs_root: PathBuf,
    pipeline: PipelineSpec,
    pipeline_dir: PathBuf,
    policy: RetrainPolicy,
    reference: Vec<FeatureStatsRecord>,
    production: Option<Production>,
    buffer: VecDeque<Dataset>,
    cooldown_left: usize,
    next_batch: usize,
    session_dir: PathBuf,
    events_file: File,
    metrics: csv::Writer<File>,
    events: Vec<MonitorEvent>,
}

impl Monitor {
    /// Loads and validates the retrain pipeline and opens the session files
    /// under `<store_root>/runs/monitor/<session>/`.
    pub fn new(config: MonitorConfig, store_root: &Path) -> Result<Self, MonitorError> {
        config.check()?;
        let path = &config.retrain_pipeline;
        let pipeline_err = |message: String| MonitorError::Pipeline {
            path: path.clone(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| pipeline_err(e.to_string()))?;
        let pipeline = parse_yaml(&text).map_err(|e| pipeline_err(e.to_string()))?;
        validate_graph(&pipeline).map_err(|errs| {
            pipeline_err(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))
        })?;
        if !pipeline.nodes.iter().any(|n| n.kind == StepKind::Register) {
            return Err(pipeline_err("pipeline has no register step".into()));
        }
        let pipeline_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let runs_root = store_root.join("runs");
        let session = config
            .session
            .clone()
            .unwrap_or_else(|| format!("session-{}", Utc::now().format("%Y%m%dT%H%M%S%3f")));
        let session_dir = runs_root.join("monitor").join(session);
        fs::create_dir_all(&session_dir).map_err(io_err(&session_dir))?;
        let events_path = session_dir.join("events.jsonl");
        let events_file = File::create(&events_path).map_err(io_err(&events_path))?;
        let metrics_path = session_dir.join("metrics.csv");
        let mut metrics = csv::Writer::from_path(&metrics_path).map_err(|e| MonitorError::Io {
            path: metrics_path.clone(),
            source: e.into(),
        })?;
        metrics
            .write_record(["batch", "drift_score", "accuracy", "latency_ms", "posterior"])
            .and_then(|_| metrics.flush().map_err(Into::into))
            .map_err(|e| MonitorError::Io {
                path: metrics_path.clone(),
                source: e.into(),
            })?;

        let mut monitor = Monitor {
            policy: RetrainPolicy::new(config.policy.clone())?,
            config,
            store_root: store_root.to_path_buf(),
            runs_root,
            pipeline,
            pipeline_dir,
            reference: Vec::new(),
            production: None,
            buffer: VecDeque::new(),
            cooldown_left: 0,
            next_batch: 0,
            session_dir,
            events_file,
            metrics,
            events: Vec::new(),
        };
        monitor.refresh()?;
        Ok(monitor)
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn session_dir(&self) -> &Path {
        &self.session_dir
    }

    pub fn events(&self) -> &[MonitorEvent] {
        &self.events
    }

    pub fn production_version(&self) -> Option<u64> {
        self.production.as_ref().map(|p| p.version)
    }

    pub fn reference_accuracy(&self) -> Option<f64> {
        self.production.as_ref().and_then(|p| p.reference_accuracy)
    }

    // Reloads the production model and the latest reference statistics.
    fn refresh(&mut self) -> Result<(), MonitorError> {
        let registry = ModelRegistry::open(&self.store_root);
        self.production = match registry.production(&self.config.model_name)? {
            Some(_) => {
                let (current, bytes) = registry.load_production(&self.config.model_name)?;
                Some(Production {
                    version: current.version(),
                    model: LogisticModel::from_bytes(&bytes)?,
                    reference_accuracy: current.meta.metrics.get("accuracy").copied(),
                })
            }
            None => None,
        };
        let store = FeatureStore::open(&self.store_root);
        let features: Vec<String> = if self.config.features.is_empty() {
            store
                .list_stats(&self.config.dataset_id)?
                .into_iter()
                .map(|s| s.feature)
                .filter(|f| Some(f) != self.config.target.as_ref())
                .collect()
        } else {
            self.config.features.clone()
        };
        let names: Vec<&str> = features.iter().map(String::as_str).collect();
        self.reference = match store.latest_set(&self.config.dataset_id, &names) {
            Ok(r) => r,
            Err(FeatureStoreError::NotFound { .. }) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(())
    }

    /// Trains and promotes a first production model from `data` by running the
    /// retrain pipeline on it. Returns the promoted version.
    pub fn bootstrap(&mut self, data: &Dataset) -> Result<u64, MonitorError> {
        let (record, outcome) = self.run_pipeline(data, "bootstrap")?;
        match outcome {
            Ok(version) => {
                self.promote(version)?;
                self.policy.reset();
                Ok(version)
            }
            Err(detail) => Err(MonitorError::Pipeline {
                path: self.config.retrain_pipeline.clone(),
                message: format!("bootstrap run {} failed: {detail}", record.run_id),
            }),
        }
    }

    fn emit(&mut self, event: MonitorEvent) -> Result<(), MonitorError> {
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let path = self.session_dir.join("events.jsonl");
        self.events_file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.events.push(event);
        Ok(())
    }

    /// Scores one batch and decides whether to retrain, without retraining.
    /// The returned events are not yet logged.
    pub fn step(&mut self, batch: &Dataset) -> Result<(MetricsSample, Vec<MonitorEvent>), MonitorError> {
        let index = self.next_batch;
        self.next_batch += 1;
        let started = Instant::now();
        if self.reference.is_empty() {
            return Err(MonitorError::MissingReference(self.config.dataset_id.clone()));
        }
        let names: Vec<&str> = self.reference.iter().map(|r| r.feature.as_str()).collect();
        let report = validation::validate_ingest(&self.reference, &names, batch, None, self.config.thresholds)?;
        let per_feature_psi: BTreeMap<String, f64> = report
            .drift_reports
            .iter()
            .map(|r| (r.feature.clone(), r.psi))
            .collect();
        let score = drift_score(&per_feature_psi);

        let mut accuracy = None;
        let mut decision = None;
        let labelled = self.config.labels_available
            && self
                .config
                .target
                .as_deref()
                .is_some_and(|t| batch.column(t).is_some_and(|c| c.null_count() == 0));
        if let (true, Some(prod)) = (labelled && report.schema_violations.is_empty(), &self.production) {
            let acc = prod.model.accuracy(batch)?;
            accuracy = Some(acc);
            if let Some(reference) = prod.reference_accuracy {
                decision = Some(self.policy.observe(&DegradationSignal::new(reference - acc))?);
            }
        }
        let sample = MetricsSample {
            batch: index,
            per_feature_psi,
            drift_score: score,
            accuracy,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            posterior: decision.as_ref().map(|d| d.posterior),
        };

        let mut events = Vec::new();
        if !report.schema_violations.is_empty() {
            let details: Vec<String> = report
                .schema_violations
                .iter()
                .map(|v| format!("{}: {}", v.column, v.detail))
                .collect();
            events.push(MonitorEvent::new(MonitorEventKind::BatchRejected, index, details.join("; ")));
            self.tick_cooldown();
            return Ok((sample, events));
        }
        let drifted = psi_trigger(score, &self.config.thresholds);
        if drifted {
            let flagged: Vec<String> = sample
                .per_feature_psi
                .iter()
                .filter(|(_, p)| psi_trigger(**p, &self.config.thresholds))
                .map(|(f, p)| format!("{f}={p:.4}"))
                .collect();
            events.push(MonitorEvent::new(
                MonitorEventKind::DriftFlagged,
                index,
                format!("psi above {}: {}", self.config.thresholds.psi_threshold, flagged.join(", ")),
            ));
        }
        let degraded = decision.as_ref().is_some_and(|d| d.trigger);
        if drifted || degraded {
            let mut reasons = Vec::new();
            if drifted {
                reasons.push(format!("drift score {score:.4}"));
            }
            if let Some(d) = decision.as_ref().filter(|d| d.trigger) {
                reasons.push(d.rationale.clone());
            }
            let kind = if self.cooldown_left > 0 {
                MonitorEventKind::CooldownSuppressed
            } else {
                MonitorEventKind::RetrainTriggered
            };
            events.push(MonitorEvent::new(kind, index, reasons.join("; ")));
        }
        self.buffer.push_back(batch.clone());
        while self.buffer.len() > self.config.retrain_window {
            self.buffer.pop_front();
        }
        self.tick_cooldown();
        Ok((sample, events))
    }

    fn tick_cooldown(&mut self) {
        self.cooldown_left = self.cooldown_left.saturating_sub(1);
    }

    fn write_sample(&mut self, sample: &MetricsSample) -> Result<(), MonitorError> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let path = self.session_dir.join("metrics.csv");
        self.metrics
            .write_record([
                sample.batch.to_string(),
                sample.drift_score.to_string(),
                opt(sample.accuracy),
                format!("{:.3}", sample.latency_ms),
                opt(sample.posterior),
            ])
            .and_then(|_| self.metrics.flush().map_err(Into::into))
            .map_err(|e| MonitorError::Io {
                path,
                source: e.into(),
            })
    }

    /// Scores a batch, logs its sample and events, and retrains when triggered.
    pub fn process(&mut self, batch: &Dataset) -> Result<(MetricsSample, Vec<MonitorEvent>), MonitorError> {
        let (sample, mut events) = self.step(batch)?;
        self.write_sample(&sample)?;
        for e in &events {
            self.emit(e.clone())?;
        }
        if events.iter().any(|e| e.kind == MonitorEventKind::RetrainTriggered) {
            let more = self.retrain(sample.batch)?;
            events.extend(more);
        }
        Ok((sample, events))
    }

    pub fn run(&mut self, batches: impl IntoIterator<Item = Dataset>) -> Result<MonitorSummary, MonitorError> {
        let mut count = 0;
        for batch in batches {
            self.process(&batch)?;
            count += 1;
        }
        Ok(MonitorSummary {
            batches: count,
            events: self.events.clone(),
            production_version: self.production_version(),
            events_path: self.session_dir.join("events.jsonl"),
            metrics_path: self.session_dir.join("metrics.csv"),
        })
    }

    // Pipeline copy pointed at this monitor's data, dataset and model.
    fn bind_pipeline(&self, data_path: &Path) -> PipelineSpec {
        let mut spec = self.pipeline.clone();
        for node in &mut spec.nodes {
            let set = |key: &str, value: &str, node: &mut crate::pipeline::StepNode| {
                node.params.insert(key.to_string(), ParamValue::Str(value.to_string()));
            };
            match node.kind {
                StepKind::Ingest => set("path", &data_path.to_string_lossy(), node),
                StepKind::Features => set("dataset_id", &self.config.dataset_id, node),
                StepKind::Validate if node.params.contains_key("dataset_id") => {
                    set("dataset_id", &self.config.dataset_id, node)
                }
                StepKind::Register => set("model_name", &self.config.model_name, node),
                StepKind::Evaluate if node.params.contains_key("model_name") => {
                    set("model_name", &self.config.model_name, node)
                }
                _ => {}
            }
        }
        spec
    }

    // Runs the bound pipeline on `data`. The inner result is the registered
    // version, or a failure description.
    fn run_pipeline(&mut self, data: &Dataset, label: &str) -> Result<(RunRecord, Result<u64, String>), MonitorError> {
        let data_path = self.session_dir.join(format!("{label}.csv"));
        data.write_csv(&data_path).map_err(io_err(&data_path))?;
        let spec = self.bind_pipeline(&data_path);
        let runner = BuiltinRunner::new(&self.store_root, &self.pipeline_dir);
        let opts = ExecOptions::new(&self.runs_root).max_parallel(self.config.max_parallel);
        let record = execute(&spec, &opts, &runner)?;
        if record.status == RunStatus::Failed {
            let detail: Vec<String> = record
                .nodes
                .iter()
                .filter_map(|(id, n)| n.error.as_ref().map(|e| format!("{id}: {e}")))
                .collect();
            return Ok((record, Err(detail.join("; "))));
        }
        let register = spec
            .nodes
            .iter()
            .find(|n| n.kind == StepKind::Register)
            .expect("checked at construction");
        let path = RunRecord::artifact_path(&self.runs_root, &record.run_id, &register.id, &register.outputs[0]);
        let outcome = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<Registration>(&b).map_err(|e| e.to_string()))
            .map(|r| r.version)
            .map_err(|e| format!("registration output unreadable: {e}"));
        if outcome.is_ok() && !spec.nodes.iter().any(|n| n.kind == StepKind::Features) {
            self.refit_reference(data)?;
        }
        Ok((record, outcome))
    }

    // Reference refresh for pipelines without a features step.
    fn refit_reference(&self, data: &Dataset) -> Result<(), MonitorError> {
        let store = FeatureStore::open(&self.store_root);
        for column in data.columns() {
            if Some(&column.name) == self.config.target.as_ref() {
                continue;
            }
            if !self.config.features.is_empty() && !self.config.features.contains(&column.name) {
                continue;
            }
            if let Ok(record) = FeatureStatsRecord::fit(&self.config.dataset_id, column, DEFAULT_BINS) {
                store.put_stats(record)?;
            }
        }
        Ok(())
    }

    fn promote(&mut self, version: u64) -> Result<(), MonitorError> {
        let registry = ModelRegistry::open(&self.store_root);
        if registry.state(&self.config.model_name)?.production != Some(version) {
            registry.promote(&self.config.model_name, version)?;
        }
        self.refresh()
    }

    fn retrain(&mut self, index: usize) -> Result<Vec<MonitorEvent>, MonitorError> {
        let parts: Vec<Dataset> = self.buffer.iter().cloned().collect();
        let data = Dataset::concat(&parts)?;
        let (record, outcome) = self.run_pipeline(&data, &format!("retrain-{index}"))?;
        let mut events = Vec::new();
        match outcome {
            Ok(version) => {
                let mut done = MonitorEvent::new(
                    MonitorEventKind::RetrainCompleted,
                    index,
                    format!("registered {} v{version} from {} rows", self.config.model_name, data.n_rows()),
                );
                done.version = Some(version);
                done.run_id = Some(record.run_id.clone());
                events.push(done);
                let previous = self.production_version();
                if previous.is_some_and(|p| p >= version) {
                    let mut failed = MonitorEvent::new(
                        MonitorEventKind::RetrainFailed,
                        index,
                        format!("registered v{version} is not newer than production"),
                    );
                    failed.run_id = Some(record.run_id);
                    events.push(failed);
                } else {
                    self.promote(version)?;
                    let mut promoted = MonitorEvent::new(
                        MonitorEventKind::ModelPromoted,
                        index,
                        format!(
                            "{} v{version} promoted (was {})",
                            self.config.model_name,
                            previous.map_or("none".to_string(), |p| format!("v{p}"))
                        ),
                    );
                    promoted.version = Some(version);
                    promoted.run_id = Some(record.run_id);
                    events.push(promoted);
                    self.policy.reset();
                    self.buffer.clear();
                }
            }
            Err(detail) => {
                let mut failed = MonitorEvent::new(MonitorEventKind::RetrainFailed, index, detail);
                failed.run_id = Some(record.run_id);
                events.push(failed);
            }
        }
        self.cooldown_left = self.config.cooldown;
        for e in &events {
            self.emit(e.clone())?;
        }
        Ok(events)
    }
}
