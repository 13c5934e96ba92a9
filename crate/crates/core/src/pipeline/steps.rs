//! Builtin step implementations.
//!
//! Positional inputs and outputs per kind:
//!
//! | kind          | inputs                                   | outputs                  |
//! |---------------|------------------------------------------|--------------------------|
//! | `ingest`      | none (`path` param)                      | data                     |
//! | `validate`    | data                                     | data, report?            |
//! | `features`    | data                                     | data, stats manifest     |
//! | `train`       | data                                     | model, metrics?          |
//! | `evaluate`    | model, data, stats manifest?             | evaluation, model?       |
//! | `register`    | model, evaluation                        | registration             |
//! | `deploy_gate` | registration                             | decision                 |
//!
//! An `evaluate` node with a `model_name` param scores the current production
//! version of that model instead and takes `data, stats manifest?`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::exec::{StepIo, StepResult, StepRunner};
use super::spec::{ParamValue, StepKind, StepNode};
use crate::dataset::{self, Dataset};
use crate::drift::DriftThresholds;
use crate::feature_store::{FeatureStatsRecord, FeatureStore};
use crate::learner::{self, LogisticModel, ModelKind, TrainConfig};
use crate::registry::{Lineage, ModelRegistry};
use crate::validation::{self, Rule, SchemaViolation, ValidationReport, MAX_NULL_FRACTION};

/// Feature-store versions written by a `features` step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsManifest {
    pub dataset_id: String,
    pub versions: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: BTreeMap<String, f64>,
    pub feature_stats: Option<StatsManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub model_name: String,
    pub version: u64,
    pub artifact_digest: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub model_name: String,
    pub version: u64,
    pub metric: String,
    pub value: f64,
    pub min: f64,
    pub approved: bool,
    pub promoted: bool,
}

/// Runs builtin steps against a store directory. Relative `ingest` paths
/// resolve against `base_dir`.
#[derive(Debug, Clone)]
pub struct BuiltinRunner {
    pub store_root: PathBuf,
    pub base_dir: PathBuf,
}

impl BuiltinRunner {
    pub fn new(store_root: impl Into<PathBuf>, base_dir: impl Into<PathBuf>) -> Self {
        BuiltinRunner {
            store_root: store_root.into(),
            base_dir: base_dir.into(),
        }
    }
}

impl StepRunner for BuiltinRunner {
    fn run(&self, node: &StepNode, io: &StepIo) -> StepResult {
        match node.kind {
            StepKind::Ingest => self.ingest(node, io),
            StepKind::Validate => self.validate(node, io),
            StepKind::Features => self.features(node, io),
            StepKind::Train => train(node, io),
            StepKind::Evaluate => self.evaluate(node, io),
            StepKind::Register => self.register(node, io),
            StepKind::DeployGate => self.deploy_gate(node, io),
            StepKind::Command => self.command(node, io),
        }
    }
}

fn required<'a>(node: &'a StepNode, key: &str) -> Result<&'a str, String> {
    node.param_str(key)
        .ok_or_else(|| format!("param `{key}` must be a string"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StepResult {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_data(path: &Path) -> Result<Dataset, String> {
    dataset::ingest_csv(path).map_err(|e| e.to_string())
}

fn thresholds(node: &StepNode) -> DriftThresholds {
    let mut t = DriftThresholds::default();
    if let Some(v) = node.param_f64("kl_delta") {
        t.kl_delta = v;
    }
    if let Some(v) = node.param_f64("psi_threshold") {
        t.psi_threshold = v;
    }
    t
}

fn train(node: &StepNode, io: &StepIo) -> StepResult {
    let data = read_data(&io.inputs[0])?;
    let mut config = TrainConfig::new(required(node, "target")?);
    config.seed = io.seed;
    if let Some(kind) = node.param_str("model") {
        config.kind = kind.parse::<ModelKind>()?;
    }
    config.features = node.param_list("features");
    if let Some(e) = node.param_u64("epochs") {
        config.epochs = e as usize;
    }
    if let Some(lr) = node.param_f64("learning_rate") {
        config.learning_rate = lr;
    }
    let outcome = learner::train(&data, &config)?;
    fs::write(&io.outputs[0], outcome.model.to_bytes())?;
    if let Some(path) = io.outputs.get(1) {
        write_json(path, &outcome.metrics)?;
    }
    Ok(())
}

impl BuiltinRunner {
    fn ingest(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let path = self.base_dir.join(required(node, "path")?);
        let data = read_data(&path)?;
        if data.is_empty() {
            return Err(format!("{}: no data rows", path.display()).into());
        }
        data.write_csv(&io.outputs[0])?;
        Ok(())
    }

    /// Fails on schema problems (missing or null target, columns over the
    /// null limit). Drift against `dataset_id` reference stats is reported,
    /// and fails the step only with `fail_on_drift: true`.
    fn validate(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let data = read_data(&io.inputs[0])?;
        if data.is_empty() {
            return Err(validation::ValidationError::EmptyDataset.into());
        }
        let mut report = match node.param_str("dataset_id") {
            Some(ds) => {
                let store = FeatureStore::open(&self.store_root);
                let summaries = store.list_stats(ds)?;
                let present: Vec<&str> = summaries
                    .iter()
                    .map(|s| s.feature.as_str())
                    .filter(|f| data.column(f).is_some())
                    .collect();
                let reference = store.latest_set(ds, &present)?;
                validation::validate_ingest(&reference, &present, &data, None, thresholds(node))?
            }
            None => ValidationReport {
                schema_violations: Vec::new(),
                drift_reports: Vec::new(),
                passed: true,
                flagged_features: Vec::new(),
            },
        };
        for col in data.columns() {
            let (n, nulls) = (col.len(), col.null_count());
            let already = report
                .schema_violations
                .iter()
                .any(|v| v.column == col.name && v.rule == Rule::ExcessiveNulls);
            if nulls as f64 > MAX_NULL_FRACTION * n as f64 && !already {
                report.schema_violations.push(SchemaViolation::new(
                    &col.name,
                    Rule::ExcessiveNulls,
                    nulls,
                    format!("{nulls} of {n} values are null"),
                ));
            }
        }
        if let Some(target) = node.param_str("target") {
            match data.column(target) {
                None => report
                    .schema_violations
                    .push(SchemaViolation::new(target, Rule::MissingColumn, 0, "target column absent")),
                Some(c) if c.null_count() > 0 => report.schema_violations.push(SchemaViolation::new(
                    target,
                    Rule::UnexpectedNull,
                    c.null_count(),
                    "target has nulls",
                )),
                Some(_) => {}
            }
        }
        let schema_ok = report.schema_violations.is_empty();
        report.passed = schema_ok && report.flagged_features.is_empty();
        if let Some(path) = io.outputs.get(1) {
            write_json(path, &report)?;
        }
        if !schema_ok {
            let msgs: Vec<String> = report
                .schema_violations
                .iter()
                .map(|v| format!("{}: {}", v.column, v.detail))
                .collect();
            return Err(format!("schema violations: {}", msgs.join("; ")).into());
        }
        if node.param_bool("fail_on_drift").unwrap_or(false) && !report.flagged_features.is_empty() {
            return Err(format!("drift flagged on: {}", report.flagged_features.join(", ")).into());
        }
        fs::copy(&io.inputs[0], &io.outputs[0])?;
        Ok(())
    }

    /// Fits and stores reference statistics for the feature columns (the
    /// `features` list, or every column except `target`).
    fn features(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let data = read_data(&io.inputs[0])?;
        let dataset_id = required(node, "dataset_id")?;
        let bins = node.param_u64("bins").unwrap_or(crate::drift::DEFAULT_BINS as u64) as usize;
        let target = node.param_str("target");
        let explicit = node.param_list("features");
        let names: Vec<String> = match &explicit {
            Some(list) => list.clone(),
            None => data
                .column_names()
                .into_iter()
                .filter(|c| Some(*c) != target)
                .map(str::to_string)
                .collect(),
        };
        let store = FeatureStore::open(&self.store_root);
        let mut versions = BTreeMap::new();
        for name in &names {
            let column = data.column(name).ok_or_else(|| format!("feature column `{name}` not found"))?;
            match FeatureStatsRecord::fit(dataset_id, column, bins) {
                Ok(record) => {
                    versions.insert(name.clone(), store.put_stats(record)?);
                }
                Err(e) if explicit.is_none() => tracing::warn!(feature = %name, error = %e, "feature skipped"),
                Err(e) => return Err(e.into()),
            }
        }
        if versions.is_empty() {
            return Err("no feature statistics could be fitted".into());
        }
        fs::copy(&io.inputs[0], &io.outputs[0])?;
        write_json(
            &io.outputs[1],
            &StatsManifest {
                dataset_id: dataset_id.to_string(),
                versions,
            },
        )
    }

    /// Holdout accuracy of a freshly trained model (same split as `train`
    /// with the same seed), or full-data accuracy of the production model.
    fn evaluate(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let (model, data_path, stats_path, full) = match node.param_str("model_name") {
            Some(name) => {
                let (_, bytes) = ModelRegistry::open(&self.store_root).load_production(name)?;
                (LogisticModel::from_bytes(&bytes)?, &io.inputs[0], io.inputs.get(1), true)
            }
            None => (
                LogisticModel::from_bytes(&fs::read(&io.inputs[0])?)?,
                &io.inputs[1],
                io.inputs.get(2),
                false,
            ),
        };
        let target = required(node, "target")?;
        if model.target != target {
            return Err(format!("model predicts `{}`, step target is `{target}`", model.target).into());
        }
        let data = read_data(data_path)?;
        let scored = if full {
            data
        } else {
            data.take_rows(&learner::split_rows(data.n_rows(), io.seed).1)
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("accuracy".to_string(), model.accuracy(&scored)?);
        metrics.insert("rows".to_string(), scored.n_rows() as f64);
        let feature_stats = stats_path.map(|p| read_json::<StatsManifest>(p)).transpose()?;
        write_json(&io.outputs[0], &Evaluation { metrics, feature_stats })?;
        if let Some(path) = io.outputs.get(1) {
            fs::write(path, model.to_bytes())?;
        }
        Ok(())
    }

    /// Registers the model as a candidate whose parent is the current
    /// production version.
    fn register(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let name = required(node, "model_name")?;
        let evaluation: Evaluation = read_json(&io.inputs[1])?;
        let registry = ModelRegistry::open(&self.store_root);
        let parent = registry.state(name)?.production;
        let lineage = Lineage {
            run_id: Some(io.run_id.clone()),
            parent_version: parent,
            feature_stats: evaluation.feature_stats.map(|m| m.versions).unwrap_or_default(),
        };
        let registered = registry.register(name, &io.inputs[0], evaluation.metrics, lineage)?;
        write_json(
            &io.outputs[0],
            &Registration {
                model_name: name.to_string(),
                version: registered.version(),
                artifact_digest: registered.meta.artifact_digest.clone(),
                metrics: registered.meta.metrics.clone(),
            },
        )
    }

    /// Approves when `metric` (default `accuracy`) reaches `min` (default 0),
    /// and promotes when `promote: true`. A rejected candidate fails the step.
    fn deploy_gate(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let reg: Registration = read_json(&io.inputs[0])?;
        let metric = node.param_str("metric").unwrap_or("accuracy").to_string();
        let min = node.param_f64("min").unwrap_or(0.0);
        let value = *reg
            .metrics
            .get(&metric)
            .ok_or_else(|| format!("candidate has no metric `{metric}`"))?;
        let approved = value >= min;
        let mut promoted = false;
        if approved && node.param_bool("promote").unwrap_or(false) {
            ModelRegistry::open(&self.store_root).promote(&reg.model_name, reg.version)?;
            promoted = true;
        }
        let decision = GateDecision {
            model_name: reg.model_name.clone(),
            version: reg.version,
            metric: metric.clone(),
            value,
            min,
            approved,
            promoted,
        };
        write_json(&io.outputs[0], &decision)?;
        if !approved {
            return Err(format!("gate rejected {} v{}: {metric} {value:.4} < {min}", reg.model_name, reg.version).into());
        }
        Ok(())
    }

    /// Runs `sh -c <command>` in the node directory. Paths arrive as
    /// `MLOPS_INPUT_<i>` / `MLOPS_OUTPUT_<i>`; scalar params as
    /// `MLOPS_PARAM_<KEY>`.
    fn command(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let line = node.command.as_deref().ok_or("command node has no command line")?;
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(line)
            .current_dir(&io.node_dir)
            .env("MLOPS_RUN_ID", &io.run_id)
            .env("MLOPS_NODE_ID", &node.id)
            .env("MLOPS_NODE_DIR", &io.node_dir)
            .env("MLOPS_SEED", io.seed.to_string())
            .env("MLOPS_STORE", &self.store_root);
        for (i, p) in io.inputs.iter().enumerate() {
            cmd.env(format!("MLOPS_INPUT_{i}"), p);
        }
        for (i, p) in io.outputs.iter().enumerate() {
            cmd.env(format!("MLOPS_OUTPUT_{i}"), p);
        }
        for (k, v) in &node.params {
            let value = match v {
                ParamValue::Bool(b) => b.to_string(),
                ParamValue::Int(i) => i.to_string(),
                ParamValue::Float(f) => f.to_string(),
                ParamValue::Str(s) => s.clone(),
                ParamValue::List(_) => continue,
            };
            let key: String = k
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
                .collect();
            cmd.env(format!("MLOPS_PARAM_{key}"), value);
        }
        let out = cmd.output()?;
        fs::write(io.node_dir.join("stdout.log"), &out.stdout)?;
        fs::write(io.node_dir.join("stderr.log"), &out.stderr)?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            let tail: Vec<&str> = stderr.lines().rev().take(5).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            return Err(format!("command exited with {}: {}", out.status, tail.join(" | ")).into());
        }
        Ok(())
    }
}
