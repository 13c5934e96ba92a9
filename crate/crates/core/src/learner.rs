//! Builtin binary classifier: logistic regression by batch gradient descent.
//!
//! Numeric features are standardized with training-set moments, categorical
//! features are one-hot encoded over the training vocabulary. The parameter
//! vector is `[w_1 .. w_d, b]`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnData, Dataset};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 42;
pub const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("feature column `{0}` not found")]
    MissingFeature(String),
    #[error("target must be binary; found {0} distinct values")]
    NonBinaryTarget(usize),
    #[error("target has a single class `{0}`; nothing to learn")]
    SingleClass(String),
    #[error("target has null values")]
    NullTarget,
    #[error("no feature columns")]
    NoFeatures,
    #[error("too few rows ({0}) for a train/holdout split")]
    TooFewRows(usize),
    #[error("unknown model kind `{kind}`; builtin kinds: {}", BUILTIN_MODEL_KINDS.join(", "))]
    UnknownKind { kind: String },
    #[error("invalid model artifact: {0}")]
    BadArtifact(String),
}

pub const BUILTIN_MODEL_KINDS: &[&str] = &["logreg", "baseline"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Logistic regression.
    Logreg,
    /// Majority-rate intercept only.
    Baseline,
}

impl std::str::FromStr for ModelKind {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" => Ok(ModelKind::Logreg),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(LearnerError::UnknownKind { kind: other.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncodedColumn {
    Numeric { name: String, mean: f64, std: f64 },
    OneHot { name: String, categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<EncodedColumn>,
}

impl Encoder {
    fn fit(data: &Dataset, features: &[&str]) -> Result<Self, LearnerError> {
        let mut columns = Vec::new();
        for &name in features {
            let col = data
                .column(name)
                .ok_or_else(|| LearnerError::MissingFeature(name.to_string()))?;
            columns.push(match &col.data {
                ColumnData::Numeric(_) => {
                    let values = col.numeric_values();
                    let n = values.len().max(1) as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    EncodedColumn::Numeric {
                        name: name.to_string(),
                        mean,
                        std,
                    }
                }
                ColumnData::Categorical(_) => {
                    let mut categories = col.labels();
                    categories.sort();
                    categories.dedup();
                    EncodedColumn::OneHot {
                        name: name.to_string(),
                        categories,
                    }
                }
            });
        }
        Ok(Encoder { columns })
    }

    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Numeric { .. } => 1,
                EncodedColumn::OneHot { categories, .. } => categories.len(),
            })
            .sum()
    }

    /// Design matrix rows. Nulls map to the training mean (numeric) or to
    /// the all-zero code (categorical), as do unseen labels.
    pub fn transform(&self, data: &Dataset) -> Result<Vec<Vec<f64>>, LearnerError> {
        let n = data.n_rows();
        let mut rows = vec![Vec::with_capacity(self.width()); n];
        for spec in &self.columns {
            match spec {
                EncodedColumn::Numeric { name, mean, std } => {
                    let col = data.column(name).ok_or_else(|| LearnerError::MissingFeature(name.clone()))?;
                    match &col.data {
                        ColumnData::Numeric(values) => {
                            for (row, v) in rows.iter_mut().zip(values) {
                                row.push(v.map_or(0.0, |v| (v - mean) / std));
                            }
                        }
                        ColumnData::Categorical(_) => return Err(LearnerError::MissingFeature(name.clone())),
                    }
                }
                EncodedColumn::OneHot { name, categories } => {
                    let col = data.column(name).ok_or_else(|| LearnerError::MissingFeature(name.clone()))?;
                    let labels: Vec<Option<String>> = match &col.data {
                        ColumnData::Numeric(v) => v.iter().map(|x| x.map(|x| x.to_string())).collect(),
                        ColumnData::Categorical(v) => v.clone(),
                    };
                    for (row, label) in rows.iter_mut().zip(labels) {
                        let hit = label.and_then(|l| categories.binary_search(&l).ok());
                        row.extend((0..categories.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(rows)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn linear(params: &[f64], row: &[f64]) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    w.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + b[0]
}

/// Mean logistic loss at `params`.
pub fn loss(params: &[f64], x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = linear(params, row);
            t * softplus(-z) + (1.0 - t) * softplus(z)
        })
        .sum::<f64>()
        / n
}

/// Mean logistic loss and its analytic gradient.
pub fn loss_and_gradient(params: &[f64], x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = params.len() - 1;
    let mut grad = vec![0.0; d + 1];
    let mut total = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = linear(params, row);
        total += t * softplus(-z) + (1.0 - t) * softplus(z);
        let r = sigmoid(z) - t;
        for (g, xi) in grad[..d].iter_mut().zip(row) {
            *g += r * xi;
        }
        grad[d] += r;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub target: String,
    /// Feature columns; all non-target columns when `None`.
    pub features: Option<Vec<String>>,
    pub kind: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl TrainConfig {
    pub fn new(target: impl Into<String>) -> Self {
        TrainConfig {
            target: target.into(),
            features: None,
            kind: ModelKind::Logreg,
            seed: DEFAULT_SEED,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub kind: ModelKind,
    pub target: String,
    /// Target labels `[negative, positive]`.
    pub classes: [String; 2],
    pub encoder: Encoder,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LogisticModel,
    /// `accuracy` (holdout), `train_accuracy`, `train_loss`, row counts.
    pub metrics: BTreeMap<String, f64>,
    /// Training loss before each epoch, plus the final loss.
    pub loss_history: Vec<f64>,
}

/// Deterministic `(train, holdout)` row split.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let holdout = ((n as f64) * HOLDOUT_FRACTION).round() as usize;
    let train = idx.split_off(holdout);
    (train, idx)
}

fn target_classes(data: &Dataset, target: &str) -> Result<[String; 2], LearnerError> {
    let col = data
        .column(target)
        .ok_or_else(|| LearnerError::MissingTarget(target.to_string()))?;
    if col.null_count() > 0 {
        return Err(LearnerError::NullTarget);
    }
    let mut labels = col.labels();
    labels.sort();
    labels.dedup();
    match labels.len() {
        2 => Ok([labels[0].clone(), labels[1].clone()]),
        1 => Err(LearnerError::SingleClass(labels[0].clone())),
        n => Err(LearnerError::NonBinaryTarget(n)),
    }
}

fn target_vector(data: &Dataset, target: &str, classes: &[String; 2]) -> Result<Vec<f64>, LearnerError> {
    let col = data
        .column(target)
        .ok_or_else(|| LearnerError::MissingTarget(target.to_string()))?;
    if col.null_count() > 0 {
        return Err(LearnerError::NullTarget);
    }
    Ok(col
        .labels()
        .into_iter()
        .map(|l| if l == classes[1] { 1.0 } else { 0.0 })
        .collect())
}

/// Trains on 80% of rows and reports accuracy on the held-out 20%.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, LearnerError> {
    let classes = target_classes(data, &config.target)?;
    let features: Vec<&str> = match &config.features {
        Some(list) => list.iter().map(String::as_str).collect(),
        None => data
            .column_names()
            .into_iter()
            .filter(|c| *c != config.target)
            .collect(),
    };
    if features.is_empty() {
        return Err(LearnerError::NoFeatures);
    }
    if data.n_rows() < 5 {
        return Err(LearnerError::TooFewRows(data.n_rows()));
    }
    let (train_rows, holdout_rows) = split_rows(data.n_rows(), config.seed);
    let train_set = data.take_rows(&train_rows);
    let holdout_set = data.take_rows(&holdout_rows);

    let encoder = Encoder::fit(&train_set, &features)?;
    let x = encoder.transform(&train_set)?;
    let y = target_vector(&train_set, &config.target, &classes)?;
    let d = encoder.width();

    let mut params = vec![0.0; d + 1];
    let mut loss_history = Vec::with_capacity(config.epochs + 1);
    match config.kind {
        ModelKind::Logreg => {
            for _ in 0..config.epochs {
                let (l, grad) = loss_and_gradient(&params, &x, &y);
                loss_history.push(l);
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= config.learning_rate * g;
                }
            }
        }
        ModelKind::Baseline => {
            let rate = (y.iter().sum::<f64>() / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
            params[d] = (rate / (1.0 - rate)).ln();
        }
    }
    loss_history.push(loss(&params, &x, &y));

    let bias = params.pop().expect("bias present");
    let model = LogisticModel {
        kind: config.kind,
        target: config.target.clone(),
        classes,
        encoder,
        weights: params,
        bias,
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("accuracy".to_string(), model.accuracy(&holdout_set)?);
    metrics.insert("train_accuracy".to_string(), model.accuracy(&train_set)?);
    metrics.insert("train_loss".to_string(), *loss_history.last().expect("nonempty"));
    metrics.insert("train_rows".to_string(), train_rows.len() as f64);
    metrics.insert("holdout_rows".to_string(), holdout_rows.len() as f64);
    Ok(TrainOutcome {
        model,
        metrics,
        loss_history,
    })
}

impl LogisticModel {
    pub fn predict_proba(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        let mut params = self.weights.clone();
        params.push(self.bias);
        Ok(self
            .encoder
            .transform(data)?
            .iter()
            .map(|row| sigmoid(linear(&params, row)))
            .collect())
    }

    /// Fraction of rows whose thresholded prediction matches the target column.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64, LearnerError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let y = target_vector(data, &self.target, &self.classes)?;
        let p = self.predict_proba(data)?;
        let hits = p
            .iter()
            .zip(&y)
            .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
            .count();
        Ok(hits as f64 / y.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("model serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        serde_json::from_slice(bytes).map_err(|e| LearnerError::BadArtifact(e.to_string()))
    }
}
