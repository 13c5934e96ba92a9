//! Synthetic drift scenarios and drift-detection accuracy.
//!
//! Numeric features `x0..` are standard normal in the reference regime;
//! categorical features `c0..` draw uniformly from four labels. The binary
//! label `y` is 1 when a fixed random linear score of the features is
//! positive, optionally flipped with probability `label_noise`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, Dataset};
use crate::drift::{self, BinnedDistribution, DriftThresholds};
use crate::feature_store::{FeatureStatsRecord, FeatureStoreError};
use crate::monitor::{self, Monitor, MonitorConfig, MonitorError, MonitorEvent, MonitorEventKind};
use crate::pipeline::{render_yaml, ParamValue};
use crate::registry::{ModelRegistry, RegistryError};
use crate::synth::{self, Intent, IntentKind};

pub const CATEGORIES: [&str; 4] = ["a", "b", "c", "d"];
pub const LABEL_COLUMN: &str = "y";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] FeatureStoreError),
    #[error(transparent)]
    Drift(#[from] drift::DriftError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// Adds `magnitude` reference standard deviations to numeric features.
    MeanShift,
    /// Moves `magnitude` probability mass onto the first category.
    CategoryRebalance,
    /// Replaces label-rule weights `w` of the chosen features by `-magnitude * w`.
    ConceptFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEvent {
    /// First affected batch; the change persists to the end of the stream.
    pub batch: usize,
    pub kind: DriftKind,
    pub magnitude: f64,
    /// Affected features. Defaults: `x0` for mean shifts, `c0` for
    /// rebalancing, every feature for concept flips.
    #[serde(default)]
    pub features: Vec<String>,
}

fn d_numeric() -> usize {
    3
}
fn d_categorical() -> usize {
    1
}
fn d_rows() -> usize {
    10_000
}
fn d_batches() -> usize {
    20
}
fn d_bins() -> usize {
    drift::DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "d_numeric")]
    pub n_numeric: usize,
    #[serde(default = "d_categorical")]
    pub n_categorical: usize,
    #[serde(default = "d_rows")]
    pub rows_per_batch: usize,
    /// Rows in the reference sample; `rows_per_batch` when absent.
    #[serde(default)]
    pub reference_rows: Option<usize>,
    #[serde(default = "d_batches")]
    pub batches: usize,
    #[serde(default)]
    pub drift_events: Vec<DriftEvent>,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "d_bins")]
    pub bins: usize,
}

impl ScenarioConfig {
    pub fn new(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            n_numeric: d_numeric(),
            n_categorical: d_categorical(),
            rows_per_batch: d_rows(),
            reference_rows: None,
            batches: d_batches(),
            drift_events: Vec::new(),
            label_noise: 0.0,
            bins: d_bins(),
        }
    }

    /// `batches` batches with a mean shift of `sigmas` on `x0` from the
    /// middle batch on; no event when `sigmas` is zero.
    pub fn mean_shift(seed: u64, sigmas: f64) -> Self {
        let mut c = ScenarioConfig::new(seed);
        if sigmas > 0.0 {
            c.drift_events.push(DriftEvent {
                batch: c.batches / 2,
                kind: DriftKind::MeanShift,
                magnitude: sigmas,
                features: Vec::new(),
            });
        }
        c
    }

    pub fn numeric_names(&self) -> Vec<String> {
        (0..self.n_numeric).map(|i| format!("x{i}")).collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        (0..self.n_categorical).map(|i| format!("c{i}")).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = self.numeric_names();
        out.extend(self.categorical_names());
        out
    }

    fn event_features(&self, event: &DriftEvent) -> Vec<String> {
        if !event.features.is_empty() {
            return event.features.clone();
        }
        match event.kind {
            DriftKind::MeanShift => self.numeric_names().into_iter().take(1).collect(),
            DriftKind::CategoryRebalance => self.categorical_names().into_iter().take(1).collect(),
            DriftKind::ConceptFlip => self.feature_names(),
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_numeric + self.n_categorical == 0 {
            return bad("at least one feature is required".into());
        }
        if self.batches == 0 {
            return bad("batches must be at least 1".into());
        }
        if self.rows_per_batch == 0 || self.reference_rows == Some(0) {
            return bad("row counts must be positive".into());
        }
        if self.bins < 2 {
            return bad("bins must be at least 2".into());
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return bad(format!("label_noise {} not in [0, 0.5]", self.label_noise));
        }
        let numeric = self.numeric_names();
        let categorical = self.categorical_names();
        for (i, e) in self.drift_events.iter().enumerate() {
            if e.batch >= self.batches {
                return bad(format!("event {i}: batch {} outside 0..{}", e.batch, self.batches));
            }
            if !(e.magnitude > 0.0) || !e.magnitude.is_finite() {
                return bad(format!("event {i}: magnitude must be positive"));
            }
            if e.kind == DriftKind::CategoryRebalance && e.magnitude > 1.0 {
                return bad(format!("event {i}: rebalanced mass {} exceeds 1", e.magnitude));
            }
            let features = self.event_features(e);
            if features.is_empty() {
                return bad(format!("event {i}: no features of the required type"));
            }
            for f in &features {
                let ok = match e.kind {
                    DriftKind::MeanShift => numeric.contains(f),
                    DriftKind::CategoryRebalance => categorical.contains(f),
                    DriftKind::ConceptFlip => numeric.contains(f) || categorical.contains(f),
                };
                if !ok {
                    return bad(format!("event {i}: feature `{f}` does not fit {:?}", e.kind));
                }
            }
        }
        Ok(())
    }
}

/// Generator parameters in effect for one batch.
#[derive(Debug, Clone)]
struct Regime {
    shift: Vec<f64>,
    cat_probs: Vec<[f64; 4]>,
    weights: Vec<f64>,
    effects: Vec<[f64; 4]>,
}

impl Regime {
    fn base(config: &ScenarioConfig) -> Self {
        // The label rule has its own stream so it is shared by all batches.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX);
        let weights = (0..config.n_numeric).map(|_| rng.sample(StandardNormal)).collect();
        let effects = (0..config.n_categorical)
            .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Regime {
            shift: vec![0.0; config.n_numeric],
            cat_probs: vec![[0.25; 4]; config.n_categorical],
            weights,
            effects,
        }
    }

    fn apply(&mut self, config: &ScenarioConfig, event: &DriftEvent) {
        for f in config.event_features(event) {
            let (numeric, idx) = match f.strip_prefix('x') {
                Some(i) => (true, i.parse::<usize>().expect("checked name")),
                None => (false, f[1..].parse::<usize>().expect("checked name")),
            };
            match (event.kind, numeric) {
                (DriftKind::MeanShift, _) => self.shift[idx] += event.magnitude,
                (DriftKind::CategoryRebalance, _) => {
                    let p = &mut self.cat_probs[idx];
                    for (j, v) in p.iter_mut().enumerate() {
                        *v = (1.0 - event.magnitude) * *v + if j == 0 { event.magnitude } else { 0.0 };
                    }
                }
                (DriftKind::ConceptFlip, true) => self.weights[idx] *= -event.magnitude,
                (DriftKind::ConceptFlip, false) => self.effects[idx].iter_mut().for_each(|e| *e *= -event.magnitude),
            }
        }
    }

    fn sample(&self, config: &ScenarioConfig, rows: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let mut numeric = vec![Vec::with_capacity(rows); config.n_numeric];
        let mut categorical = vec![Vec::with_capacity(rows); config.n_categorical];
        let mut labels = Vec::with_capacity(rows);
        let pickers: Vec<WeightedIndex<f64>> = self
            .cat_probs
            .iter()
            .map(|p| WeightedIndex::new(p).expect("valid probabilities"))
            .collect();
        for _ in 0..rows {
            let mut z = 0.0;
            for (j, col) in numeric.iter_mut().enumerate() {
                let x = rng.sample::<f64, _>(StandardNormal) + self.shift[j];
                z += self.weights[j] * x;
                col.push(x);
            }
            for (j, col) in categorical.iter_mut().enumerate() {
                let k = pickers[j].sample(rng);
                z += self.effects[j][k];
                col.push(CATEGORIES[k]);
            }
            let mut y = z > 0.0;
            if config.label_noise > 0.0 && rng.gen_bool(config.label_noise) {
                y = !y;
            }
            labels.push(if y { 1.0 } else { 0.0 });
        }
        let mut columns: Vec<Column> = numeric
            .into_iter()
            .enumerate()
            .map(|(j, v)| Column::numeric(format!("x{j}"), v))
            .collect();
        columns.extend(
            categorical
                .into_iter()
                .enumerate()
                .map(|(j, v)| Column::categorical(format!("c{j}"), v)),
        );
        columns.push(Column::numeric(LABEL_COLUMN, labels));
        Dataset::new(columns).expect("columns have equal length")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub reference: Dataset,
    pub batches: Vec<Dataset>,
    /// Ground truth: true from the first drift event on.
    pub drift_labels: Vec<bool>,
}

/// Deterministic under `config.seed`: each batch has its own random stream.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario, HarnessError> {
    config.check()?;
    let base = Regime::base(config);
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s);
        rng
    };
    let reference = base.sample(config, config.reference_rows.unwrap_or(config.rows_per_batch), &mut stream(0));
    let mut events = config.drift_events.clone();
    events.sort_by_key(|e| e.batch);
    let mut regime = base;
    let mut batches = Vec::with_capacity(config.batches);
    let mut labels = Vec::with_capacity(config.batches);
    let mut next = 0;
    for b in 0..config.batches {
        while next < events.len() && events[next].batch == b {
            regime.apply(config, &events[next]);
            next += 1;
        }
        batches.push(regime.sample(config, config.rows_per_batch, &mut stream(b as u64 + 1)));
        labels.push(next > 0);
    }
    Ok(Scenario {
        reference,
        batches,
        drift_labels: labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDecision {
    pub batch: usize,
    pub drift_score: f64,
    pub flagged: bool,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdaResult {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub dda: f64,
    pub decisions: Vec<BatchDecision>,
}

impl DdaResult {
    fn from_decisions(decisions: Vec<BatchDecision>) -> Self {
        let count = |flagged: bool, truth: bool| {
            decisions
                .iter()
                .filter(|d| d.flagged == flagged && d.truth == truth)
                .count()
        };
        let (tp, fp, tn, fn_) = (count(true, true), count(true, false), count(false, false), count(false, true));
        let total = decisions.len().max(1);
        DdaResult {
            tp,
            fp,
            tn,
            fn_,
            dda: (tp + tn) as f64 / total as f64,
            decisions,
        }
    }

    /// FP / (FP + TN); zero when there are no negative batches.
    pub fn false_positive_rate(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }

    pub fn decisions_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for d in &self.decisions {
            w.serialize(d).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Scores every batch against reference bins fitted on the scenario's
/// reference sample, flagging with the monitor's PSI rule (no model, so the
/// posterior rule does not apply).
pub fn run_dda_scenario(config: &ScenarioConfig, thresholds: &DriftThresholds) -> Result<DdaResult, HarnessError> {
    thresholds.check()?;
    let scenario = generate_scenario(config)?;
    let features = config.feature_names();
    let reference: Vec<(String, BinnedDistribution)> = features
        .iter()
        .map(|f| {
            let col = scenario.reference.column(f).expect("generated column");
            Ok((f.clone(), FeatureStatsRecord::fit("scenario", col, config.bins)?.distribution()))
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut decisions = Vec::with_capacity(config.batches);
    for (b, batch) in scenario.batches.iter().enumerate() {
        let mut psi = BTreeMap::new();
        for (f, dist) in &reference {
            let col = batch.column(f).expect("generated column");
            let current = col.with_values(!dist.binning.is_numeric(), |v| drift::bin_distribution(v, &dist.binning))?;
            psi.insert(f.clone(), drift::evaluate_drift(f, dist, &current, *thresholds)?.psi);
        }
        let score = monitor::drift_score(&psi);
        decisions.push(BatchDecision {
            batch: b,
            drift_score: score,
            flagged: monitor::psi_trigger(score, thresholds),
            truth: scenario.drift_labels[b],
        });
    }
    Ok(DdaResult::from_decisions(decisions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub seeds: Vec<u64>,
    pub mean_dda: f64,
    pub min_dda: f64,
    /// Pooled over all seeds.
    pub false_positive_rate: f64,
    pub results: Vec<DdaResult>,
}

/// Runs `config` once per seed, spread over the available cores.
pub fn monte_carlo(config: &ScenarioConfig, seeds: &[u64], thresholds: &DriftThresholds) -> Result<MonteCarloSummary, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("no seeds".into()));
    }
    let workers = std::thread::available_parallelism().map_or(1, usize::from).min(seeds.len());
    let chunk = seeds.len().div_ceil(workers);
    let results: Vec<DdaResult> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let c = ScenarioConfig { seed, ..config.clone() };
                            run_dda_scenario(&c, thresholds)
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario worker panicked"))
            .collect::<Result<Vec<Vec<_>>, _>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;
    let ddas: Vec<f64> = results.iter().map(|r| r.dda).collect();
    let (fp, tn) = results.iter().fold((0, 0), |(fp, tn), r| (fp + r.fp, tn + r.tn));
    Ok(MonteCarloSummary {
        seeds: seeds.to_vec(),
        mean_dda: ddas.iter().sum::<f64>() / ddas.len() as f64,
        min_dda: ddas.iter().copied().fold(f64::INFINITY, f64::min),
        false_positive_rate: if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 },
        results,
    })
}

/// Closed-loop run: bootstrap a production model on the reference sample,
/// then stream the scenario's batches through a [`Monitor`].
#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub scenario: ScenarioConfig,
    pub monitor_cooldown: usize,
    /// Make the retrain pipeline's train step fail.
    pub sabotage: bool,
}

impl ClosedLoopConfig {
    /// 40 batches of 4,000 rows with a concept flip of every feature at batch 20.
    pub fn concept_flip(seed: u64) -> Self {
        let mut scenario = ScenarioConfig::new(seed);
        scenario.batches = 40;
        scenario.rows_per_batch = 4_000;
        scenario.reference_rows = Some(10_000);
        scenario.label_noise = 0.02;
        scenario.drift_events.push(DriftEvent {
            batch: 20,
            kind: DriftKind::ConceptFlip,
            magnitude: 1.0,
            features: Vec::new(),
        });
        ClosedLoopConfig {
            scenario,
            monitor_cooldown: 3,
            sabotage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub drift_batch: Option<usize>,
    pub bootstrap_version: u64,
    pub final_version: Option<u64>,
    pub first_trigger: Option<usize>,
    pub promotions: Vec<(usize, u64)>,
    /// Mean batch accuracy of the production model before the drift point.
    pub pre_drift_accuracy: f64,
    /// Mean batch accuracy after the first promotion; batches the new model
    /// never trained on.
    pub post_retrain_accuracy: Option<f64>,
    pub accuracy: Vec<Option<f64>>,
    pub events: Vec<MonitorEvent>,
    pub store_root: PathBuf,
}

pub fn run_closed_loop(config: &ClosedLoopConfig, workdir: &Path) -> Result<ClosedLoopReport, HarnessError> {
    let scenario = generate_scenario(&config.scenario)?;
    let store_root = workdir.join("store");
    let pipeline_path = workdir.join("retrain.yaml");
    let intent = Intent {
        kind: IntentKind::TrainModel,
        file: workdir.join("scenario"),
        line: 1,
        dataset: "scenario.csv".into(),
        target: LABEL_COLUMN.into(),
        model: Some("logreg".into()),
        seed: Some(config.scenario.seed),
        features: None,
    };
    let mut spec = synth::synthesize_pipeline(&intent).map_err(|e| HarnessError::Config(e.to_string()))?;
    if config.sabotage {
        let train = spec.node_mut("train").expect("template has a train node");
        train.params.insert("target".into(), ParamValue::Str("no_such_column".into()));
    }
    std::fs::create_dir_all(workdir).map_err(|source| HarnessError::Io {
        path: workdir.to_path_buf(),
        source,
    })?;
    std::fs::write(&pipeline_path, render_yaml(&spec)).map_err(|source| HarnessError::Io {
        path: pipeline_path.clone(),
        source,
    })?;

    let mut mc = MonitorConfig::new("scenario", "scenario", &pipeline_path);
    mc.target = Some(LABEL_COLUMN.into());
    mc.cooldown = config.monitor_cooldown;
    mc.session = Some(format!("seed-{}", config.scenario.seed));

    // Bootstrap with an intact pipeline even when the retrain is sabotaged.
    let bootstrap_version = {
        let clean_path = workdir.join("bootstrap.yaml");
        let clean = synth::synthesize_pipeline(&intent).map_err(|e| HarnessError::Config(e.to_string()))?;
        std::fs::write(&clean_path, render_yaml(&clean)).map_err(|source| HarnessError::Io {
            path: clean_path.clone(),
            source,
        })?;
        let mut bc = mc.clone();
        bc.retrain_pipeline = clean_path;
        bc.session = Some(format!("bootstrap-{}", config.scenario.seed));
        Monitor::new(bc, &store_root)?.bootstrap(&scenario.reference)?
    };

    let mut monitor = Monitor::new(mc, &store_root)?;
    let mut accuracy = Vec::new();
    for batch in &scenario.batches {
        let (sample, _) = monitor.process(batch)?;
        accuracy.push(sample.accuracy);
    }
    let events = monitor.events().to_vec();
    let drift_batch = config.scenario.drift_events.iter().map(|e| e.batch).min();
    let first_trigger = events
        .iter()
        .find(|e| e.kind == MonitorEventKind::RetrainTriggered)
        .map(|e| e.batch);
    let promotions: Vec<(usize, u64)> = events
        .iter()
        .filter(|e| e.kind == MonitorEventKind::ModelPromoted)
        .map(|e| (e.batch, e.version.expect("promotion carries a version")))
        .collect();
    let mean = |xs: &[Option<f64>]| {
        let v: Vec<f64> = xs.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let pre_end = drift_batch.unwrap_or(accuracy.len());
    let pre_drift_accuracy = mean(&accuracy[..pre_end]).unwrap_or(0.0);
    let post_retrain_accuracy = promotions
        .iter()
        .find(|(b, _)| drift_batch.is_none_or(|d| *b >= d))
        .and_then(|(b, _)| mean(&accuracy[(b + 1).min(accuracy.len())..]));
    let final_version = ModelRegistry::open(&store_root).state("scenario")?.production;
    Ok(ClosedLoopReport {
        drift_batch,
        bootstrap_version,
        final_version,
        first_trigger,
        promotions,
        pre_drift_accuracy,
        post_retrain_accuracy,
        accuracy,
        events,
        store_root,
    })
}
