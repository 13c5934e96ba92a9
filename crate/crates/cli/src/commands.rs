//! Subcommand implementations. Errors map to exit code 2 in `main`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Subcommand};
use mlops_core::dataset::{ingest_csv, Dataset};
use mlops_core::drift::DriftThresholds;
use mlops_core::feature_store::{FeatureStore, VersionSel};
use mlops_core::harness::{monte_carlo, ScenarioConfig};
use mlops_core::monitor::{Monitor, MonitorConfig};
use mlops_core::pipeline::{execute, parse_yaml, render_yaml, validate_graph, BuiltinRunner, ExecOptions, RunStatus};
use mlops_core::registry::ModelRegistry;
use mlops_core::synth::{scan_source, RuleBasedProvider, SynthProvider};
use mlops_core::validation::validate_ingest;
use serde::Serialize;
use serde_json::json;

use crate::config::{load_file, merge_defaults};
use crate::{Context, Outcome};

fn outcome(ok: bool) -> Outcome {
    if ok {
        Outcome::Success
    } else {
        Outcome::Negative
    }
}

#[derive(Args)]
pub struct ThresholdArgs {
    /// PSI above which a feature is flagged.
    #[arg(long)]
    psi_threshold: Option<f64>,
    /// KL divergence above which a feature is flagged.
    #[arg(long)]
    kl_delta: Option<f64>,
}

impl ThresholdArgs {
    fn resolve(&self, base: DriftThresholds) -> Result<DriftThresholds> {
        let t = DriftThresholds {
            psi_threshold: self.psi_threshold.unwrap_or(base.psi_threshold),
            kl_delta: self.kl_delta.unwrap_or(base.kl_delta),
        };
        t.check()?;
        Ok(t)
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Source files or directories to scan for directives.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Directory for the generated pipeline files.
    #[arg(long, default_value = "pipelines")]
    out: PathBuf,
}

#[derive(Serialize)]
struct Written {
    name: String,
    path: PathBuf,
    steps: usize,
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<Outcome> {
    let intents = scan_source(&args.paths)?;
    let specs = RuleBasedProvider.synthesize_all(&intents)?;
    let mut written = Vec::new();
    if !specs.is_empty() {
        fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    }
    for spec in &specs {
        let path = args.out.join(format!("{}.yaml", spec.name));
        fs::write(&path, render_yaml(spec)).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(Written {
            name: spec.name.clone(),
            path,
            steps: spec.nodes.len(),
        });
    }
    ctx.emit(&json!({ "pipelines": written }), || {
        if written.is_empty() {
            return "no intents found".into();
        }
        written.iter().fold(String::new(), |mut s, w| {
            let _ = writeln!(s, "wrote {} ({} steps)", w.path.display(), w.steps);
            s
        })
    });
    Ok(Outcome::Success)
}

#[derive(Args)]
pub struct RunArgs {
    /// Pipeline YAML file.
    pipeline: PathBuf,
    /// Maximum number of steps running at once.
    #[arg(long)]
    max_parallel: Option<usize>,
}

pub fn run(ctx: &Context, args: RunArgs) -> Result<Outcome> {
    let text = fs::read_to_string(&args.pipeline).with_context(|| format!("cannot read {}", args.pipeline.display()))?;
    let spec = parse_yaml(&text).with_context(|| format!("invalid pipeline {}", args.pipeline.display()))?;
    if let Err(errors) = validate_graph(&spec) {
        let list: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
        bail!("invalid pipeline {}:\n  {}", args.pipeline.display(), list.join("\n  "));
    }
    let max_parallel = args.max_parallel.or(ctx.config.max_parallel).unwrap_or(1);
    if max_parallel == 0 {
        bail!("--max-parallel must be at least 1");
    }
    let store = ctx.store();
    let runs = store.join("runs");
    let base = args.pipeline.parent().map(Path::to_path_buf).unwrap_or_default();
    let opts = ExecOptions::new(&runs).max_parallel(max_parallel).seed(ctx.global.seed);
    let record = execute(&spec, &opts, &BuiltinRunner::new(&store, base))?;
    let record_path = runs.join(&record.run_id).join("record.json");
    ctx.emit(&json!({ "record_path": record_path, "record": record }), || {
        let mut s = format!("run {} {}\n", record.run_id, format!("{:?}", record.status).to_lowercase());
        for (i, layer) in record.layers.iter().enumerate() {
            for id in layer {
                let node = &record.nodes[id];
                let _ = write!(s, "  [{i}] {id:<16} {}", format!("{:?}", node.status).to_lowercase());
                if let Some(e) = &node.error {
                    let _ = write!(s, ": {e}");
                }
                s.push('\n');
            }
        }
        let _ = write!(s, "record: {}", record_path.display());
        s
    });
    Ok(outcome(record.status == RunStatus::Succeeded))
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Incoming CSV file.
    data: PathBuf,
    /// Feature-store dataset with the reference statistics.
    #[arg(long)]
    dataset_id: String,
    /// Features to check; every stored feature when omitted.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

pub fn validate(ctx: &Context, args: ValidateArgs) -> Result<Outcome> {
    let thresholds = args.thresholds.resolve(ctx.config.thresholds)?;
    let store = FeatureStore::open(&ctx.store());
    let features: Vec<String> = if args.features.is_empty() {
        store.list_stats(&args.dataset_id)?.into_iter().map(|s| s.feature).collect()
    } else {
        args.features.clone()
    };
    if features.is_empty() {
        bail!("no reference statistics for dataset `{}`", args.dataset_id);
    }
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let reference = store.latest_set(&args.dataset_id, &names)?;
    let data = ingest_csv(&args.data)?;
    let report = validate_ingest(&reference, &[], &data, None, thresholds)?;
    ctx.emit(&report, || {
        let mut s = String::new();
        for v in &report.schema_violations {
            let _ = writeln!(s, "schema: {} {:?}: {}", v.column, v.rule, v.detail);
        }
        for r in &report.drift_reports {
            let flag = if r.kl_flagged || r.psi_flagged { "  FLAGGED" } else { "" };
            let _ = writeln!(s, "{:<20} kl={:.6} psi={:.6}{flag}", r.feature, r.kl, r.psi);
        }
        s.push_str(if report.passed { "passed" } else { "flagged" });
        s
    });
    Ok(outcome(report.passed))
}

#[derive(Args)]
pub struct MonitorArgs {
    /// Monitor config file (TOML or YAML).
    monitor_config: PathBuf,
    /// Batch CSV files, or directories of them, in stream order.
    batches: Vec<PathBuf>,
    /// Train and promote a first model on this CSV before streaming.
    #[arg(long)]
    bootstrap: Option<PathBuf>,
    /// Maximum parallel steps in retraining runs.
    #[arg(long)]
    max_parallel: Option<usize>,
}

fn batch_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot read {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Loads a monitor config, filling unset policy values from the global
/// config and resolving the pipeline path against the config's directory.
fn load_monitor_config(ctx: &Context, args: &MonitorArgs) -> Result<MonitorConfig> {
    let mut doc: serde_json::Value = load_file(&args.monitor_config)?;
    let mut defaults = vec![
        ("thresholds", serde_json::to_value(ctx.config.thresholds)?),
        ("policy", serde_json::to_value(&ctx.config.policy)?),
    ];
    if let Some(n) = ctx.config.max_parallel {
        defaults.push(("max_parallel", n.into()));
    }
    merge_defaults(&mut doc, &defaults)?;
    let mut config: MonitorConfig = serde_json::from_value(doc)
        .with_context(|| format!("invalid monitor config {}", args.monitor_config.display()))?;
    if let Some(n) = args.max_parallel {
        config.max_parallel = n;
    }
    if config.retrain_pipeline.is_relative() {
        if let Some(dir) = args.monitor_config.parent() {
            config.retrain_pipeline = dir.join(&config.retrain_pipeline);
        }
    }
    Ok(config)
}

fn read_csv(path: &Path) -> Result<Dataset> {
    ingest_csv(path).with_context(|| format!("cannot load {}", path.display()))
}

pub fn monitor(ctx: &Context, args: MonitorArgs) -> Result<Outcome> {
    let config = load_monitor_config(ctx, &args)?;
    let files = batch_files(&args.batches)?;
    let mut monitor = Monitor::new(config, &ctx.store())?;
    let bootstrap_version = match &args.bootstrap {
        Some(path) => Some(monitor.bootstrap(&read_csv(path)?)?),
        None => None,
    };
    let mut human = String::new();
    if let Some(v) = bootstrap_version {
        let _ = writeln!(human, "bootstrapped production v{v}");
    }
    for file in &files {
        let (sample, events) = monitor.process(&read_csv(file)?)?;
        let _ = write!(human, "batch {:>3} drift={:.4}", sample.batch, sample.drift_score);
        if let Some(a) = sample.accuracy {
            let _ = write!(human, " accuracy={a:.4}");
        }
        human.push('\n');
        for e in &events {
            let _ = writeln!(human, "    {}: {}", serde_json::to_value(e.kind)?.as_str().unwrap_or_default(), e.detail);
        }
    }
    let summary = json!({
        "bootstrap_version": bootstrap_version,
        "batches": files.len(),
        "production_version": monitor.production_version(),
        "events": monitor.events(),
        "session_dir": monitor.session_dir(),
    });
    ctx.emit(&summary, || {
        let _ = write!(
            human,
            "{} batches, {} events, production v{}\nlogs: {}",
            files.len(),
            monitor.events().len(),
            monitor.production_version().map_or("-".into(), |v| v.to_string()),
            monitor.session_dir().display()
        );
        human
    });
    Ok(Outcome::Success)
}

#[derive(Subcommand)]
pub enum RegistryCommand {
    /// List models, or the versions of one model.
    List { model: Option<String> },
    /// Show one version's metadata.
    Show { model: String, version: u64 },
    /// Promote a candidate to production.
    Promote { model: String, version: u64 },
    /// Restore an earlier production version.
    Rollback {
        model: String,
        /// Version to restore; the previous production version by default.
        #[arg(long)]
        to: Option<u64>,
    },
    /// Retire a candidate.
    Archive { model: String, version: u64 },
    /// Parent chain of a version.
    Lineage { model: String, version: u64 },
}

pub fn registry(ctx: &Context, cmd: RegistryCommand) -> Result<Outcome> {
    let registry = ModelRegistry::open(&ctx.store());
    match cmd {
        RegistryCommand::List { model: None } => {
            let mut models = Vec::new();
            for name in registry.models()? {
                let state = registry.state(&name)?;
                models.push(json!({
                    "model": name,
                    "versions": state.stages.len(),
                    "production": state.production,
                }));
            }
            ctx.emit(&models, || {
                models.iter().fold(String::new(), |mut s, m| {
                    let _ = writeln!(s, "{}  versions={}  production={}", m["model"].as_str().unwrap_or(""), m["versions"], m["production"]);
                    s
                })
            });
        }
        RegistryCommand::List { model: Some(model) } => {
            let versions = registry.list(&model)?;
            ctx.emit(&versions, || {
                versions.iter().fold(String::new(), |mut s, v| {
                    let acc = v.meta.metrics.get("accuracy").map_or("-".into(), |a| format!("{a:.4}"));
                    let _ = writeln!(s, "v{:<4} {:<10} accuracy={acc}  {}", v.version(), v.stage, v.meta.trained_at.to_rfc3339());
                    s
                })
            });
        }
        RegistryCommand::Show { model, version } => {
            let v = registry.get(&model, version, true)?;
            ctx.emit(&v, || serde_yaml::to_string(&v).unwrap_or_default());
        }
        RegistryCommand::Promote { model, version } => {
            let t = registry.promote(&model, version)?;
            ctx.emit(&t, || transition_text(&model, t.previous_production, t.production));
        }
        RegistryCommand::Rollback { model, to } => {
            let t = match to {
                Some(v) => registry.rollback_to(&model, v)?,
                None => registry.rollback(&model)?,
            };
            ctx.emit(&t, || transition_text(&model, t.previous_production, t.production));
        }
        RegistryCommand::Archive { model, version } => {
            registry.archive(&model, version)?;
            ctx.emit(&json!({ "model": model, "archived": version }), || format!("{model} v{version} archived"));
        }
        RegistryCommand::Lineage { model, version } => {
            let chain = registry.lineage_of(&model, version)?;
            ctx.emit(&chain, || {
                chain.iter().fold(String::new(), |mut s, l| {
                    let stats: Vec<String> = l.feature_stats.iter().map(|(f, v)| format!("{f}@{v}")).collect();
                    let _ = writeln!(
                        s,
                        "v{}  run={}  parent={}  stats=[{}]",
                        l.version,
                        l.run_id.as_deref().unwrap_or("-"),
                        l.parent_version.map_or("-".into(), |p| format!("v{p}")),
                        stats.join(", ")
                    );
                    s
                })
            });
        }
    }
    Ok(Outcome::Success)
}

fn transition_text(model: &str, previous: Option<u64>, current: u64) -> String {
    let previous = previous.map_or("none".into(), |p| format!("v{p}"));
    format!("{model}: production {previous} -> v{current}")
}

#[derive(Subcommand)]
pub enum FeaturesCommand {
    /// List datasets, or the features of one dataset.
    List { dataset_id: Option<String> },
    /// Show one feature's statistics.
    Show {
        dataset_id: String,
        feature: String,
        /// Exact version; the latest by default.
        #[arg(long)]
        version: Option<u64>,
    },
}

pub fn features(ctx: &Context, cmd: FeaturesCommand) -> Result<Outcome> {
    let store = FeatureStore::open(&ctx.store());
    match cmd {
        FeaturesCommand::List { dataset_id: None } => {
            let datasets = store.datasets()?;
            ctx.emit(&datasets, || datasets.join("\n"));
        }
        FeaturesCommand::List { dataset_id: Some(id) } => {
            let stats = store.list_stats(&id)?;
            if stats.is_empty() {
                bail!("no statistics for dataset `{id}`");
            }
            ctx.emit(&stats, || {
                stats.iter().fold(String::new(), |mut s, f| {
                    let _ = writeln!(s, "{:<20} v{:<4} {}", f.feature, f.latest_version, f.created_at.to_rfc3339());
                    s
                })
            });
        }
        FeaturesCommand::Show {
            dataset_id,
            feature,
            version,
        } => {
            let sel = version.map_or(VersionSel::Latest, VersionSel::Exact);
            let record = store.get_stats(&dataset_id, &feature, sel)?;
            ctx.emit(&record, || serde_yaml::to_string(&record).unwrap_or_default());
        }
    }
    Ok(Outcome::Success)
}

#[derive(Args)]
pub struct BenchArgs {
    /// Scenario file (TOML or YAML).
    scenario: PathBuf,
    /// Number of seeds, starting at --seed or the scenario's seed.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Directory for summary.json and decisions.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    dda: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

pub fn bench(ctx: &Context, args: BenchArgs) -> Result<Outcome> {
    let scenario: ScenarioConfig = load_file(&args.scenario)?;
    scenario.check()?;
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let thresholds = args.thresholds.resolve(ctx.config.thresholds)?;
    let first = ctx.global.seed.unwrap_or(scenario.seed);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| first.wrapping_add(i)).collect();
    let summary = monte_carlo(&scenario, &seeds, &thresholds)?;
    let per_seed: Vec<SeedResult> = seeds
        .iter()
        .zip(&summary.results)
        .map(|(&seed, r)| SeedResult {
            seed,
            dda: r.dda,
            tp: r.tp,
            fp: r.fp,
            tn: r.tn,
            fn_: r.fn_,
        })
        .collect();
    let report = json!({
        "scenario": scenario,
        "thresholds": thresholds,
        "mean_dda": summary.mean_dda,
        "min_dda": summary.min_dda,
        "false_positive_rate": summary.false_positive_rate,
        "seeds": per_seed,
    });
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        let mut csv = String::from("seed,batch,drift_score,flagged,truth\n");
        for (&seed, r) in seeds.iter().zip(&summary.results) {
            for d in &r.decisions {
                let _ = writeln!(csv, "{seed},{},{},{},{}", d.batch, d.drift_score, d.flagged, d.truth);
            }
        }
        fs::write(out.join("decisions.csv"), csv)?;
        fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    ctx.emit(&report, || {
        format!(
            "{} seeds: mean DDA {:.4}, min DDA {:.4}, false-positive rate {:.4}",
            seeds.len(),
            summary.mean_dda,
            summary.min_dda,
            summary.false_positive_rate
        )
    });
    Ok(Outcome::Success)
}
