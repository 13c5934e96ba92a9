use std::fs;
use std::path::{Path, PathBuf};

use mlops_core::pipeline::steps::{Evaluation, Registration};
use mlops_core::pipeline::{
    execute, parse_yaml, render_yaml, validate_graph, BuiltinRunner, ExecOptions, NodeStatus, RunRecord, RunStatus,
};
use mlops_core::registry::{ModelRegistry, Stage};
use mlops_core::synth::{scan_source, scan_text, synthesize_pipeline, RuleBasedProvider, SynthProvider};

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

#[test]
fn demo_pipeline_runs_and_registers_candidate() {
    let work = tempfile::tempdir().unwrap();
    let intents = scan_source(&[demo_dir()]).unwrap();
    assert_eq!(intents.len(), 1);
    let specs = RuleBasedProvider.synthesize_all(&intents).unwrap();
    let store = work.path().join("store");
    let runs = store.join("runs");
    for spec in &specs {
        let path = work.path().join(format!("{}.yaml", spec.name));
        fs::write(&path, render_yaml(spec)).unwrap();
        let parsed = parse_yaml(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(&parsed, spec);
        validate_graph(&parsed).unwrap();

        let runner = BuiltinRunner::new(&store, work.path());
        let rec = execute(&parsed, &ExecOptions::new(&runs).max_parallel(4), &runner).unwrap();
        assert_eq!(rec.status, RunStatus::Succeeded, "{:#?}", rec.nodes);
        assert!(rec.nodes.values().all(|n| n.status == NodeStatus::Succeeded));

        let reg: Registration =
            serde_json::from_slice(&fs::read(RunRecord::artifact_path(&runs, &rec.run_id, "register", "registration")).unwrap())
                .unwrap();
        let registry = ModelRegistry::open(&store);
        let v = registry.get(&reg.model_name, reg.version, true).unwrap();
        assert_eq!(v.stage, Stage::Candidate);
        assert_eq!(v.meta.lineage.run_id.as_deref(), Some(rec.run_id.as_str()));
        assert_eq!(
            v.meta.lineage.feature_stats.keys().cloned().collect::<Vec<_>>(),
            ["contract", "monthly_charges", "support_calls", "tenure_months"]
        );
        let acc = v.meta.metrics["accuracy"];
        assert!(acc > 0.6, "holdout accuracy {acc}");
    }
}

#[test]
fn retraining_links_lineage_and_evaluate_scores_production() {
    let work = tempfile::tempdir().unwrap();
    let store = work.path().join("store");
    let runs = store.join("runs");
    let csv = demo_dir().join("churn.csv");
    let text = format!(
        "-- mlops: train-model dataset={0} target=churned\n-- mlops: evaluate-model dataset={0} target=churned\n",
        csv.display()
    );
    let intents = scan_text(Path::new("job.sql"), &text).unwrap();
    let train = synthesize_pipeline(&intents[0]).unwrap();
    let evaluate = synthesize_pipeline(&intents[1]).unwrap();
    let runner = BuiltinRunner::new(&store, work.path());
    let opts = ExecOptions::new(&runs);
    let registry = ModelRegistry::open(&store);

    // Nothing in production yet.
    let rec = execute(&evaluate, &opts, &runner).unwrap();
    assert_eq!(rec.nodes["evaluate"].status, NodeStatus::Failed);

    execute(&train, &opts, &runner).unwrap();
    registry.promote("churn", 1).unwrap();
    let second = execute(&train, &opts, &runner).unwrap();
    assert_eq!(second.status, RunStatus::Succeeded);
    let chain = registry.lineage_of("churn", 2).unwrap();
    assert_eq!(chain.len(), 2);
    assert_eq!(chain[0].parent_version, Some(1));
    assert_eq!(chain[0].run_id.as_deref(), Some(second.run_id.as_str()));
    assert!(chain[0].feature_stats.values().all(|v| *v == 2));
    // Same data and seed: identical model bytes.
    assert_eq!(
        registry.get("churn", 1, true).unwrap().meta.artifact_digest,
        registry.get("churn", 2, true).unwrap().meta.artifact_digest
    );

    let rec = execute(&evaluate, &opts, &runner).unwrap();
    assert_eq!(rec.status, RunStatus::Succeeded);
    let eval: Evaluation =
        serde_json::from_slice(&fs::read(RunRecord::artifact_path(&runs, &rec.run_id, "evaluate", "evaluation")).unwrap())
            .unwrap();
    assert_eq!(eval.metrics["rows"], 600.0);
    assert!(eval.metrics["accuracy"] > 0.6);
}

#[test]
fn gate_rejection_fails_run() {
    let work = tempfile::tempdir().unwrap();
    let store = work.path().join("store");
    let csv = demo_dir().join("churn.csv");
    let intents = scan_text(
        Path::new("job.py"),
        &format!("# mlops: train-model dataset={} target=churned model=baseline\n", csv.display()),
    )
    .unwrap();
    let mut spec = synthesize_pipeline(&intents[0]).unwrap();
    spec.node_mut("deploy_gate").unwrap().params.insert("min".into(), 0.99.into());
    let rec = execute(&spec, &ExecOptions::new(store.join("runs")), &BuiltinRunner::new(&store, work.path())).unwrap();
    assert_eq!(rec.status, RunStatus::Failed);
    assert!(rec.nodes["deploy_gate"].error.as_deref().unwrap().contains("gate rejected"));
    assert_eq!(ModelRegistry::open(&store).state("churn").unwrap().production, None);
}

#[test]
fn validate_step_rejects_missing_target() {
    let work = tempfile::tempdir().unwrap();
    let store = work.path().join("store");
    let csv = demo_dir().join("churn.csv");
    let intents = scan_text(
        Path::new("job.py"),
        &format!("# mlops: train-model dataset={} target=cancelled\n", csv.display()),
    )
    .unwrap();
    let spec = synthesize_pipeline(&intents[0]).unwrap();
    let rec = execute(&spec, &ExecOptions::new(store.join("runs")), &BuiltinRunner::new(&store, work.path())).unwrap();
    assert_eq!(rec.nodes["validate"].status, NodeStatus::Failed);
    assert!(rec.nodes["validate"].error.as_deref().unwrap().contains("cancelled"));
    assert_eq!(rec.nodes["deploy_gate"].status, NodeStatus::Skipped);
}
