mod common;

use std::fs;
use std::sync::atomic::Ordering;

use common::{ancestors, random_dag, DigestRunner};
use mlops_core::pipeline::{
    execute, BuiltinRunner, Edge, ExecError, ExecOptions, NodeStatus, PipelineSpec, RunRecord, RunStatus, StepKind,
    StepNode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cmd(id: &str) -> StepNode {
    StepNode::new(id, StepKind::Command).command("true").outputs([format!("{id}_out")])
}

fn diamond(fail: Option<&str>) -> PipelineSpec {
    let mut nodes: Vec<StepNode> = ["A", "B", "C", "D"].iter().map(|i| cmd(i)).collect();
    nodes[1].inputs = vec!["A_out".into()];
    nodes[2].inputs = vec!["A_out".into()];
    nodes[3].inputs = vec!["B_out".into(), "C_out".into()];
    if let Some(f) = fail {
        let n = nodes.iter_mut().find(|n| n.id == f).unwrap();
        n.params.insert("fail".into(), true.into());
    }
    PipelineSpec {
        name: "diamond".into(),
        nodes,
        edges: vec![],
    }
}

#[test]
fn all_succeed_with_digests() {
    let dir = tempfile::tempdir().unwrap();
    let rec = execute(&diamond(None), &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
    assert_eq!(rec.status, RunStatus::Succeeded);
    for n in rec.nodes.values() {
        assert_eq!(n.status, NodeStatus::Succeeded);
        assert_eq!(n.artifacts.len(), 1);
        assert!(n.started_at.unwrap() <= n.finished_at.unwrap());
    }
    let on_disk = RunRecord::load(dir.path(), &rec.run_id).unwrap();
    assert_eq!(on_disk, rec);
    let d = RunRecord::artifact_path(dir.path(), &rec.run_id, "D", "D_out");
    assert_eq!(
        mlops_core::fsutil::sha256_file(&d).unwrap(),
        rec.nodes["D"].artifacts["D_out"]
    );
}

#[test]
fn failing_branch_skips_descendants_only() {
    let dir = tempfile::tempdir().unwrap();
    let rec = execute(&diamond(Some("B")), &ExecOptions::new(dir.path()).max_parallel(4), &DigestRunner::default()).unwrap();
    assert_eq!(rec.status, RunStatus::Failed);
    assert_eq!(rec.nodes["A"].status, NodeStatus::Succeeded);
    assert_eq!(rec.nodes["B"].status, NodeStatus::Failed);
    assert_eq!(rec.nodes["C"].status, NodeStatus::Succeeded);
    assert_eq!(rec.nodes["D"].status, NodeStatus::Skipped);
    assert!(rec.nodes["B"].error.as_deref().unwrap().contains("on purpose"));
    // C's digest matches the all-success run.
    let ok = execute(&diamond(None), &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
    assert_eq!(rec.nodes["C"].artifacts, ok.nodes["C"].artifacts);
}

#[test]
fn later_independent_nodes_are_cancelled() {
    // A fails in layer 0; X -> Y is independent, Y sits in layer 1.
    let mut spec = PipelineSpec {
        name: "p".into(),
        nodes: vec![cmd("A"), cmd("B"), cmd("X"), cmd("Y")],
        edges: vec![Edge::new("A", "B"), Edge::new("X", "Y")],
    };
    spec.nodes[0].params.insert("fail".into(), true.into());
    let dir = tempfile::tempdir().unwrap();
    let rec = execute(&spec, &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
    assert_eq!(rec.nodes["X"].status, NodeStatus::Succeeded);
    assert_eq!(rec.nodes["B"].status, NodeStatus::Skipped);
    assert_eq!(rec.nodes["Y"].status, NodeStatus::Cancelled);
}

#[test]
fn missing_input_fails_node() {
    let mut spec = diamond(None);
    spec.nodes[0].inputs = vec!["nowhere".into()];
    let dir = tempfile::tempdir().unwrap();
    let rec = execute(&spec, &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
    assert_eq!(rec.nodes["A"].status, NodeStatus::Failed);
    assert!(rec.nodes["A"].error.as_deref().unwrap().contains("missing input"));
    assert_eq!(rec.nodes["D"].status, NodeStatus::Skipped);
}

#[test]
fn invalid_graph_is_rejected_before_running() {
    let mut spec = diamond(None);
    spec.edges.push(Edge::new("D", "A"));
    let dir = tempfile::tempdir().unwrap();
    let err = execute(&spec, &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap_err();
    assert!(matches!(err, ExecError::InvalidGraph(_)));
    assert_eq!(fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn parallelism_is_bounded() {
    let spec = PipelineSpec {
        name: "wide".into(),
        nodes: (0..12).map(|i| cmd(&format!("w{i:02}"))).collect(),
        edges: vec![],
    };
    for limit in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let runner = DigestRunner {
            delay_ms: 20,
            ..Default::default()
        };
        execute(&spec, &ExecOptions::new(dir.path()).max_parallel(limit), &runner).unwrap();
        let peak = runner.peak.load(Ordering::SeqCst);
        assert!(peak <= limit, "peak {peak} > {limit}");
    }
}

#[test]
fn serial_parallel_equivalence_and_skip_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let n = rng.gen_range(1..=25);
        let mut spec = random_dag(&mut rng, n, 0.3);
        for node in &mut spec.nodes {
            if rng.gen_bool(0.08) {
                node.params.insert("fail".into(), true.into());
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let serial = execute(&spec, &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
        let parallel = execute(&spec, &ExecOptions::new(dir.path()).max_parallel(8), &DigestRunner::default()).unwrap();
        assert_eq!(serial.outcome(), parallel.outcome());
        assert_ne!(serial.run_id, parallel.run_id);
        let failed: Vec<String> = serial.failed_nodes().iter().map(|s| s.to_string()).collect();
        for (id, node) in &serial.nodes {
            let has_failed_ancestor = ancestors(&spec, id).iter().any(|a| failed.contains(a));
            assert_eq!(node.status == NodeStatus::Skipped, has_failed_ancestor, "node {id}");
        }
    }
}

#[test]
fn seed_override_changes_digests() {
    let dir = tempfile::tempdir().unwrap();
    let a = execute(&diamond(None), &ExecOptions::new(dir.path()), &DigestRunner::default()).unwrap();
    let b = execute(&diamond(None), &ExecOptions::new(dir.path()).seed(Some(7)), &DigestRunner::default()).unwrap();
    assert_ne!(a.nodes["A"].artifacts, b.nodes["A"].artifacts);
}

#[test]
fn command_steps_see_their_paths() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PipelineSpec {
        name: "sh".into(),
        nodes: vec![
            StepNode::new("make", StepKind::Command)
                .command("printf 'x,y\\n1,%s\\n' \"$MLOPS_PARAM_VALUE\" > \"$MLOPS_OUTPUT_0\"")
                .param("value", 5)
                .outputs(["table"]),
            StepNode::new("copy", StepKind::Command)
                .command("cp \"$MLOPS_INPUT_0\" \"$MLOPS_OUTPUT_0\"")
                .inputs(["table"])
                .outputs(["copy"]),
            StepNode::new("boom", StepKind::Command)
                .command("echo bad >&2; exit 3")
                .inputs(["copy"]),
        ],
        edges: vec![],
    };
    let runner = BuiltinRunner::new(dir.path().join("store"), dir.path());
    let rec = execute(&spec, &ExecOptions::new(dir.path().join("runs")), &runner).unwrap();
    assert_eq!(rec.nodes["make"].status, NodeStatus::Succeeded);
    assert_eq!(rec.nodes["make"].artifacts["table"], rec.nodes["copy"].artifacts["copy"]);
    let text = fs::read_to_string(RunRecord::artifact_path(&dir.path().join("runs"), &rec.run_id, "copy", "copy")).unwrap();
    assert_eq!(text, "x,y\n1,5\n");
    assert_eq!(rec.nodes["boom"].status, NodeStatus::Failed);
    assert!(rec.nodes["boom"].error.as_deref().unwrap().contains("bad"));
}

#[test]
fn command_must_produce_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PipelineSpec {
        name: "sh".into(),
        nodes: vec![StepNode::new("lazy", StepKind::Command).command("true").outputs(["never"])],
        edges: vec![],
    };
    let runner = BuiltinRunner::new(dir.path().join("store"), dir.path());
    let rec = execute(&spec, &ExecOptions::new(dir.path().join("runs")), &runner).unwrap();
    assert!(rec.nodes["lazy"].error.as_deref().unwrap().contains("not produced"));
}
