#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use mlops_core::fsutil::sha256_hex;
use mlops_core::pipeline::{Edge, PipelineSpec, StepIo, StepKind, StepNode, StepResult, StepRunner};
use rand::seq::SliceRandom;
use rand::Rng;

/// Writes each output as a digest of node id, seed and input bytes; fails
/// nodes whose `fail` param is true. Tracks peak concurrency.
#[derive(Default)]
pub struct DigestRunner {
    pub active: AtomicUsize,
    pub peak: AtomicUsize,
    pub delay_ms: u64,
}

impl StepRunner for DigestRunner {
    fn run(&self, node: &StepNode, io: &StepIo) -> StepResult {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        let result = (|| -> StepResult {
            if node.param_bool("fail").unwrap_or(false) {
                return Err(format!("{} failed on purpose", node.id).into());
            }
            let mut material = format!("{}:{}", node.id, io.seed).into_bytes();
            for p in &io.inputs {
                material.extend(fs::read(p)?);
            }
            for (i, p) in io.outputs.iter().enumerate() {
                fs::write(p, format!("{}#{i}", sha256_hex(&material)))?;
            }
            Ok(())
        })();
        self.active.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Random DAG over `n` nodes with shuffled ids. Each forward pair gets an edge
/// with probability `density`, declared explicitly or through an artifact.
pub fn random_dag(rng: &mut impl Rng, n: usize, density: f64) -> PipelineSpec {
    let mut ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
    ids.shuffle(rng);
    let mut nodes: Vec<StepNode> = ids
        .iter()
        .map(|id| {
            StepNode::new(id.clone(), StepKind::Command)
                .command("true")
                .outputs([format!("out_{id}")])
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                if rng.gen_bool(0.5) {
                    let artifact = format!("out_{}", ids[i]);
                    nodes[j].inputs.push(artifact);
                } else {
                    edges.push(Edge::new(ids[i].clone(), ids[j].clone()));
                }
            }
        }
    }
    nodes.shuffle(rng);
    PipelineSpec {
        name: "random".into(),
        nodes,
        edges,
    }
}

pub fn ancestors(spec: &PipelineSpec, id: &str) -> BTreeSet<String> {
    let edges = spec.effective_edges();
    let mut seen = BTreeSet::new();
    let mut stack = vec![id.to_string()];
    while let Some(n) = stack.pop() {
        for e in edges.iter().filter(|e| e.to == n) {
            if seen.insert(e.from.clone()) {
                stack.push(e.from.clone());
            }
        }
    }
    seen
}
