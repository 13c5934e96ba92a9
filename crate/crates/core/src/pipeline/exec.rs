//! Layered DAG execution with bounded parallelism.
//!
//! Nodes of one layer run concurrently on at most `max_parallel` threads.
//! When a node fails, its layer still completes; its descendants are marked
//! `skipped`, every other node left in later layers is marked `cancelled`, and
//! the run ends. Each node writes its outputs under
//! `<runs_root>/<run_id>/<node_id>/<artifact>`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{topo_schedule, GraphError};
use super::spec::{PipelineSpec, StepNode};
use crate::fsutil;
use crate::learner::DEFAULT_SEED;

pub type StepResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Resolved locations for one node invocation.
#[derive(Debug, Clone)]
pub struct StepIo {
    pub run_id: String,
    pub node_dir: PathBuf,
    /// Paths of `node.inputs`, same order.
    pub inputs: Vec<PathBuf>,
    /// Paths of `node.outputs`, same order. The step must create each one.
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
}

pub trait StepRunner: Sync {
    fn run(&self, node: &StepNode, io: &StepIo) -> StepResult;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Succeeded,
    Failed,
    Skipped,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub status: NodeStatus,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Artifact name -> sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<String>,
}

impl NodeRecord {
    fn pending(status: NodeStatus) -> Self {
        NodeRecord {
            status,
            started_at: None,
            finished_at: None,
            artifacts: BTreeMap::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub pipeline: String,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub layers: Vec<Vec<String>>,
    pub nodes: BTreeMap<String, NodeRecord>,
}

impl RunRecord {
    pub fn load(runs_root: &Path, run_id: &str) -> Result<RunRecord, ExecError> {
        let path = runs_root.join(run_id).join("record.json");
        let bytes = fs::read(&path).map_err(|source| ExecError::Io { path: path.clone(), source })?;
        serde_json::from_slice(&bytes).map_err(|e| ExecError::Corrupt {
            path,
            message: e.to_string(),
        })
    }

    /// Per-node status and artifact digests, without timing.
    pub fn outcome(&self) -> BTreeMap<String, (NodeStatus, BTreeMap<String, String>)> {
        self.nodes
            .iter()
            .map(|(id, n)| (id.clone(), (n.status, n.artifacts.clone())))
            .collect()
    }

    pub fn artifact_path(runs_root: &Path, run_id: &str, node: &str, artifact: &str) -> PathBuf {
        runs_root.join(run_id).join(node).join(artifact)
    }

    pub fn failed_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.status == NodeStatus::Failed)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid pipeline: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<GraphError>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub runs_root: PathBuf,
    pub max_parallel: usize,
    /// Generated when `None`.
    pub run_id: Option<String>,
    /// Overrides every node's `seed` param.
    pub seed: Option<u64>,
}

impl ExecOptions {
    pub fn new(runs_root: impl Into<PathBuf>) -> Self {
        ExecOptions {
            runs_root: runs_root.into(),
            max_parallel: 1,
            run_id: None,
            seed: None,
        }
    }

    pub fn max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n;
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

fn new_run_id() -> String {
    format!(
        "run-{}-{:08x}",
        Utc::now().format("%Y%m%dT%H%M%S%3f"),
        rand::thread_rng().gen::<u32>()
    )
}

// Claims a fresh run directory; retries on a generated-id collision.
fn create_run_dir(opts: &ExecOptions) -> Result<(String, PathBuf), ExecError> {
    fs::create_dir_all(&opts.runs_root).map_err(|source| ExecError::Io {
        path: opts.runs_root.clone(),
        source,
    })?;
    loop {
        let id = opts.run_id.clone().unwrap_or_else(new_run_id);
        let dir = opts.runs_root.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && opts.run_id.is_none() => continue,
            Err(source) => return Err(ExecError::Io { path: dir, source }),
        }
    }
}

struct Finished {
    started_at: DateTime<Utc>,
    finished_at: DateTime<Utc>,
    result: Result<BTreeMap<String, String>, String>,
}

fn invoke(runner: &dyn StepRunner, node: &StepNode, io: &StepIo) -> Finished {
    let started_at = Utc::now();
    tracing::info!(node = %node.id, kind = %node.kind, "step started");
    let result = (|| {
        fs::create_dir_all(&io.node_dir).map_err(|e| format!("{}: {e}", io.node_dir.display()))?;
        match panic::catch_unwind(AssertUnwindSafe(|| runner.run(node, io))) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => return Err(e.to_string()),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".to_string());
                return Err(format!("step panicked: {msg}"));
            }
        }
        let mut digests = BTreeMap::new();
        for (name, path) in node.outputs.iter().zip(&io.outputs) {
            let digest = fsutil::sha256_file(path).map_err(|e| format!("declared output `{name}` not produced: {e}"))?;
            digests.insert(name.clone(), digest);
        }
        Ok(digests)
    })();
    match &result {
        Ok(_) => tracing::info!(node = %node.id, "step succeeded"),
        Err(e) => tracing::warn!(node = %node.id, error = %e, "step failed"),
    }
    Finished {
        started_at,
        finished_at: Utc::now(),
        result,
    }
}

fn write_record(dir: &Path, record: &RunRecord) -> Result<(), ExecError> {
    let path = dir.join("record.json");
    let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
    fsutil::atomic_write(&path, &bytes).map_err(|source| ExecError::Io { path, source })
}

/// Validates, schedules and runs `spec`; the returned record is also written
/// to `<runs_root>/<run_id>/record.json`.
pub fn execute(spec: &PipelineSpec, opts: &ExecOptions, runner: &dyn StepRunner) -> Result<RunRecord, ExecError> {
    let schedule = topo_schedule(spec).map_err(ExecError::InvalidGraph)?;
    let (run_id, run_dir) = create_run_dir(opts)?;
    let nodes: HashMap<&str, &StepNode> = spec.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut successors: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in spec.effective_edges() {
        let from = nodes[e.from.as_str()].id.as_str();
        let to = nodes[e.to.as_str()].id.as_str();
        successors.entry(from).or_default().push(to);
    }
    let producer: HashMap<&str, (&str, usize)> = spec
        .nodes
        .iter()
        .flat_map(|n| n.outputs.iter().enumerate().map(move |(i, o)| (o.as_str(), (n.id.as_str(), i))))
        .collect();

    let mut record = RunRecord {
        run_id: run_id.clone(),
        pipeline: spec.name.clone(),
        status: RunStatus::Succeeded,
        started_at: Utc::now(),
        finished_at: Utc::now(),
        layers: schedule.layers.clone(),
        nodes: spec
            .nodes
            .iter()
            .map(|n| (n.id.clone(), NodeRecord::pending(NodeStatus::Cancelled)))
            .collect(),
    };
    let mut skipped: HashSet<&str> = HashSet::new();
    let mut failed = false;
    let workers = opts.max_parallel.max(1);

    for layer in &schedule.layers {
        if failed {
            break;
        }
        let mut ready: Vec<(&StepNode, StepIo)> = Vec::new();
        for id in layer {
            if skipped.contains(&id.as_str()) {
                continue;
            }
            let node = nodes[id.as_str()];
            let node_dir = run_dir.join(&node.id);
            let mut inputs = Vec::new();
            let mut missing = None;
            for name in &node.inputs {
                match producer.get(name.as_str()) {
                    Some((p, _)) => inputs.push(run_dir.join(p).join(name)),
                    None => {
                        missing = Some(name.clone());
                        break;
                    }
                }
            }
            if let Some(name) = missing {
                let now = Utc::now();
                let rec = record.nodes.get_mut(id).expect("known node");
                *rec = NodeRecord {
                    status: NodeStatus::Failed,
                    started_at: Some(now),
                    finished_at: Some(now),
                    artifacts: BTreeMap::new(),
                    error: Some(format!("missing input artifact `{name}`: no node produces it")),
                };
                failed = true;
                skip_descendants(id, &successors, &mut skipped);
                continue;
            }
            let seed = opts.seed.or_else(|| node.param_u64("seed")).unwrap_or(DEFAULT_SEED);
            let io = StepIo {
                run_id: run_id.clone(),
                outputs: node.outputs.iter().map(|o| node_dir.join(o)).collect(),
                node_dir,
                inputs,
                seed,
            };
            ready.push((node, io));
        }

        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        let mut results: Vec<(usize, Finished)> = thread::scope(|s| {
            for _ in 0..workers.min(ready.len()) {
                let tx = tx.clone();
                let next = &next;
                let ready = &ready;
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((node, io)) = ready.get(i) else { break };
                    let done = invoke(runner, node, io);
                    if tx.send((i, done)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            rx.iter().collect()
        });
        results.sort_by_key(|(i, _)| *i);
        for (i, done) in results {
            let node = ready[i].0;
            let rec = record.nodes.get_mut(&node.id).expect("known node");
            rec.started_at = Some(done.started_at);
            rec.finished_at = Some(done.finished_at);
            match done.result {
                Ok(digests) => {
                    rec.status = NodeStatus::Succeeded;
                    rec.artifacts = digests;
                }
                Err(e) => {
                    rec.status = NodeStatus::Failed;
                    rec.error = Some(e);
                    failed = true;
                    skip_descendants(&node.id, &successors, &mut skipped);
                }
            }
        }
        write_record(&run_dir, &record)?;
    }

    for id in skipped {
        record.nodes.get_mut(id).expect("known node").status = NodeStatus::Skipped;
    }
    if failed {
        record.status = RunStatus::Failed;
    }
    record.finished_at = Utc::now();
    write_record(&run_dir, &record)?;
    Ok(record)
}

fn skip_descendants<'a>(id: &str, successors: &HashMap<&'a str, Vec<&'a str>>, skipped: &mut HashSet<&'a str>) {
    let mut queue: VecDeque<&str> = successors.get(id).into_iter().flatten().copied().collect();
    while let Some(n) = queue.pop_front() {
        if skipped.insert(n) {
            queue.extend(successors.get(n).into_iter().flatten().copied());
        }
    }
}
