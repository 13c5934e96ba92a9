//! Graph validation and layered scheduling.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::{Edge, PipelineSpec, StepKind};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum GraphError {
    #[error("node with empty id")]
    EmptyId,
    #[error("duplicate node id `{id}`")]
    DuplicateId { id: String },
    #[error("`{name}` is not usable as a path component")]
    InvalidName { name: String },
    #[error("edge {from} -> {to} references unknown node `{missing}`")]
    DanglingEdge { from: String, to: String, missing: String },
    #[error("self edge on `{id}`")]
    SelfEdge { id: String },
    #[error("artifact `{artifact}` has several producers: {}", nodes.join(", "))]
    DuplicateProducer { artifact: String, nodes: Vec<String> },
    #[error("cycle among nodes: {}", nodes.join(", "))]
    Cycle { nodes: Vec<String> },
    #[error("node `{node}` ({kind}) is missing param `{param}`")]
    MissingParam { node: String, kind: StepKind, param: String },
    #[error("node `{node}` ({kind}) declares {found} {what}, expected {min}..={max}")]
    Arity {
        node: String,
        kind: StepKind,
        what: String,
        found: usize,
        min: usize,
        max: usize,
    },
    #[error("command node `{node}` has no command line")]
    MissingCommand { node: String },
    #[error("node `{node}` sets a command line but is not a command node")]
    UnexpectedCommand { node: String },
}

/// Every problem with `spec`, or `Ok` when it is a well-formed DAG.
pub fn validate_graph(spec: &PipelineSpec) -> Result<(), Vec<GraphError>> {
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    for node in &spec.nodes {
        if node.id.is_empty() {
            errors.push(GraphError::EmptyId);
        } else if !ids.insert(node.id.as_str()) {
            errors.push(GraphError::DuplicateId { id: node.id.clone() });
        } else if !fsutil::is_safe_component(&node.id) {
            errors.push(GraphError::InvalidName { name: node.id.clone() });
        }
        for param in node.kind.required_params() {
            if !node.params.contains_key(*param) {
                errors.push(GraphError::MissingParam {
                    node: node.id.clone(),
                    kind: node.kind,
                    param: param.to_string(),
                });
            }
        }
        let ((imin, imax), (omin, omax)) = node.kind.arity(node);
        for (what, found, min, max) in [("inputs", node.inputs.len(), imin, imax), ("outputs", node.outputs.len(), omin, omax)] {
            if found < min || found > max {
                errors.push(GraphError::Arity {
                    node: node.id.clone(),
                    kind: node.kind,
                    what: what.to_string(),
                    found,
                    min,
                    max,
                });
            }
        }
        match (node.kind, &node.command) {
            (StepKind::Command, None) => errors.push(GraphError::MissingCommand { node: node.id.clone() }),
            (StepKind::Command, Some(c)) if c.trim().is_empty() => {
                errors.push(GraphError::MissingCommand { node: node.id.clone() })
            }
            (StepKind::Command, Some(_)) | (_, None) => {}
            (_, Some(_)) => errors.push(GraphError::UnexpectedCommand { node: node.id.clone() }),
        }
        for artifact in node.outputs.iter().chain(&node.inputs) {
            if !fsutil::is_safe_component(artifact) {
                errors.push(GraphError::InvalidName { name: artifact.clone() });
            }
        }
    }

    let mut producers: Vec<(&str, Vec<&str>)> = spec.producers().into_iter().collect();
    producers.sort();
    for (artifact, nodes) in producers {
        if nodes.len() > 1 {
            errors.push(GraphError::DuplicateProducer {
                artifact: artifact.to_string(),
                nodes: nodes.iter().map(|s| s.to_string()).collect(),
            });
        }
    }

    let mut structural_ok = true;
    for edge in spec.effective_edges() {
        for end in [&edge.from, &edge.to] {
            if !ids.contains(end.as_str()) {
                structural_ok = false;
                errors.push(GraphError::DanglingEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    missing: end.clone(),
                });
            }
        }
        if edge.from == edge.to {
            structural_ok = false;
            errors.push(GraphError::SelfEdge { id: edge.from.clone() });
        }
    }

    if structural_ok {
        if let Err(cycle) = layer_levels(spec) {
            errors.push(cycle);
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Layered topological order; every edge goes from a lower to a higher layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub layers: Vec<Vec<String>>,
}

impl Schedule {
    pub fn layer_of(&self) -> BTreeMap<&str, usize> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| layer.iter().map(move |id| (id.as_str(), i)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

// Longest-path level of each node by Kahn's algorithm. Nodes still holding
// in-edges when no sources remain are on or behind a cycle.
fn layer_levels(spec: &PipelineSpec) -> Result<BTreeMap<String, usize>, GraphError> {
    let edges = spec.effective_edges();
    let mut indegree: BTreeMap<&str, usize> = spec.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for Edge { from, to } in &edges {
        *indegree.get_mut(to.as_str()).expect("validated endpoint") += 1;
        succ.entry(from.as_str()).or_default().push(to.as_str());
    }
    let mut level: BTreeMap<String, usize> = BTreeMap::new();
    let mut frontier: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    for n in &frontier {
        level.insert(n.to_string(), 0);
    }
    while let Some(n) = frontier.pop() {
        let l = level[n];
        for &m in succ.get(n).into_iter().flatten() {
            let entry = level.entry(m.to_string()).or_insert(0);
            *entry = (*entry).max(l + 1);
            let d = indegree.get_mut(m).expect("known node");
            *d -= 1;
            if *d == 0 {
                frontier.push(m);
            }
        }
    }
    let remaining: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d > 0).map(|(n, _)| *n).collect();
    if remaining.is_empty() {
        Ok(level)
    } else {
        Err(GraphError::Cycle {
            nodes: remaining.into_iter().map(str::to_string).collect(),
        })
    }
}

/// ASAP layering: a node's layer is the longest path to it from any source.
/// Ids within a layer are sorted.
pub fn topo_schedule(spec: &PipelineSpec) -> Result<Schedule, Vec<GraphError>> {
    validate_graph(spec)?;
    let levels = layer_levels(spec).map_err(|e| vec![e])?;
    let depth = levels.values().max().map_or(0, |m| m + 1);
    let mut layers = vec![Vec::new(); depth];
    // BTreeMap iteration keeps each layer sorted.
    for (id, l) in levels {
        layers[l].push(id);
    }
    Ok(Schedule { layers })
}
