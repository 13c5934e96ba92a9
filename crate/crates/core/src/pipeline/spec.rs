use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Builtin step kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Ingest,
    Validate,
    Features,
    Train,
    Evaluate,
    Register,
    DeployGate,
    Command,
}

impl StepKind {
    pub const ALL: [StepKind; 8] = [
        StepKind::Ingest,
        StepKind::Validate,
        StepKind::Features,
        StepKind::Train,
        StepKind::Evaluate,
        StepKind::Register,
        StepKind::DeployGate,
        StepKind::Command,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Ingest => "ingest",
            StepKind::Validate => "validate",
            StepKind::Features => "features",
            StepKind::Train => "train",
            StepKind::Evaluate => "evaluate",
            StepKind::Register => "register",
            StepKind::DeployGate => "deploy_gate",
            StepKind::Command => "command",
        }
    }

    pub fn parse(s: &str) -> Option<StepKind> {
        StepKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Params that must be present for this kind.
    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            StepKind::Ingest => &["path"],
            StepKind::Features => &["dataset_id"],
            StepKind::Train | StepKind::Evaluate => &["target"],
            StepKind::Register => &["model_name"],
            StepKind::Validate | StepKind::DeployGate | StepKind::Command => &[],
        }
    }

    /// Allowed `(min, max)` number of declared inputs and outputs; positional
    /// meaning is documented on each builtin step.
    pub fn arity(self, node: &StepNode) -> ((usize, usize), (usize, usize)) {
        match self {
            StepKind::Ingest => ((0, 0), (1, 1)),
            StepKind::Validate => ((1, 1), (1, 2)),
            StepKind::Features => ((1, 1), (2, 2)),
            StepKind::Train => ((1, 1), (1, 2)),
            StepKind::Evaluate if node.params.contains_key("model_name") => ((1, 2), (1, 2)),
            StepKind::Evaluate => ((2, 3), (1, 2)),
            StepKind::Register => ((2, 2), (1, 1)),
            StepKind::DeployGate => ((1, 1), (1, 1)),
            StepKind::Command => ((0, usize::MAX), (0, usize::MAX)),
        }
    }
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A step parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(s: String) -> Self {
        ParamValue::Str(s)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl ParamValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Str(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            ParamValue::Int(i) => u64::try_from(*i).ok(),
            ParamValue::Str(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            ParamValue::Str(s) => s.parse().ok(),
            _ => None,
        }
    }

    /// A list of strings; a comma-separated string is split.
    pub fn as_string_list(&self) -> Option<Vec<String>> {
        match self {
            ParamValue::List(items) => items.iter().map(|i| i.as_str().map(str::to_string)).collect(),
            ParamValue::Str(s) => Some(s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNode {
    pub id: String,
    pub kind: StepKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

impl StepNode {
    pub fn new(id: impl Into<String>, kind: StepKind) -> Self {
        StepNode {
            id: id.into(),
            kind,
            params: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            command: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn inputs<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.inputs = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn outputs<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.outputs = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn command(mut self, command: impl Into<String>) -> Self {
        self.command = Some(command.into());
        self
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(ParamValue::as_str)
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(ParamValue::as_f64)
    }

    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(ParamValue::as_u64)
    }

    pub fn param_bool(&self, key: &str) -> Option<bool> {
        self.params.get(key).and_then(ParamValue::as_bool)
    }

    pub fn param_list(&self, key: &str) -> Option<Vec<String>> {
        self.params.get(key).and_then(ParamValue::as_string_list)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
        }
    }
}

/// Declarative pipeline DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub name: String,
    pub nodes: Vec<StepNode>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

impl PipelineSpec {
    pub fn node(&self, id: &str) -> Option<&StepNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut StepNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// Artifact name -> producing node ids.
    pub fn producers(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in &self.nodes {
            for o in &n.outputs {
                out.entry(o.as_str()).or_default().push(n.id.as_str());
            }
        }
        out
    }

    /// Explicit edges plus producer -> consumer edges from artifact names.
    pub fn effective_edges(&self) -> BTreeSet<Edge> {
        let mut edges: BTreeSet<Edge> = self.edges.iter().cloned().collect();
        let producers = self.producers();
        for n in &self.nodes {
            for input in &n.inputs {
                for p in producers.get(input.as_str()).into_iter().flatten() {
                    edges.insert(Edge::new(*p, n.id.as_str()));
                }
            }
        }
        edges
    }
}
