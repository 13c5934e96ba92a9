//! YAML form of a pipeline spec.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use super::spec::{Edge, ParamValue, PipelineSpec, StepKind, StepNode};

#[derive(Debug, Error)]
pub enum SpecParseError {
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("node `{node}`: unknown kind `{kind}` (expected one of: {})", StepKind::ALL.map(StepKind::as_str).join(", "))]
    UnknownKind { node: String, kind: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default)]
    params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default)]
    command: Option<String>,
}

pub fn render_yaml(spec: &PipelineSpec) -> String {
    serde_yaml::to_string(spec).expect("pipeline specs always serialize")
}

/// Parses a spec. Only the document structure is checked here; call
/// [`super::validate_graph`] for graph rules.
pub fn parse_yaml(text: &str) -> Result<PipelineSpec, SpecParseError> {
    let de = serde_yaml::Deserializer::from_str(text);
    let raw: RawSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let mut message = inner.to_string();
        if let Some(loc) = inner.location() {
            if !message.contains("line") {
                message = format!("{message} (line {}, column {})", loc.line(), loc.column());
            }
        }
        SpecParseError::Malformed { path, message }
    })?;
    let nodes = raw
        .nodes
        .into_iter()
        .map(|n| {
            let kind = StepKind::parse(&n.kind).ok_or_else(|| SpecParseError::UnknownKind {
                node: n.id.clone(),
                kind: n.kind.clone(),
            })?;
            Ok(StepNode {
                id: n.id,
                kind,
                params: n.params,
                inputs: n.inputs,
                outputs: n.outputs,
                command: n.command,
            })
        })
        .collect::<Result<_, SpecParseError>>()?;
    Ok(PipelineSpec {
        name: raw.name,
        nodes,
        edges: raw.edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_kind_names_node() {
        let text = "name: p\nnodes:\n  - id: a\n    kind: frobnicate\n";
        let err = parse_yaml(text).unwrap_err();
        assert!(matches!(&err, SpecParseError::UnknownKind { node, .. } if node == "a"), "{err}");
        assert!(err.to_string().contains("deploy_gate"));
    }

    #[test]
    fn malformed_reports_path() {
        let text = "name: p\nnodes:\n  - id: a\n    kind: train\n    inputs: 3\n";
        let err = parse_yaml(text).unwrap_err().to_string();
        assert!(err.contains("nodes[0].inputs"), "{err}");
    }

    #[test]
    fn parses_minimal_pipeline() {
        let text = "name: p\nnodes:\n  - id: a\n    kind: command\n    command: echo hi\n";
        let spec = parse_yaml(text).unwrap();
        assert_eq!(spec.nodes[0].kind, StepKind::Command);
        assert_eq!(spec.nodes[0].command.as_deref(), Some("echo hi"));
    }

    fn param_value() -> impl Strategy<Value = ParamValue> {
        let leaf = prop_oneof![
            any::<bool>().prop_map(ParamValue::Bool),
            any::<i64>().prop_map(ParamValue::Int),
            (-1e9f64..1e9).prop_map(ParamValue::Float),
            "[ -~]{0,12}".prop_map(ParamValue::Str),
        ];
        leaf.prop_recursive(2, 8, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(ParamValue::List))
    }

    fn node() -> impl Strategy<Value = StepNode> {
        (
            "[a-z][a-z0-9_]{0,8}",
            prop::sample::select(StepKind::ALL.to_vec()),
            prop::collection::btree_map("[a-z_]{1,8}", param_value(), 0..4),
            prop::collection::vec("[a-z.]{1,6}", 0..3),
            prop::collection::vec("[a-z.]{1,6}", 0..3),
            prop::option::of("[ -~]{1,20}"),
        )
            .prop_map(|(id, kind, params, inputs, outputs, command)| StepNode {
                id,
                kind,
                params,
                inputs,
                outputs,
                command,
            })
    }

    proptest! {
        #[test]
        fn yaml_round_trip(name in "[ -~]{0,16}", nodes in prop::collection::vec(node(), 0..6), edges in prop::collection::vec(("[a-z]{1,4}", "[a-z]{1,4}"), 0..4)) {
            let spec = PipelineSpec { name, nodes, edges: edges.into_iter().map(|(a, b)| Edge::new(a, b)).collect() };
            let text = render_yaml(&spec);
            let back = parse_yaml(&text).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
