//! Declarative pipelines: spec types, validation, scheduling and execution.

mod exec;
mod graph;
mod spec;
pub mod steps;
mod yaml;

pub use exec::{execute, ExecError, ExecOptions, NodeRecord, NodeStatus, RunRecord, RunStatus, StepIo, StepResult, StepRunner};
pub use graph::{topo_schedule, validate_graph, GraphError, Schedule};
pub use spec::{Edge, ParamValue, PipelineSpec, StepKind, StepNode};
pub use steps::BuiltinRunner;
pub use yaml::{parse_yaml, render_yaml, SpecParseError};
