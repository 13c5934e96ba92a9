//! Pipeline synthesis from source-code directives.
//!
//! A directive is a comment line (`#`, `//` or `--`) of the form
//!
//! ```text
//! mlops: train-model dataset=data/churn.csv target=churned model=logreg seed=7
//! ```
//!
//! Keys are `dataset`, `target`, `model`, `seed` and `features` (comma
//! separated). Relative dataset paths resolve against the source file's
//! directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{ModelKind, BUILTIN_MODEL_KINDS, DEFAULT_SEED};
use crate::pipeline::{validate_graph, GraphError, ParamValue, PipelineSpec, StepKind, StepNode};

pub const DIRECTIVE_KEYS: &[&str] = &["dataset", "target", "model", "seed", "features"];
const COMMENT_PREFIXES: &[&str] = &["#", "//", "--"];
/// Minimum holdout accuracy the generated deploy gate accepts.
pub const GATE_MIN_ACCURACY: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: malformed directive: {reason}", file.display())]
    Malformed { file: PathBuf, line: usize, reason: String },
    #[error("{}:{line}: unknown model kind `{kind}`; builtin kinds: {}", file.display(), BUILTIN_MODEL_KINDS.join(", "))]
    UnknownModel { file: PathBuf, line: usize, kind: String },
    #[error("provider produced an invalid pipeline `{name}`: {}", errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidOutput { name: String, errors: Vec<GraphError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentKind {
    TrainModel,
    EvaluateModel,
}

impl IntentKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "train-model" => Some(IntentKind::TrainModel),
            "evaluate-model" => Some(IntentKind::EvaluateModel),
            _ => None,
        }
    }

    fn short(self) -> &'static str {
        match self {
            IntentKind::TrainModel => "train",
            IntentKind::EvaluateModel => "evaluate",
        }
    }
}

impl fmt::Display for IntentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntentKind::TrainModel => "train-model",
            IntentKind::EvaluateModel => "evaluate-model",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    pub file: PathBuf,
    /// 1-based.
    pub line: usize,
    /// As written in the directive.
    pub dataset: String,
    pub target: String,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub features: Option<Vec<String>>,
}

impl Intent {
    /// Dataset path resolved against the directory of the source file.
    pub fn dataset_path(&self) -> PathBuf {
        let dir = self.file.parent().unwrap_or(Path::new("."));
        let dir = fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf());
        dir.join(&self.dataset)
    }

    /// Feature-store id and registry model name, from the dataset file stem.
    pub fn dataset_id(&self) -> String {
        sanitize(Path::new(&self.dataset).file_stem().map(|s| s.to_string_lossy()).as_deref().unwrap_or("dataset"))
    }

    pub fn pipeline_name(&self) -> String {
        let stem = self.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        format!("{}-{}-l{}", sanitize(&stem), self.kind.short(), self.line)
    }
}

fn sanitize(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if out.is_empty() {
        "unnamed".to_string()
    } else {
        out
    }
}

/// Directives found in one file's text.
pub fn scan_text(file: &Path, text: &str) -> Result<Vec<Intent>, SynthError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_start();
        let Some(body) = COMMENT_PREFIXES.iter().find_map(|p| trimmed.strip_prefix(p)) else {
            continue;
        };
        let Some(directive) = body.trim_start().strip_prefix("mlops:") else {
            continue;
        };
        out.push(parse_directive(file, line, directive)?);
    }
    Ok(out)
}

fn parse_directive(file: &Path, line: usize, directive: &str) -> Result<Intent, SynthError> {
    let malformed = |reason: String| SynthError::Malformed {
        file: file.to_path_buf(),
        line,
        reason,
    };
    let mut tokens = directive.split_whitespace();
    let kind_tok = tokens.next().ok_or_else(|| malformed("missing intent kind".into()))?;
    let kind = IntentKind::parse(kind_tok)
        .ok_or_else(|| malformed(format!("unknown intent `{kind_tok}` (expected train-model or evaluate-model)")))?;
    let (mut dataset, mut target, mut model, mut seed, mut features) = (None, None, None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, found `{tok}`")))?;
        if value.is_empty() {
            return Err(malformed(format!("empty value for `{key}`")));
        }
        let slot = match key {
            "dataset" => &mut dataset,
            "target" => &mut target,
            "model" => &mut model,
            "seed" => {
                let v = value
                    .parse::<u64>()
                    .map_err(|_| malformed(format!("seed `{value}` is not a nonnegative integer")))?;
                if seed.replace(v).is_some() {
                    return Err(malformed("duplicate key `seed`".into()));
                }
                continue;
            }
            "features" => {
                let list: Vec<String> = value.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
                if features.replace(list).is_some() {
                    return Err(malformed("duplicate key `features`".into()));
                }
                continue;
            }
            other => {
                return Err(malformed(format!(
                    "unknown key `{other}` (allowed: {})",
                    DIRECTIVE_KEYS.join(", ")
                )))
            }
        };
        if slot.replace(value.to_string()).is_some() {
            return Err(malformed(format!("duplicate key `{key}`")));
        }
    }
    Ok(Intent {
        kind,
        file: file.to_path_buf(),
        line,
        dataset: dataset.ok_or_else(|| malformed("missing required key `dataset`".into()))?,
        target: target.ok_or_else(|| malformed("missing required key `target`".into()))?,
        model,
        seed,
        features,
    })
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), SynthError> {
    let unreadable = |source| SynthError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(unreadable)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?;
        entries.sort();
        for entry in entries {
            let hidden = entry.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
            if !hidden {
                collect_files(&entry, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Scans files (directories recursively, hidden entries skipped) for
/// directives. Files that are not UTF-8 text are ignored inside directories
/// and rejected when named directly.
pub fn scan_source(paths: &[PathBuf]) -> Result<Vec<Intent>, SynthError> {
    let mut intents = Vec::new();
    for root in paths {
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        let named_directly = !root.is_dir();
        for file in files {
            let bytes = fs::read(&file).map_err(|source| SynthError::Unreadable {
                path: file.clone(),
                source,
            })?;
            match String::from_utf8(bytes) {
                Ok(text) => intents.extend(scan_text(&file, &text)?),
                Err(_) if !named_directly => {}
                Err(e) => {
                    return Err(SynthError::Unreadable {
                        path: file,
                        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.utf8_error()),
                    })
                }
            }
        }
    }
    Ok(intents)
}

/// Turns intents into pipeline specs.
pub trait SynthProvider {
    fn name(&self) -> &str;
    fn synthesize(&self, intent: &Intent) -> Result<PipelineSpec, SynthError>;

    /// Synthesizes every intent and checks each result with `validate_graph`.
    fn synthesize_all(&self, intents: &[Intent]) -> Result<Vec<PipelineSpec>, SynthError> {
        intents
            .iter()
            .map(|i| {
                let spec = self.synthesize(i)?;
                validate_graph(&spec).map_err(|errors| SynthError::InvalidOutput {
                    name: spec.name.clone(),
                    errors,
                })?;
                Ok(spec)
            })
            .collect()
    }
}

/// Fixed-template provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedProvider;

impl SynthProvider for RuleBasedProvider {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn synthesize(&self, intent: &Intent) -> Result<PipelineSpec, SynthError> {
        synthesize_pipeline(intent)
    }
}

/// `train-model`: ingest -> validate -> features -> train -> evaluate ->
/// register -> deploy_gate, plus features -> evaluate. The gate approves
/// holdout accuracy of at least [`GATE_MIN_ACCURACY`] and does not promote.
///
/// `evaluate-model`: ingest -> validate -> evaluate, scoring the current
/// production model registered under the dataset id.
pub fn synthesize_pipeline(intent: &Intent) -> Result<PipelineSpec, SynthError> {
    let model = intent.model.clone().unwrap_or_else(|| "logreg".to_string());
    if model.parse::<ModelKind>().is_err() {
        return Err(SynthError::UnknownModel {
            file: intent.file.clone(),
            line: intent.line,
            kind: model,
        });
    }
    let seed = intent.seed.unwrap_or(DEFAULT_SEED) as i64;
    let dataset_id = intent.dataset_id();
    let target = intent.target.as_str();
    let features: Option<Vec<ParamValue>> = intent
        .features
        .as_ref()
        .map(|f| f.iter().map(|s| s.as_str().into()).collect());
    let with_features = |node: StepNode| match &features {
        Some(list) => node.param("features", ParamValue::List(list.clone())),
        None => node,
    };

    let ingest = StepNode::new("ingest", StepKind::Ingest)
        .param("path", intent.dataset_path().to_string_lossy().into_owned())
        .outputs(["raw"]);
    let validate = StepNode::new("validate", StepKind::Validate)
        .param("dataset_id", dataset_id.as_str())
        .param("target", target)
        .inputs(["raw"])
        .outputs(["validated", "validation_report"]);

    let nodes = match intent.kind {
        IntentKind::TrainModel => vec![
            ingest,
            validate,
            with_features(
                StepNode::new("features", StepKind::Features)
                    .param("dataset_id", dataset_id.as_str())
                    .param("target", target)
                    .param("bins", crate::drift::DEFAULT_BINS as i64)
                    .inputs(["validated"])
                    .outputs(["feature_table", "feature_stats"]),
            ),
            with_features(
                StepNode::new("train", StepKind::Train)
                    .param("target", target)
                    .param("model", model.as_str())
                    .param("seed", seed)
                    .inputs(["feature_table"])
                    .outputs(["model", "train_metrics"]),
            ),
            StepNode::new("evaluate", StepKind::Evaluate)
                .param("target", target)
                .param("seed", seed)
                .inputs(["model", "feature_table", "feature_stats"])
                .outputs(["evaluation", "evaluated_model"]),
            StepNode::new("register", StepKind::Register)
                .param("model_name", dataset_id.as_str())
                .inputs(["evaluated_model", "evaluation"])
                .outputs(["registration"]),
            StepNode::new("deploy_gate", StepKind::DeployGate)
                .param("metric", "accuracy")
                .param("min", GATE_MIN_ACCURACY)
                .param("promote", false)
                .inputs(["registration"])
                .outputs(["deploy_decision"]),
        ],
        IntentKind::EvaluateModel => vec![
            ingest,
            validate,
            StepNode::new("evaluate", StepKind::Evaluate)
                .param("target", target)
                .param("model_name", dataset_id.as_str())
                .inputs(["validated"])
                .outputs(["evaluation"]),
        ],
    };
    Ok(PipelineSpec {
        name: intent.pipeline_name(),
        nodes,
        edges: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{parse_yaml, render_yaml, topo_schedule, Edge};

    fn intents(text: &str) -> Result<Vec<Intent>, SynthError> {
        scan_text(Path::new("/src/job.py"), text)
    }

    #[test]
    fn one_directive_one_intent() {
        let got = intents("import x\n# mlops: train-model dataset=d.csv target=y model=logreg\n").unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].line, 2);
        assert_eq!(got[0].dataset, "d.csv");
        assert_eq!(got[0].model.as_deref(), Some("logreg"));
    }

    #[test]
    fn comment_prefixes_accepted() {
        let text = "// mlops: train-model dataset=a.csv target=y\n  -- mlops: evaluate-model dataset=a.csv target=y\n#mlops: train-model dataset=a.csv target=y seed=3 features=p,q\n";
        let got = intents(text).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[1].kind, IntentKind::EvaluateModel);
        assert_eq!(got[2].seed, Some(3));
        assert_eq!(got[2].features, Some(vec!["p".into(), "q".into()]));
    }

    #[test]
    fn no_directives_is_empty() {
        assert!(intents("fn main() {}\n# just a comment\nmlops: train-model dataset=x target=y\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn malformed_directives_name_line() {
        for (text, needle) in [
            ("# mlops: train-model target=y\n", "dataset"),
            ("\n# mlops: train-model dataset=a target=y colour=red\n", "colour"),
            ("# mlops: deploy dataset=a target=y\n", "deploy"),
            ("# mlops: train-model dataset=a target=y seed=x\n", "seed"),
            ("# mlops: train-model dataset=a dataset=b target=y\n", "duplicate"),
            ("# mlops: train-model dataset target=y\n", "key=value"),
        ] {
            let err = intents(text).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("/src/job.py:"), "{msg}");
            assert!(msg.contains(needle), "{msg}");
        }
        let err = intents("\n\n# mlops: train-model target=y\n").unwrap_err();
        assert!(matches!(err, SynthError::Malformed { line: 3, .. }));
    }

    #[test]
    fn template_matches_hand_written_yaml() {
        let intent = &intents("# mlops: train-model dataset=/data/d.csv target=y model=logreg\n").unwrap()[0];
        let spec = synthesize_pipeline(intent).unwrap();
        let expected = r#"
name: job-train-l1
nodes:
- id: ingest
  kind: ingest
  params:
    path: /data/d.csv
  outputs: [raw]
- id: validate
  kind: validate
  params:
    dataset_id: d
    target: y
  inputs: [raw]
  outputs: [validated, validation_report]
- id: features
  kind: features
  params:
    bins: 10
    dataset_id: d
    target: y
  inputs: [validated]
  outputs: [feature_table, feature_stats]
- id: train
  kind: train
  params:
    model: logreg
    seed: 42
    target: y
  inputs: [feature_table]
  outputs: [model, train_metrics]
- id: evaluate
  kind: evaluate
  params:
    seed: 42
    target: y
  inputs: [model, feature_table, feature_stats]
  outputs: [evaluation, evaluated_model]
- id: register
  kind: register
  params:
    model_name: d
  inputs: [evaluated_model, evaluation]
  outputs: [registration]
- id: deploy_gate
  kind: deploy_gate
  params:
    metric: accuracy
    min: 0.5
    promote: false
  inputs: [registration]
  outputs: [deploy_decision]
"#;
        assert_eq!(spec, parse_yaml(expected).unwrap());
        let edges: Vec<(String, String)> = spec
            .effective_edges()
            .into_iter()
            .map(|Edge { from, to }| (from, to))
            .collect();
        let mut want: Vec<(String, String)> = [
            ("ingest", "validate"),
            ("validate", "features"),
            ("features", "train"),
            ("train", "evaluate"),
            ("features", "evaluate"),
            ("evaluate", "register"),
            ("register", "deploy_gate"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        want.sort();
        assert_eq!(edges, want);
        assert_eq!(topo_schedule(&spec).unwrap().layers.len(), 7);
        assert_eq!(parse_yaml(&render_yaml(&spec)).unwrap(), spec);
    }

    #[test]
    fn two_intents_two_pipelines() {
        let got = intents("# mlops: train-model dataset=a.csv target=y\nx = 1\n# mlops: train-model dataset=a.csv target=y\n").unwrap();
        let specs = RuleBasedProvider.synthesize_all(&got).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].name, "job-train-l1");
        assert_eq!(specs[1].name, "job-train-l3");
    }

    #[test]
    fn unknown_model_lists_builtins() {
        let got = intents("# mlops: train-model dataset=a.csv target=y model=resnet\n").unwrap();
        let msg = synthesize_pipeline(&got[0]).unwrap_err().to_string();
        assert!(msg.contains("resnet") && msg.contains("logreg") && msg.contains("baseline"), "{msg}");
    }

    #[test]
    fn evaluate_template_is_valid() {
        let got = intents("# mlops: evaluate-model dataset=a.csv target=y\n").unwrap();
        let spec = synthesize_pipeline(&got[0]).unwrap();
        assert_eq!(validate_graph(&spec), Ok(()));
        assert_eq!(spec.nodes.len(), 3);
    }

    #[test]
    fn scan_is_pure() {
        let text = "# mlops: train-model dataset=a.csv target=y\n";
        assert_eq!(intents(text).unwrap(), intents(text).unwrap());
    }
}
