//! Schema conformity and ingest-time drift checks.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnData, ColumnKind, Dataset};
use crate::drift::{self, DriftError, DriftReport, DriftThresholds};
use crate::feature_store::FeatureStatsRecord;

/// A feature with more nulls than this fraction fails validation.
pub const MAX_NULL_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no reference statistics for monitored feature `{0}`")]
    MissingReference(String),
    #[error(transparent)]
    Drift(#[from] DriftError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SchemaSpec {
    pub columns: Vec<ColumnSchema>,
}

impl SchemaSpec {
    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    MissingColumn,
    ExtraColumn,
    TypeMismatch,
    OutOfRange,
    DisallowedCategory,
    UnexpectedNull,
    ExcessiveNulls,
    NoValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub column: String,
    pub rule: Rule,
    pub detail: String,
    /// Number of offending cells, where that is meaningful.
    pub count: usize,
}

impl SchemaViolation {
    pub fn new(column: &str, rule: Rule, count: usize, detail: impl Into<String>) -> Self {
        SchemaViolation {
            column: column.to_string(),
            rule,
            detail: detail.into(),
            count,
        }
    }
}

/// Observed schema: ranges, label sets and nullability as seen in `dataset`.
pub fn infer_schema(dataset: &Dataset) -> Result<SchemaSpec, ValidationError> {
    if dataset.columns().is_empty() || dataset.is_empty() {
        return Err(ValidationError::EmptyDataset);
    }
    let columns = dataset
        .columns()
        .iter()
        .map(|c| {
            let nullable = c.null_count() > 0;
            match &c.data {
                ColumnData::Numeric(_) => {
                    let values = c.numeric_values();
                    let range = values.iter().fold(None, |acc: Option<(f64, f64)>, &v| {
                        Some(acc.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))))
                    });
                    ColumnSchema {
                        name: c.name.clone(),
                        kind: ColumnKind::Numeric,
                        nullable,
                        range,
                        categories: None,
                    }
                }
                ColumnData::Categorical(_) => ColumnSchema {
                    name: c.name.clone(),
                    kind: ColumnKind::Categorical,
                    nullable,
                    range: None,
                    categories: Some(c.labels().into_iter().collect()),
                },
            }
        })
        .collect();
    Ok(SchemaSpec { columns })
}

/// Lists every way `dataset` departs from `schema`. Numeric data is accepted
/// for a categorical column and checked by label.
pub fn check_schema(dataset: &Dataset, schema: &SchemaSpec) -> Vec<SchemaViolation> {
    let mut out = Vec::new();
    for expected in &schema.columns {
        let Some(column) = dataset.column(&expected.name) else {
            out.push(SchemaViolation::new(&expected.name, Rule::MissingColumn, 0, "column absent"));
            continue;
        };
        let nulls = column.null_count();
        if nulls > 0 && !expected.nullable {
            out.push(SchemaViolation::new(
                &expected.name,
                Rule::UnexpectedNull,
                nulls,
                format!("{nulls} null value(s) in non-nullable column"),
            ));
        }
        match (expected.kind, column.kind()) {
            (ColumnKind::Numeric, ColumnKind::Categorical) => {
                out.push(SchemaViolation::new(
                    &expected.name,
                    Rule::TypeMismatch,
                    0,
                    "expected numeric, found categorical",
                ));
            }
            (ColumnKind::Numeric, ColumnKind::Numeric) => {
                if let Some((lo, hi)) = expected.range {
                    let outside = column
                        .numeric_values()
                        .into_iter()
                        .filter(|v| *v < lo || *v > hi)
                        .count();
                    if outside > 0 {
                        out.push(SchemaViolation::new(
                            &expected.name,
                            Rule::OutOfRange,
                            outside,
                            format!("{outside} value(s) outside [{lo}, {hi}]"),
                        ));
                    }
                }
            }
            (ColumnKind::Categorical, _) => {
                if let Some(allowed) = &expected.categories {
                    let labels = column.labels();
                    let bad: BTreeSet<&str> = labels
                        .iter()
                        .filter(|l| !allowed.contains(*l))
                        .map(String::as_str)
                        .collect();
                    if !bad.is_empty() {
                        let count = labels.iter().filter(|l| !allowed.contains(*l)).count();
                        let shown: Vec<&str> = bad.iter().take(5).copied().collect();
                        out.push(SchemaViolation::new(
                            &expected.name,
                            Rule::DisallowedCategory,
                            count,
                            format!("disallowed label(s): {}", shown.join(", ")),
                        ));
                    }
                }
            }
        }
    }
    let known: HashSet<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    for name in dataset.column_names() {
        if !known.contains(name) {
            out.push(SchemaViolation::new(name, Rule::ExtraColumn, 0, "column not in schema"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_violations: Vec<SchemaViolation>,
    pub drift_reports: Vec<DriftReport>,
    pub passed: bool,
    pub flagged_features: Vec<String>,
}

/// Checks `incoming` against frozen reference statistics.
///
/// Every feature in `monitored` (or every feature in `reference` when
/// `monitored` is empty) is binned with its reference binning and scored.
/// The report passes only if there are no schema violations and no feature
/// exceeds the KL threshold.
pub fn validate_ingest(
    reference: &[FeatureStatsRecord],
    monitored: &[&str],
    incoming: &Dataset,
    schema: Option<&SchemaSpec>,
    thresholds: DriftThresholds,
) -> Result<ValidationReport, ValidationError> {
    thresholds.check()?;
    let features: Vec<&str> = if monitored.is_empty() {
        reference.iter().map(|r| r.feature.as_str()).collect()
    } else {
        monitored.to_vec()
    };
    let mut violations = schema.map(|s| check_schema(incoming, s)).unwrap_or_default();
    let mut drift_reports = Vec::new();

    for feature in features {
        let record = reference
            .iter()
            .find(|r| r.feature == feature)
            .ok_or_else(|| ValidationError::MissingReference(feature.to_string()))?;
        let Some(column) = incoming.column(feature) else {
            if !violations
                .iter()
                .any(|v| v.column == feature && v.rule == Rule::MissingColumn)
            {
                violations.push(SchemaViolation::new(feature, Rule::MissingColumn, 0, "monitored column absent"));
            }
            continue;
        };
        let n = column.len();
        let nulls = column.null_count();
        if n > 0 && nulls as f64 > MAX_NULL_FRACTION * n as f64 {
            violations.push(SchemaViolation::new(
                feature,
                Rule::ExcessiveNulls,
                nulls,
                format!("{nulls} of {n} values are null (limit {:.0}%)", MAX_NULL_FRACTION * 100.0),
            ));
        }
        if record.binning.is_numeric() && column.kind() == ColumnKind::Categorical {
            violations.push(SchemaViolation::new(
                feature,
                Rule::TypeMismatch,
                0,
                "reference is numeric, incoming is categorical",
            ));
            continue;
        }
        if n == nulls {
            violations.push(SchemaViolation::new(feature, Rule::NoValues, 0, "no non-null values to bin"));
            continue;
        }
        let current = column.with_values(!record.binning.is_numeric(), |v| drift::bin_distribution(v, &record.binning))?;
        drift_reports.push(drift::evaluate_drift(feature, &record.distribution(), &current, thresholds)?);
    }

    let flagged_features: Vec<String> = drift_reports
        .iter()
        .filter(|r| r.kl_flagged)
        .map(|r| r.feature.clone())
        .collect();
    Ok(ValidationReport {
        passed: violations.is_empty() && flagged_features.is_empty(),
        schema_violations: violations,
        drift_reports,
        flagged_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_csv, Column};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn infer_observed_properties() {
        let d = parse_csv("x,c,n\n0,a,1\n10,b,\n5,a,2\n".as_bytes()).unwrap();
        let s = infer_schema(&d).unwrap();
        let x = s.column("x").unwrap();
        assert_eq!(x.range, Some((0.0, 10.0)));
        assert!(!x.nullable);
        assert!(s.column("n").unwrap().nullable);
        let c = s.column("c").unwrap();
        assert_eq!(c.categories.as_ref().unwrap().iter().collect::<Vec<_>>(), ["a", "b"]);
        assert!(check_schema(&d, &s).is_empty());
    }

    #[test]
    fn empty_dataset_has_no_schema() {
        let d = parse_csv("x\n".as_bytes()).unwrap();
        assert!(matches!(infer_schema(&d), Err(ValidationError::EmptyDataset)));
    }

    #[test]
    fn missing_column_reported() {
        let d = parse_csv("x\n1\n".as_bytes()).unwrap();
        let schema = SchemaSpec {
            columns: vec![
                ColumnSchema {
                    name: "x".into(),
                    kind: ColumnKind::Numeric,
                    nullable: false,
                    range: None,
                    categories: None,
                },
                ColumnSchema {
                    name: "age".into(),
                    kind: ColumnKind::Numeric,
                    nullable: false,
                    range: None,
                    categories: None,
                },
            ],
        };
        let v = check_schema(&d, &schema);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].column.as_str(), v[0].rule), ("age", Rule::MissingColumn));
    }

    #[test]
    fn out_of_range_counted() {
        let ages = [34.0, 200.0, 17.0, 121.0, 120.0];
        let d = Dataset::new(vec![Column::numeric("age", ages.to_vec())]).unwrap();
        let schema = SchemaSpec {
            columns: vec![ColumnSchema {
                name: "age".into(),
                kind: ColumnKind::Numeric,
                nullable: false,
                range: Some((0.0, 120.0)),
                categories: None,
            }],
        };
        let oracle = ages.iter().filter(|a| !(0.0..=120.0).contains(*a)).count();
        let v = check_schema(&d, &schema);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::OutOfRange);
        assert_eq!(v[0].count, oracle);
    }

    #[test]
    fn other_violation_kinds() {
        let d = parse_csv("x,c,extra\nfoo,a,1\nbar,z,2\n".as_bytes()).unwrap();
        let schema = SchemaSpec {
            columns: vec![
                ColumnSchema {
                    name: "x".into(),
                    kind: ColumnKind::Numeric,
                    nullable: false,
                    range: None,
                    categories: None,
                },
                ColumnSchema {
                    name: "c".into(),
                    kind: ColumnKind::Categorical,
                    nullable: false,
                    range: None,
                    categories: Some(["a".to_string()].into()),
                },
            ],
        };
        let rules: Vec<Rule> = check_schema(&d, &schema).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, [Rule::TypeMismatch, Rule::DisallowedCategory, Rule::ExtraColumn]);
    }

    fn normal_column(name: &str, n: usize, shift: f64, seed: u64) -> Column {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect();
        Column::numeric(name, values)
    }

    #[test]
    fn reference_sample_passes() {
        let col = normal_column("x", 5_000, 0.0, 1);
        let record = FeatureStatsRecord::fit("ds", &col, 10).unwrap();
        let d = Dataset::new(vec![col]).unwrap();
        let report = validate_ingest(&[record], &[], &d, None, DriftThresholds::default()).unwrap();
        assert!(report.passed);
        assert!(report.flagged_features.is_empty());
        assert_eq!(report.drift_reports[0].kl, 0.0);
    }

    #[test]
    fn one_sigma_shift_flagged() {
        let reference = normal_column("x", 10_000, 0.0, 2);
        let record = FeatureStatsRecord::fit("ds", &reference, 10).unwrap();
        let incoming = Dataset::new(vec![normal_column("x", 10_000, 1.0, 3)]).unwrap();
        // Oracle: KL computed straight from counts on the reference edges.
        let Some(crate::drift::Binning::Numeric { edges }) = Some(record.binning.clone()) else {
            unreachable!()
        };
        let mut counts = [0usize; 10];
        for v in incoming.column("x").unwrap().numeric_values() {
            let bin = (1..edges.len() - 1).filter(|&i| v >= edges[i]).count();
            counts[bin] += 1;
        }
        let oracle: f64 = record
            .proportions
            .iter()
            .zip(counts)
            .map(|(p, c)| {
                let q = (c as f64 / 10_000.0).max(1e-6);
                p * (p / q).ln()
            })
            .sum();
        let report = validate_ingest(&[record], &["x"], &incoming, None, DriftThresholds::default()).unwrap();
        assert!(oracle > 0.1);
        assert!((report.drift_reports[0].kl - oracle).abs() < 1e-4);
        assert!(report.drift_reports[0].kl_flagged);
        assert!(!report.passed);
        assert_eq!(report.flagged_features, ["x"]);
    }

    #[test]
    fn extra_column_ignored_by_drift_caught_by_schema() {
        let col = normal_column("x", 1_000, 0.0, 4);
        let record = FeatureStatsRecord::fit("ds", &col, 10).unwrap();
        let base = Dataset::new(vec![col.clone()]).unwrap();
        let schema = infer_schema(&base).unwrap();
        let incoming = Dataset::new(vec![col, Column::numeric("extra", vec![0.0; 1_000])]).unwrap();
        let report = validate_ingest(&[record], &[], &incoming, Some(&schema), DriftThresholds::default()).unwrap();
        assert_eq!(report.drift_reports.len(), 1);
        assert_eq!(report.schema_violations.len(), 1);
        assert_eq!(report.schema_violations[0].rule, Rule::ExtraColumn);
        assert!(!report.passed);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let col = normal_column("x", 100, 0.0, 5);
        let d = Dataset::new(vec![col]).unwrap();
        assert!(matches!(
            validate_ingest(&[], &["x"], &d, None, DriftThresholds::default()),
            Err(ValidationError::MissingReference(f)) if f == "x"
        ));
    }

    #[test]
    fn heavy_nulls_fail_outright() {
        let col = normal_column("x", 1_000, 0.0, 6);
        let record = FeatureStatsRecord::fit("ds", &col, 10).unwrap();
        let mut values: Vec<Option<f64>> = col.numeric_values().into_iter().map(Some).collect();
        for v in values.iter_mut().take(300) {
            *v = None;
        }
        let incoming = Dataset::new(vec![Column {
            name: "x".into(),
            data: ColumnData::Numeric(values),
        }])
        .unwrap();
        let report = validate_ingest(&[record], &[], &incoming, None, DriftThresholds::default()).unwrap();
        assert!(report.schema_violations.iter().any(|v| v.rule == Rule::ExcessiveNulls && v.count == 300));
        assert!(!report.passed);
    }

    #[test]
    fn split_half_false_positive_rate() {
        let mut flagged = 0;
        for seed in 0..100 {
            let col = normal_column("x", 10_000, 0.0, 1_000 + seed);
            let values = col.numeric_values();
            let (a, b) = values.split_at(5_000);
            let record = FeatureStatsRecord::fit("ds", &Column::numeric("x", a.to_vec()), 10).unwrap();
            let incoming = Dataset::new(vec![Column::numeric("x", b.to_vec())]).unwrap();
            let report = validate_ingest(&[record], &[], &incoming, None, DriftThresholds::default()).unwrap();
            flagged += usize::from(!report.passed);
        }
        assert!(flagged < 5, "{flagged} of 100 null splits flagged");
    }

    proptest! {
        #[test]
        fn inferred_schema_always_conforms(
            xs in prop::collection::vec(prop::option::weighted(0.9, -1e3f64..1e3), 1..40),
            labels in prop::collection::vec(prop::option::weighted(0.9, "[a-d]"), 1..40),
        ) {
            let n = xs.len().min(labels.len());
            let d = Dataset::new(vec![
                Column { name: "x".into(), data: ColumnData::Numeric(xs[..n].to_vec()) },
                Column { name: "c".into(), data: ColumnData::Categorical(labels[..n].to_vec()) },
            ]).unwrap();
            let schema = infer_schema(&d).unwrap();
            prop_assert!(check_schema(&d, &schema).is_empty());
        }
    }
}
