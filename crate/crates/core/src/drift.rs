//! Binned drift divergences.
//!
//! A [`Binning`] is fitted once on reference data and then reused for every
//! incoming sample, so reference and current proportions always live on the
//! same support. Two divergences are computed on top of it:
//!
//! ```text
//! KL(p || q) = Σ p_i ln(p_i / q_i)
//! PSI(p, q)  = Σ (p_i - q_i) ln(p_i / q_i)
//! ```
//!
//! Before either is evaluated, proportions below `epsilon` are raised to
//! `epsilon` and the vector is renormalized. PSI equals `KL(p||q) + KL(q||p)`
//! on the smoothed vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of equal-frequency bins for numeric features.
pub const DEFAULT_BINS: usize = 10;
/// Default zero-smoothing floor.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Labels rarer than this fraction of the reference sample share the `other` bin.
pub const RARE_LABEL_FRACTION: f64 = 0.01;
/// Name of the reserved catch-all categorical bin.
pub const OTHER_BUCKET: &str = "other";

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriftError {
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("too few distinct values: need at least {needed}, found {found}")]
    TooFewDistinct { needed: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value {0} in numeric input")]
    NonFinite(f64),
    #[error("binning mismatch between distributions")]
    BinningMismatch,
    #[error("value kind does not match binning kind (expected {expected})")]
    KindMismatch { expected: &'static str },
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("invalid proportions: {0}")]
    InvalidProportions(String),
    #[error("invalid threshold {name}={value}: must be strictly positive")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("epsilon must be strictly positive, got {0}")]
    InvalidEpsilon(f64),
}

/// Raw values of one feature, either numeric or labelled.
#[derive(Debug, Clone, Copy)]
pub enum FeatureValues<'a> {
    Numeric(&'a [f64]),
    Categorical(&'a [&'a str]),
}

impl FeatureValues<'_> {
    pub fn len(&self) -> usize {
        match self {
            FeatureValues::Numeric(v) => v.len(),
            FeatureValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bin layout shared by a reference distribution and every sample compared to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    /// `k + 1` strictly ascending edges; the outermost are `-inf` and `+inf`.
    /// Bin `i` covers `[edges[i], edges[i + 1])`.
    Numeric {
        #[serde(with = "edge_serde")]
        edges: Vec<f64>,
    },
    /// One bin per label, followed by the implicit [`OTHER_BUCKET`].
    Categorical { categories: Vec<String> },
}

impl Binning {
    /// Builds a numeric binning from explicit interior cut points.
    pub fn from_cuts(cuts: &[f64]) -> Result<Self, DriftError> {
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(f64::NEG_INFINITY);
        edges.extend_from_slice(cuts);
        edges.push(f64::INFINITY);
        let binning = Binning::Numeric { edges };
        binning.check()?;
        Ok(binning)
    }

    /// Builds a categorical binning over `labels` plus the `other` bucket.
    pub fn from_categories<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self, DriftError> {
        let binning = Binning::Categorical {
            categories: labels.into_iter().map(Into::into).collect(),
        };
        binning.check()?;
        Ok(binning)
    }

    /// Number of bins.
    pub fn k(&self) -> usize {
        match self {
            Binning::Numeric { edges } => edges.len().saturating_sub(1),
            Binning::Categorical { categories } => categories.len() + 1,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Binning::Numeric { .. } => "numeric",
            Binning::Categorical { .. } => "categorical",
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Binning::Numeric { .. })
    }

    /// Checks the structural invariants.
    pub fn check(&self) -> Result<(), DriftError> {
        if self.k() < 2 {
            return Err(DriftError::TooFewBins(self.k()));
        }
        match self {
            Binning::Numeric { edges } => {
                if edges.iter().any(|e| e.is_nan()) {
                    return Err(DriftError::InvalidBinning("NaN edge".into()));
                }
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DriftError::InvalidBinning(
                        "edges must be strictly ascending".into(),
                    ));
                }
                let interior = &edges[1..edges.len() - 1];
                if interior.iter().any(|e| !e.is_finite()) {
                    return Err(DriftError::InvalidBinning(
                        "interior edges must be finite".into(),
                    ));
                }
            }
            Binning::Categorical { categories } => {
                let mut seen = std::collections::HashSet::new();
                for c in categories {
                    if c == OTHER_BUCKET {
                        return Err(DriftError::InvalidBinning(format!(
                            "label `{OTHER_BUCKET}` is reserved"
                        )));
                    }
                    if !seen.insert(c.as_str()) {
                        return Err(DriftError::InvalidBinning(format!(
                            "duplicate label `{c}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Bin index of a numeric value. Values beyond the interior edges land in
    /// the end bins.
    pub fn numeric_bin(edges: &[f64], value: f64) -> usize {
        let interior = &edges[1..edges.len() - 1];
        interior.partition_point(|cut| *cut <= value)
    }
}

/// Fits a reference binning.
///
/// Numeric input gets `k` equal-frequency bins cut at midpoints between
/// adjacent order statistics, with the outer edges at `±inf`. Tied values can
/// merge cut points, in which case fewer than `k` bins are produced.
/// Categorical input gets one bin per label covering at least
/// [`RARE_LABEL_FRACTION`] of the sample; `k` only has to be at least 2 there.
pub fn build_reference_binning(values: FeatureValues<'_>, k: usize) -> Result<Binning, DriftError> {
    if k < 2 {
        return Err(DriftError::TooFewBins(k));
    }
    match values {
        FeatureValues::Numeric(values) => numeric_reference_binning(values, k),
        FeatureValues::Categorical(labels) => categorical_reference_binning(labels),
    }
}

fn numeric_reference_binning(values: &[f64], k: usize) -> Result<Binning, DriftError> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(DriftError::NonFinite(*bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = sorted.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(!sorted.is_empty());
    if distinct < k {
        return Err(DriftError::TooFewDistinct {
            needed: k,
            found: distinct,
        });
    }

    let n = sorted.len();
    let mut cuts: Vec<f64> = Vec::with_capacity(k - 1);
    for i in 1..k {
        let idx = ((i * n) as f64 / k as f64).round() as usize;
        let idx = idx.clamp(1, n - 1);
        let cut = sorted[idx - 1] + (sorted[idx] - sorted[idx - 1]) / 2.0;
        let above_prev = cuts.last().is_none_or(|prev| cut > *prev);
        if above_prev && cut > sorted[0] {
            cuts.push(cut);
        }
    }
    if cuts.is_empty() {
        return Err(DriftError::TooFewDistinct {
            needed: k,
            found: distinct,
        });
    }
    Binning::from_cuts(&cuts)
}

fn categorical_reference_binning(labels: &[&str]) -> Result<Binning, DriftError> {
    if labels.is_empty() {
        return Err(DriftError::EmptyInput);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for label in labels {
        *counts.entry(label).or_default() += 1;
    }
    let min_count = RARE_LABEL_FRACTION * labels.len() as f64;
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|(label, count)| *count as f64 >= min_count && *label != OTHER_BUCKET)
        .map(|(label, _)| label.to_string())
        .collect();
    kept.sort();
    Binning::from_categories(kept)
}

/// Per-bin proportions of a sample under a fixed binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDistribution {
    pub binning: Binning,
    pub proportions: Vec<f64>,
    pub sample_count: u64,
}

impl BinnedDistribution {
    /// Wraps explicit proportions after checking the invariants.
    pub fn from_proportions(
        binning: Binning,
        proportions: Vec<f64>,
        sample_count: u64,
    ) -> Result<Self, DriftError> {
        let dist = BinnedDistribution {
            binning,
            proportions,
            sample_count,
        };
        dist.check()?;
        Ok(dist)
    }

    pub fn check(&self) -> Result<(), DriftError> {
        self.binning.check()?;
        check_proportions(&self.proportions, self.binning.k())
    }

    pub fn k(&self) -> usize {
        self.proportions.len()
    }
}

pub(crate) fn check_proportions(proportions: &[f64], k: usize) -> Result<(), DriftError> {
    if proportions.len() != k {
        return Err(DriftError::InvalidProportions(format!(
            "expected {k} proportions, got {}",
            proportions.len()
        )));
    }
    if let Some(p) = proportions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(DriftError::InvalidProportions(format!(
            "proportion {p} outside [0, 1]"
        )));
    }
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(DriftError::InvalidProportions(format!(
            "proportions sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Counts `values` into the bins of `binning`.
pub fn bin_distribution(
    values: FeatureValues<'_>,
    binning: &Binning,
) -> Result<BinnedDistribution, DriftError> {
    if values.is_empty() {
        return Err(DriftError::EmptyInput);
    }
    let mut counts = vec![0u64; binning.k()];
    match (values, binning) {
        (FeatureValues::Numeric(values), Binning::Numeric { edges }) => {
            for &v in values {
                if !v.is_finite() {
                    return Err(DriftError::NonFinite(v));
                }
                counts[Binning::numeric_bin(edges, v)] += 1;
            }
        }
        (FeatureValues::Categorical(labels), Binning::Categorical { categories }) => {
            let index: HashMap<&str, usize> = categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i))
                .collect();
            let other = categories.len();
            for label in labels {
                counts[index.get(label).copied().unwrap_or(other)] += 1;
            }
        }
        (_, binning) => {
            return Err(DriftError::KindMismatch {
                expected: binning.kind_name(),
            })
        }
    }
    let n = values.len() as u64;
    let proportions = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(BinnedDistribution {
        binning: binning.clone(),
        proportions,
        sample_count: n,
    })
}

/// Floors proportions at `epsilon` and renormalizes.
pub fn smooth(proportions: &[f64], epsilon: f64) -> Vec<f64> {
    let floored: Vec<f64> = proportions.iter().map(|&p| p.max(epsilon)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / total).collect()
}

fn smoothed_pair(
    p: &BinnedDistribution,
    q: &BinnedDistribution,
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>), DriftError> {
    if !(epsilon > 0.0) {
        return Err(DriftError::InvalidEpsilon(epsilon));
    }
    if p.binning != q.binning || p.k() != q.k() {
        return Err(DriftError::BinningMismatch);
    }
    Ok((smooth(&p.proportions, epsilon), smooth(&q.proportions, epsilon)))
}

// Tiny negative results are round-off; the divergences are nonnegative.
fn clamp_round_off(value: f64) -> f64 {
    debug_assert!(value >= -1e-12, "divergence {value} below round-off band");
    value.max(0.0)
}

/// `KL(p || q)` over smoothed proportions.
pub fn kl_divergence(
    p: &BinnedDistribution,
    q: &BinnedDistribution,
    epsilon: f64,
) -> Result<f64, DriftError> {
    let (p, q) = smoothed_pair(p, q, epsilon)?;
    let kl = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>();
    Ok(clamp_round_off(kl))
}

/// Population stability index together with its per-bin terms.
pub fn psi(
    p: &BinnedDistribution,
    q: &BinnedDistribution,
    epsilon: f64,
) -> Result<(f64, Vec<f64>), DriftError> {
    let (p, q) = smoothed_pair(p, q, epsilon)?;
    let terms: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| (pi - qi) * (pi / qi).ln())
        .collect();
    let total = clamp_round_off(terms.iter().sum());
    Ok((total, terms))
}

/// Drift flag thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftThresholds {
    pub kl_delta: f64,
    pub psi_threshold: f64,
}

impl Default for DriftThresholds {
    fn default() -> Self {
        DriftThresholds {
            kl_delta: 0.1,
            psi_threshold: 0.25,
        }
    }
}

impl DriftThresholds {
    pub fn check(&self) -> Result<(), DriftError> {
        if !(self.kl_delta > 0.0) {
            return Err(DriftError::InvalidThreshold {
                name: "kl_delta",
                value: self.kl_delta,
            });
        }
        if !(self.psi_threshold > 0.0) {
            return Err(DriftError::InvalidThreshold {
                name: "psi_threshold",
                value: self.psi_threshold,
            });
        }
        Ok(())
    }
}

/// Drift scores of one feature and the flags they raise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub feature: String,
    pub kl: f64,
    pub psi: f64,
    pub per_bin_psi_terms: Vec<f64>,
    pub kl_flagged: bool,
    pub psi_flagged: bool,
    pub thresholds: DriftThresholds,
}

/// Compares `current` against `reference` and applies both thresholds.
pub fn evaluate_drift(
    feature: &str,
    reference: &BinnedDistribution,
    current: &BinnedDistribution,
    thresholds: DriftThresholds,
) -> Result<DriftReport, DriftError> {
    thresholds.check()?;
    let kl = kl_divergence(reference, current, DEFAULT_EPSILON)?;
    let (psi, per_bin_psi_terms) = psi(reference, current, DEFAULT_EPSILON)?;
    Ok(DriftReport {
        feature: feature.to_string(),
        kl,
        psi,
        per_bin_psi_terms,
        kl_flagged: kl > thresholds.kl_delta,
        psi_flagged: psi > thresholds.psi_threshold,
        thresholds,
    })
}

// JSON has no infinities; the outer edges are written as strings.
mod edge_serde {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Edge {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(edges: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Edge> = edges
            .iter()
            .map(|&e| {
                if e == f64::INFINITY {
                    Edge::Named("inf".into())
                } else if e == f64::NEG_INFINITY {
                    Edge::Named("-inf".into())
                } else {
                    Edge::Finite(e)
                }
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Edge>::deserialize(d)?
            .into_iter()
            .map(|e| match e {
                Edge::Finite(v) => Ok(v),
                Edge::Named(s) if s == "inf" => Ok(f64::INFINITY),
                Edge::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Edge::Named(s) => Err(D::Error::custom(format!("invalid edge `{s}`"))),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_bin(p0: f64) -> BinnedDistribution {
        BinnedDistribution::from_proportions(Binning::from_cuts(&[0.0]).unwrap(), vec![p0, 1.0 - p0], 100)
            .unwrap()
    }

    // Independent oracle: plain summation over unsmoothed, strictly positive proportions.
    fn direct_kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    }

    fn direct_psi(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| (a - b) * (a / b).ln()).sum()
    }

    #[test]
    fn quartiles_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let binning = build_reference_binning(FeatureValues::Numeric(&values), 4).unwrap();
        // Quantile oracle: cut between sorted[25i-1] and sorted[25i].
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (1..4).map(|i| (sorted[25 * i - 1] + sorted[25 * i]) / 2.0).collect();
        match &binning {
            Binning::Numeric { edges } => {
                assert_eq!(edges.len(), 5);
                assert_eq!(edges[0], f64::NEG_INFINITY);
                assert_eq!(edges[4], f64::INFINITY);
                assert_eq!(&edges[1..4], expected.as_slice());
            }
            _ => panic!("expected numeric binning"),
        }
        let dist = bin_distribution(FeatureValues::Numeric(&values), &binning).unwrap();
        assert_eq!(dist.proportions, vec![0.25; 4]);
    }

    #[test]
    fn constant_values_rejected() {
        let values = vec![3.0; 50];
        let err = build_reference_binning(FeatureValues::Numeric(&values), 4).unwrap_err();
        assert!(matches!(err, DriftError::TooFewDistinct { .. }));
        assert!(err.to_string().contains("too few distinct values"));
    }

    #[test]
    fn k_below_two_rejected() {
        let values: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(
            build_reference_binning(FeatureValues::Numeric(&values), 1),
            Err(DriftError::TooFewBins(1))
        );
    }

    #[test]
    fn rare_label_at_exactly_one_percent_is_kept() {
        let mut labels = vec!["a"; 50];
        labels.extend(vec!["b"; 49]);
        labels.push("c");
        let binning = build_reference_binning(FeatureValues::Categorical(&labels), 2).unwrap();
        assert_eq!(
            binning,
            Binning::Categorical {
                categories: vec!["a".into(), "b".into(), "c".into()]
            }
        );
        assert_eq!(binning.k(), 4);
    }

    #[test]
    fn labels_below_one_percent_merge_into_other() {
        let mut labels = vec!["a"; 150];
        labels.extend(vec!["b"; 49]);
        labels.push("z");
        let binning = build_reference_binning(FeatureValues::Categorical(&labels), 2).unwrap();
        assert_eq!(binning, Binning::from_categories(["a", "b"]).unwrap());
        let dist = bin_distribution(FeatureValues::Categorical(&labels), &binning).unwrap();
        assert_eq!(dist.proportions, vec![0.75, 0.245, 0.005]);
    }

    #[test]
    fn unseen_labels_land_in_other() {
        let binning = Binning::from_categories(["a", "b"]).unwrap();
        let dist = bin_distribution(FeatureValues::Categorical(&["x", "y", "a", "a"]), &binning).unwrap();
        assert_eq!(dist.proportions, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn single_value_fills_one_bin() {
        let binning = Binning::from_cuts(&[0.0, 1.0]).unwrap();
        let dist = bin_distribution(FeatureValues::Numeric(&[0.5]), &binning).unwrap();
        assert_eq!(dist.proportions, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn values_above_all_edges_land_in_last_bin() {
        let reference: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let binning = build_reference_binning(FeatureValues::Numeric(&reference), 10).unwrap();
        let shifted: Vec<f64> = reference.iter().map(|v| v + 5.0).collect();
        let dist = bin_distribution(FeatureValues::Numeric(&shifted), &binning).unwrap();
        let last_count = shifted
            .iter()
            .filter(|v| match &binning {
                Binning::Numeric { edges } => **v >= edges[edges.len() - 2],
                _ => unreachable!(),
            })
            .count();
        assert_eq!(last_count, shifted.len());
        assert_eq!(dist.proportions[9], 1.0);
        assert!(dist.proportions[..9].iter().all(|p| *p == 0.0));
    }

    #[test]
    fn reference_sample_is_uniform_over_its_bins() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let binning = build_reference_binning(FeatureValues::Numeric(&values), 10).unwrap();
        let dist = bin_distribution(FeatureValues::Numeric(&values), &binning).unwrap();
        for p in dist.proportions {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_rejected() {
        let binning = Binning::from_cuts(&[0.0]).unwrap();
        assert_eq!(
            bin_distribution(FeatureValues::Numeric(&[]), &binning),
            Err(DriftError::EmptyInput)
        );
    }

    #[test]
    fn kind_mismatch_rejected() {
        let binning = Binning::from_cuts(&[0.0]).unwrap();
        assert!(matches!(
            bin_distribution(FeatureValues::Categorical(&["a"]), &binning),
            Err(DriftError::KindMismatch { .. })
        ));
    }

    #[test]
    fn kl_hand_value() {
        let p = two_bin(0.5);
        let q = two_bin(0.25);
        let expected = direct_kl(&[0.5, 0.5], &[0.25, 0.75]);
        assert!((expected - 0.143841).abs() < 1e-6);
        let kl = kl_divergence(&p, &q, DEFAULT_EPSILON).unwrap();
        assert!((kl - expected).abs() < 1e-12);
        assert_eq!(kl_divergence(&p, &p, DEFAULT_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn kl_with_zero_bin_is_finite() {
        let p = two_bin(0.5);
        let q = two_bin(1.0);
        let kl = kl_divergence(&p, &q, DEFAULT_EPSILON).unwrap();
        let qs = [1.0 / (1.0 + DEFAULT_EPSILON), DEFAULT_EPSILON / (1.0 + DEFAULT_EPSILON)];
        assert!(kl.is_finite());
        assert!((kl - direct_kl(&[0.5, 0.5], &qs)).abs() < 1e-12);
    }

    #[test]
    fn psi_hand_values() {
        let (v, terms) = psi(&two_bin(0.6), &two_bin(0.4), DEFAULT_EPSILON).unwrap();
        assert!((v - 0.162186).abs() < 1e-6);
        assert!((v - direct_psi(&[0.6, 0.4], &[0.4, 0.6])).abs() < 1e-12);
        assert_eq!(terms.len(), 2);
        let (v, _) = psi(&two_bin(0.8), &two_bin(0.2), DEFAULT_EPSILON).unwrap();
        assert!((v - 1.663553).abs() < 1e-6);
        let (v, terms) = psi(&two_bin(0.3), &two_bin(0.3), DEFAULT_EPSILON).unwrap();
        assert_eq!(v, 0.0);
        assert!(terms.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn mismatched_binning_rejected() {
        let p = two_bin(0.5);
        let q = BinnedDistribution::from_proportions(
            Binning::from_cuts(&[1.0]).unwrap(),
            vec![0.5, 0.5],
            10,
        )
        .unwrap();
        assert_eq!(kl_divergence(&p, &q, DEFAULT_EPSILON), Err(DriftError::BinningMismatch));
        assert!(evaluate_drift("x", &p, &q, DriftThresholds::default()).is_err());
    }

    #[test]
    fn evaluate_drift_flags() {
        let t = DriftThresholds::default();
        let same = evaluate_drift("f", &two_bin(0.5), &two_bin(0.5), t).unwrap();
        assert!(!same.kl_flagged && !same.psi_flagged);
        let mild = evaluate_drift("f", &two_bin(0.6), &two_bin(0.4), t).unwrap();
        assert!(!mild.psi_flagged);
        let strong = evaluate_drift("f", &two_bin(0.8), &two_bin(0.2), t).unwrap();
        assert!(strong.psi_flagged && strong.kl_flagged);
        let sum: f64 = strong.per_bin_psi_terms.iter().sum();
        assert!((sum - strong.psi).abs() < 1e-9);
    }

    #[test]
    fn report_json_field_set() {
        let r = evaluate_drift("age", &two_bin(0.6), &two_bin(0.4), DriftThresholds::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["feature", "kl", "kl_flagged", "per_bin_psi_terms", "psi", "psi_flagged", "thresholds"]
        );
    }

    #[test]
    fn infinite_edges_round_trip_through_json() {
        let b = Binning::from_cuts(&[-1.5, 0.1, 2.0]).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        assert!(text.contains("\"-inf\""));
        assert_eq!(serde_json::from_str::<Binning>(&text).unwrap(), b);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let t = DriftThresholds {
            kl_delta: 0.0,
            psi_threshold: 0.25,
        };
        assert!(t.check().is_err());
    }

    fn proportions(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..1000, k).prop_filter_map("nonzero total", |w| {
            let total: u32 = w.iter().sum();
            (total > 0).then(|| w.iter().map(|&x| x as f64 / total as f64).collect())
        })
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=20).prop_flat_map(|k| (proportions(k), proportions(k)))
    }

    fn dist(p: Vec<f64>) -> BinnedDistribution {
        let cuts: Vec<f64> = (1..p.len()).map(|i| i as f64).collect();
        let binning = Binning::from_cuts(&cuts).unwrap();
        let sum: f64 = p.iter().sum();
        let p = p.into_iter().map(|x| x / sum).collect();
        BinnedDistribution::from_proportions(binning, p, 1).unwrap()
    }

    proptest! {
        #[test]
        fn psi_terms_nonnegative_and_symmetric((p, q) in pair()) {
            let (p, q) = (dist(p), dist(q));
            let (pq, terms) = psi(&p, &q, DEFAULT_EPSILON).unwrap();
            let (qp, _) = psi(&q, &p, DEFAULT_EPSILON).unwrap();
            prop_assert!(terms.iter().all(|t| *t >= 0.0));
            prop_assert!((pq - qp).abs() <= 1e-12);
            let kl = kl_divergence(&p, &q, DEFAULT_EPSILON).unwrap()
                + kl_divergence(&q, &p, DEFAULT_EPSILON).unwrap();
            prop_assert!((pq - kl).abs() <= 1e-9);
        }

        #[test]
        fn binned_proportions_sum_to_one(values in prop::collection::vec(-1e6f64..1e6, 1..300)) {
            let binning = Binning::from_cuts(&[-10.0, 0.0, 10.0]).unwrap();
            let d = bin_distribution(FeatureValues::Numeric(&values), &binning).unwrap();
            let sum: f64 = d.proportions.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(d.proportions.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
