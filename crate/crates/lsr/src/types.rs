//! Shared domain types and dataset validation.
//!
//! All types here are immutable after construction and safe to share
//! across threads. `LabelSpace` and `ProbabilityMatrix` enforce their
//! invariants at construction; `Dataset` is deliberately permissive so
//! that [`validate_dataset`] can report every violation in one pass.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::fnv1a64;

/// Row-sum tolerance for probability matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("label space needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("label {0:?} is empty after normalization")]
    EmptyLabel(String),
    #[error("labels {0:?} and {1:?} collide after normalization")]
    DuplicateLabel(String, String),
    #[error("label id {id} out of range for {k} labels")]
    LabelIdOutOfRange { id: usize, k: usize },
    #[error("probability row {row} sums to {sum}, outside 1 +/- {ROW_SUM_TOLERANCE}")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("probability entry [{row}][{col}] = {value} outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("probability matrix rows have inconsistent widths")]
    RaggedMatrix,
    #[error("prediction vector length {got} does not match {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
///
/// This is the normalization under which label names must be unique, and
/// the first step of fuzzy label matching: LLM echoes of label names vary
/// in case and spacing.
pub fn normalize_label(s: &str) -> String {
    s.trim()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// An ordered set of K distinct class names; a label's id is its position.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
    by_normalized: HashMap<String, usize>,
}

impl LabelSpace {
    /// Build a label space from names in order. Fails when fewer than two
    /// names are given or two names collide after normalization.
    pub fn new<I, S>(names: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(CoreError::TooFewLabels(names.len()));
        }
        let mut by_normalized = HashMap::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            let norm = normalize_label(name);
            if norm.is_empty() {
                return Err(CoreError::EmptyLabel(name.clone()));
            }
            if let Some(prev) = by_normalized.insert(norm, id) {
                return Err(CoreError::DuplicateLabel(
                    names[prev].clone(),
                    name.clone(),
                ));
            }
        }
        Ok(Self {
            names,
            by_normalized,
        })
    }

    /// Number of labels K.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Label name for an id.
    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Label id for a name, matched under normalization.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_normalized.get(&normalize_label(name)).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Stable fingerprint of the normalized names, in order. Stored in
    /// classifier blobs to guard against mismatched label spaces on load.
    pub fn hash64(&self) -> u64 {
        let joined = self
            .names
            .iter()
            .map(|n| normalize_label(n))
            .collect::<Vec<_>>()
            .join("\n");
        fnv1a64(joined.as_bytes())
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = CoreError;
    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        LabelSpace::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.names
    }
}

/// One sample with its dual representation: an ordered semantic view
/// (feature-name, value) and a numerical feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Unique id within a dataset.
    pub id: String,
    /// Ordered (feature-name, value) pairs for the natural-language view.
    pub semantic: Vec<(String, String)>,
    /// Numerical feature vector of width d.
    pub features: Vec<f64>,
    /// Optional ground-truth label id; present only on evaluation runs.
    pub truth: Option<usize>,
}

/// A collection of samples sharing one label space and feature width.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub label_space: LabelSpace,
    /// Feature dimensionality, taken from the first record.
    pub d: usize,
}

impl Dataset {
    /// Assemble a dataset without validating it; run [`validate_dataset`]
    /// to get a report of any violations.
    pub fn new(records: Vec<SampleRecord>, label_space: LabelSpace) -> Self {
        let d = records.first().map_or(0, |r| r.features.len());
        Self {
            records,
            label_space,
            d,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Feature rows in record order.
    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.features.clone()).collect()
    }

    /// Ground truth as a prediction vector, when every record has one.
    pub fn truth_vector(&self) -> Option<PredictionVector> {
        let preds: Option<Vec<usize>> = self.records.iter().map(|r| r.truth).collect();
        preds.map(|p| PredictionVector {
            preds: p,
            rationales: None,
        })
    }
}

/// Per-sample label assignments, optionally with the LLM's analysis text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub preds: Vec<usize>,
    pub rationales: Option<Vec<String>>,
}

impl PredictionVector {
    /// Build a prediction vector, checking every id against the label count.
    pub fn new(preds: Vec<usize>, k: usize) -> Result<Self, CoreError> {
        if let Some(&bad) = preds.iter().find(|&&p| p >= k) {
            return Err(CoreError::LabelIdOutOfRange { id: bad, k });
        }
        Ok(Self {
            preds,
            rationales: None,
        })
    }

    pub fn with_rationales(mut self, rationales: Vec<String>) -> Result<Self, CoreError> {
        if rationales.len() != self.preds.len() {
            return Err(CoreError::LengthMismatch {
                got: rationales.len(),
                expected: self.preds.len(),
            });
        }
        self.rationales = Some(rationales);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }
}

/// Row-stochastic n x K matrix of class probabilities.
///
/// Construction is the only gate: every entry must lie in [0, 1] and every
/// row must sum to 1 within [`ROW_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ProbabilityMatrix {
    rows: Vec<Vec<f64>>,
    k: usize,
}

impl ProbabilityMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        let k = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(CoreError::RaggedMatrix);
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::EntryOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(CoreError::RowNotStochastic { row: i, sum });
            }
        }
        Ok(Self { rows, k })
    }

    /// An empty matrix with a declared width (the m = 0 prediction case).
    pub fn empty(k: usize) -> Self {
        Self { rows: Vec::new(), k }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of classes K (0 only for an empty matrix built from no rows).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }
}

impl TryFrom<Vec<Vec<f64>>> for ProbabilityMatrix {
    type Error = CoreError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        ProbabilityMatrix::new(rows)
    }
}

impl From<ProbabilityMatrix> for Vec<Vec<f64>> {
    fn from(m: ProbabilityMatrix) -> Self {
        m.rows
    }
}

/// One rule violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending record id, when the rule is record-scoped.
    pub record_id: Option<String>,
    /// Short rule code, e.g. `duplicate-id`.
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "[{}] record {:?}: {}", self.rule, id, self.detail),
            None => write!(f, "[{}] {}", self.rule, self.detail),
        }
    }
}

/// Check every dataset invariant and return the violations found. Never
/// fails; an empty report means the dataset is well-formed.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut report = Vec::new();
    if dataset.records.is_empty() {
        report.push(Violation {
            record_id: None,
            rule: "empty-dataset",
            detail: "dataset must contain at least one record".to_string(),
        });
        return report;
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let names0: Vec<&str> = dataset.records[0]
        .semantic
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    let k = dataset.label_space.len();

    for (idx, rec) in dataset.records.iter().enumerate() {
        if let Some(first) = seen.insert(rec.id.as_str(), idx) {
            report.push(Violation {
                record_id: Some(rec.id.clone()),
                rule: "duplicate-id",
                detail: format!("also used by record at position {first}"),
            });
        }
        if rec.features.len() != dataset.d {
            report.push(Violation {
                record_id: Some(rec.id.clone()),
                rule: "feature-dim",
                detail: format!(
                    "has {} features, dataset dimensionality is {}",
                    rec.features.len(),
                    dataset.d
                ),
            });
        }
        let names: Vec<&str> = rec.semantic.iter().map(|(n, _)| n.as_str()).collect();
        if names != names0 {
            report.push(Violation {
                record_id: Some(rec.id.clone()),
                rule: "semantic-order",
                detail: format!(
                    "semantic feature names {:?} differ from first record {:?}",
                    names, names0
                ),
            });
        }
        if let Some(t) = rec.truth {
            if t >= k {
                report.push(Violation {
                    record_id: Some(rec.id.clone()),
                    rule: "truth-range",
                    detail: format!("truth id {t} out of range for {k} labels"),
                });
            }
        }
    }
    report
}
