//! Evaluation: macro-F1, Hit@k, and the embedding-cosine ranking baseline.
//!
//! Zero-denominator convention: a class with no true positives and an
//! empty precision or recall denominator contributes 0, and all K classes
//! enter the macro average whether or not they were ever predicted or
//! observed. This penalizes a model that silently drops rare classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selection::rank;
use crate::types::{LabelSpace, PredictionVector};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what} length {got} does not match {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("label id {id} out of range for {k} classes")]
    BadLabelId { id: usize, k: usize },
    #[error("k must be at least 1")]
    BadK,
    #[error("{which} embedding {index} is a zero vector; cosine is undefined")]
    ZeroVector { which: &'static str, index: usize },
    #[error("{which} embedding {index} has width {got}, expected {expected}")]
    WidthMismatch {
        which: &'static str,
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation report for one prediction vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    /// One entry per class id, covering all K classes.
    pub per_class: Vec<ClassMetrics>,
    /// Hit rates by cutoff; populated by callers that have rankings.
    pub hit_at_k: BTreeMap<usize, f64>,
    /// True-label counts per class; sums to n.
    pub support: Vec<usize>,
}

/// Compute per-class precision/recall/F1 and their unweighted mean over
/// all K classes. Ratios with zero denominators contribute 0.
pub fn macro_f1(
    preds: &PredictionVector,
    truth: &PredictionVector,
    k: usize,
) -> Result<MetricsReport, MetricsError> {
    if preds.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            what: "preds",
            got: preds.len(),
            expected: truth.len(),
        });
    }
    for &id in preds.preds.iter().chain(&truth.preds) {
        if id >= k {
            return Err(MetricsError::BadLabelId { id, k });
        }
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &t) in preds.preds.iter().zip(&truth.preds) {
        support[t] += 1;
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fn_[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        macro_f1,
        per_class,
        hit_at_k: BTreeMap::new(),
        support,
    })
}

/// Fraction of samples whose true label appears in the first
/// min(k, |ranking|) entries of that sample's ranking.
pub fn hit_at_k(
    rankings: &[Vec<usize>],
    truth: &PredictionVector,
    k: usize,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK);
    }
    if rankings.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            what: "rankings",
            got: rankings.len(),
            expected: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = rankings
        .iter()
        .zip(&truth.preds)
        .filter(|(ranking, &t)| {
            let cutoff = k.min(ranking.len());
            ranking[..cutoff].contains(&t)
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Rank labels for each sample by descending cosine similarity between
/// the sample embedding and each label embedding, ties by ascending id.
pub fn embedding_rank(
    sample_embeddings: &[Vec<f64>],
    label_embeddings: &[Vec<f64>],
) -> Result<Vec<Vec<usize>>, MetricsError> {
    let e = label_embeddings
        .first()
        .map(Vec::len)
        .unwrap_or_default();
    let norms: Vec<f64> = label_embeddings
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != e {
                return Err(MetricsError::WidthMismatch {
                    which: "label",
                    index: i,
                    got: v.len(),
                    expected: e,
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(MetricsError::ZeroVector {
                    which: "label",
                    index: i,
                });
            }
            Ok(norm)
        })
        .collect::<Result<_, _>>()?;

    sample_embeddings
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            if sample.len() != e {
                return Err(MetricsError::WidthMismatch {
                    which: "sample",
                    index: i,
                    got: sample.len(),
                    expected: e,
                });
            }
            let sample_norm = sample.iter().map(|x| x * x).sum::<f64>().sqrt();
            if sample_norm == 0.0 {
                return Err(MetricsError::ZeroVector {
                    which: "sample",
                    index: i,
                });
            }
            let sims: Vec<f64> = label_embeddings
                .iter()
                .zip(&norms)
                .map(|(label, norm)| {
                    let dot: f64 = sample.iter().zip(label).map(|(a, b)| a * b).sum();
                    dot / (sample_norm * norm)
                })
                .collect();
            Ok(rank(&sims))
        })
        .collect()
}

/// One row of the per-iteration progress report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReportRow {
    pub t: usize,
    /// Macro-F1 of this iteration's own predictions.
    pub macro_f1: f64,
    /// Macro-F1 of the majority vote over iterations 0..=t.
    pub vote_macro_f1: f64,
    /// Unweighted mean candidate-set size at t; absent at t = 0.
    pub mean_candidate_size: Option<f64>,
    /// Fraction of samples whose true label survived into the candidate
    /// set at t; absent at t = 0.
    pub candidate_hit_rate: Option<f64>,
}

/// Score every iteration of a run against the truth: per-pass macro-F1,
/// the running majority vote, and how much of the truth the shrinking
/// candidate sets retained.
pub fn iteration_report(
    records: &[crate::engine::IterationRecord],
    truth: &PredictionVector,
    k: usize,
) -> Result<Vec<IterationReportRow>, MetricsError> {
    let mut rows = Vec::with_capacity(records.len());
    for (t, record) in records.iter().enumerate() {
        let own = macro_f1(&record.predictions, truth, k)?.macro_f1;
        let views: Vec<&PredictionVector> =
            records[..=t].iter().map(|r| &r.predictions).collect();
        let vote = crate::engine::majority_vote(&views).map_err(|_| MetricsError::BadK)?;
        let vote_macro_f1 = macro_f1(&vote, truth, k)?.macro_f1;
        let (mean_candidate_size, candidate_hit_rate) = match &record.candidate_sets {
            None => (None, None),
            Some(sets) => {
                if sets.len() != truth.len() {
                    return Err(MetricsError::LengthMismatch {
                        what: "candidate_sets",
                        got: sets.len(),
                        expected: truth.len(),
                    });
                }
                let mean = sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64;
                let hits = sets
                    .iter()
                    .zip(&truth.preds)
                    .filter(|(s, &t)| s.contains(t))
                    .count();
                (Some(mean), Some(hits as f64 / sets.len() as f64))
            }
        };
        rows.push(IterationReportRow {
            t,
            macro_f1: own,
            vote_macro_f1,
            mean_candidate_size,
            candidate_hit_rate,
        });
    }
    Ok(rows)
}

/// Render a report as an aligned text table, one row per class.
pub fn render_report_table(report: &MetricsReport, label_space: &LabelSpace) -> String {
    let name_width = label_space
        .names()
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(5)
        .max("class".len());
    let mut out = format!(
        "{:<name_width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
        "class", "precision", "recall", "f1", "support"
    );
    for (c, m) in report.per_class.iter().enumerate() {
        let name = label_space.name(c).unwrap_or("?");
        out.push_str(&format!(
            "{name:<name_width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
            m.precision, m.recall, m.f1, report.support[c]
        ));
    }
    out.push_str(&format!("macro F1: {:.4}\n", report.macro_f1));
    for (k, rate) in &report.hit_at_k {
        out.push_str(&format!("hit@{k}: {rate:.4}\n"));
    }
    out
}
