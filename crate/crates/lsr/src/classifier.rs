//! Probabilistic classifier trained on pseudo-labels.
//!
//! The built-in model is L2-regularized multinomial logistic regression,
//! trained in two phases: full-batch gradient descent with early stopping
//! against a stratified hold-out split, then a retrain from scratch on all
//! samples for exactly the epoch count the first phase settled on. Zero
//! initialization and full-batch updates make training bit-reproducible
//! for a given seed.
//!
//! The engine only depends on the [`ClassifierBackend`] / [`TrainedModel`]
//! contract, so a tree-based or any other probabilistic backend can be
//! swapped in without touching the loop.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded_rng;
use crate::types::{LabelSpace, PredictionVector, ProbabilityMatrix};

const BLOB_FORMAT: &str = "lsr-logistic";
const BLOB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training needs at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("single-class input: training needs at least 2 distinct labels")]
    SingleClass,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature width {got} does not match expected {expected} at row {row}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("labels length {got} does not match feature rows {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("unreadable classifier blob: {0}")]
    BlobFormat(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Hyperparameters for the built-in logistic model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    /// L2 penalty on non-bias weights.
    pub l2: f64,
    pub max_epochs: usize,
    /// Epochs without hold-out improvement before stopping.
    pub patience: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Weight samples by inverse class frequency of their pseudo-labels.
    pub class_weighting: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-3,
            max_epochs: 500,
            patience: 20,
            holdout_fraction: 0.2,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0) {
            return Err(ClassifierError::BadConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.l2 < 0.0 {
            return Err(ClassifierError::BadConfig(format!(
                "l2 must be >= 0, got {}",
                self.l2
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(ClassifierError::BadConfig(format!(
                "holdout_fraction must be in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Train/hold-out partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Split rows so each class sends round(fraction * m_c) samples to the
/// hold-out set, capped at m_c - 1 so train keeps at least one sample per
/// class. Deterministic under `seed`; both index lists come back sorted.
pub fn stratified_split(
    labels: &PredictionVector,
    fraction: f64,
    seed: u64,
) -> Result<SplitIndices, ClassifierError> {
    let n = labels.len();
    if n < 2 {
        return Err(ClassifierError::TooFewSamples { got: n, min: 2 });
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &c) in labels.preds.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (_, mut indices) in by_class {
        let m = indices.len();
        let want = ((fraction * m as f64) + 0.5).floor() as usize;
        let want = want.min(m - 1);
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        holdout.extend_from_slice(&indices[..want]);
        train.extend_from_slice(&indices[want..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok(SplitIndices { train, holdout })
}

/// Inverse-frequency class weights: w_c = n / (K_observed * count_c) for
/// observed classes, 0 for classes never seen. The weighted sample count
/// sums back to n.
pub fn class_weights(labels: &PredictionVector, k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &c in &labels.preds {
        counts[c] += 1;
    }
    let n = labels.len() as f64;
    let k_obs = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (k_obs * c as f64)
            }
        })
        .collect()
}

/// A fitted logistic model: K x (d+1) weights, bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    weights: Array2<f64>,
    label_space_hash: u64,
    /// Epoch budget the hold-out phase settled on and the retrain used.
    pub epochs_used: usize,
    /// Best hold-out loss seen in phase 1; `None` when every class was too
    /// small to give up a hold-out sample.
    pub final_holdout_loss: Option<f64>,
}

impl TrainedClassifier {
    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn label_space_hash(&self) -> u64 {
        self.label_space_hash
    }

    /// Class probabilities, one row per feature row.
    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<ProbabilityMatrix, ClassifierError> {
        if features.is_empty() {
            return Ok(ProbabilityMatrix::empty(self.k()));
        }
        let x = augment(features, self.d())?;
        let mut logits = x.dot(&self.weights.t());
        softmax_rows(&mut logits);
        let rows: Vec<Vec<f64>> = logits.rows().into_iter().map(|r| r.to_vec()).collect();
        ProbabilityMatrix::new(rows).map_err(|e| ClassifierError::Internal(e.to_string()))
    }

    /// Serialize to a versioned JSON blob. Loading it back reproduces
    /// predictions bit-exactly.
    pub fn to_blob(&self) -> Vec<u8> {
        let blob = ClassifierBlob {
            format: BLOB_FORMAT.to_string(),
            version: BLOB_VERSION,
            label_space_hash: self.label_space_hash,
            epochs_used: self.epochs_used,
            final_holdout_loss: self.final_holdout_loss,
            weights: self.weights.clone(),
        };
        serde_json::to_vec(&blob).expect("classifier blob serializes")
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let blob: ClassifierBlob = serde_json::from_slice(bytes)
            .map_err(|e| ClassifierError::BlobFormat(e.to_string()))?;
        if blob.format != BLOB_FORMAT {
            return Err(ClassifierError::BlobFormat(format!(
                "unknown format {:?}",
                blob.format
            )));
        }
        if blob.version != BLOB_VERSION {
            return Err(ClassifierError::BlobFormat(format!(
                "unsupported version {}",
                blob.version
            )));
        }
        Ok(Self {
            weights: blob.weights,
            label_space_hash: blob.label_space_hash,
            epochs_used: blob.epochs_used,
            final_holdout_loss: blob.final_holdout_loss,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierBlob {
    format: String,
    version: u32,
    label_space_hash: u64,
    epochs_used: usize,
    final_holdout_loss: Option<f64>,
    weights: Array2<f64>,
}

/// Train the built-in logistic model on pseudo-labels.
///
/// Phase 1 runs gradient descent on the stratified train split, tracking
/// weighted cross-entropy on the hold-out split and stopping after
/// `patience` epochs without improvement; the best epoch count E* is
/// recorded. Phase 2 restarts from zero weights and trains on all samples
/// for exactly E* epochs. Class weights (when enabled) are computed once
/// from the full pseudo-label vector and reused in both phases.
pub fn train(
    features: &[Vec<f64>],
    pseudo_labels: &PredictionVector,
    config: &ClassifierConfig,
    label_space: &LabelSpace,
) -> Result<TrainedClassifier, ClassifierError> {
    config.validate()?;
    let n = features.len();
    if n < 4 {
        return Err(ClassifierError::TooFewSamples { got: n, min: 4 });
    }
    if pseudo_labels.len() != n {
        return Err(ClassifierError::LengthMismatch {
            got: pseudo_labels.len(),
            expected: n,
        });
    }
    let distinct: std::collections::BTreeSet<usize> =
        pseudo_labels.preds.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ClassifierError::SingleClass);
    }
    let d = features[0].len();
    for (row, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(ClassifierError::DimensionMismatch {
                row,
                got: f.len(),
                expected: d,
            });
        }
        if let Some(col) = f.iter().position(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite { row, col });
        }
    }
    let k = label_space.len();

    let per_class = if config.class_weighting {
        class_weights(pseudo_labels, k)
    } else {
        vec![1.0; k]
    };
    let sample_w: Vec<f64> = pseudo_labels.preds.iter().map(|&c| per_class[c]).collect();

    let x = augment(features, d)?;
    let split = stratified_split(pseudo_labels, config.holdout_fraction, config.seed)?;

    let take = |indices: &[usize]| -> (Array2<f64>, Vec<usize>, Vec<f64>) {
        let rows = x.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| pseudo_labels.preds[i]).collect();
        let weights = indices.iter().map(|&i| sample_w[i]).collect();
        (rows, labels, weights)
    };

    // Phase 1: find the epoch budget E* against the hold-out split.
    let (epochs_used, final_holdout_loss) = if split.holdout.is_empty() {
        (config.max_epochs, None)
    } else {
        let (x_train, y_train, w_train) = take(&split.train);
        let (x_hold, y_hold, w_hold) = take(&split.holdout);
        let mut w = Array2::zeros((k, d + 1));
        let mut best = holdout_loss(&w, &x_hold, &y_hold, &w_hold);
        let mut best_epoch = 0usize;
        let mut since_best = 0usize;
        for epoch in 1..=config.max_epochs {
            gradient_step(&mut w, &x_train, &y_train, &w_train, config);
            let loss = holdout_loss(&w, &x_hold, &y_hold, &w_hold);
            if loss < best {
                best = loss;
                best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        (best_epoch, Some(best))
    };

    // Phase 2: retrain from scratch on every sample for exactly E* epochs.
    let y_all: Vec<usize> = pseudo_labels.preds.clone();
    let mut w = Array2::zeros((k, d + 1));
    for _ in 0..epochs_used {
        gradient_step(&mut w, &x, &y_all, &sample_w, config);
    }

    Ok(TrainedClassifier {
        weights: w,
        label_space_hash: label_space.hash64(),
        epochs_used,
        final_holdout_loss,
    })
}

/// Weighted cross-entropy loss with L2 penalty, and its gradient with
/// respect to the weights. The bias column is excluded from the penalty.
/// Exposed for finite-difference verification.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    features: &[Vec<f64>],
    labels: &[usize],
    sample_weights: &[f64],
    l2: f64,
) -> (f64, Array2<f64>) {
    let d = weights.ncols() - 1;
    let x = augment(features, d).expect("feature width matches weights");
    loss_and_gradient_aug(weights, &x, labels, sample_weights, l2)
}

fn loss_and_gradient_aug(
    weights: &Array2<f64>,
    x: &Array2<f64>,
    labels: &[usize],
    sample_weights: &[f64],
    l2: f64,
) -> (f64, Array2<f64>) {
    let total_w: f64 = sample_weights.iter().sum();
    let scale = if total_w > 0.0 { 1.0 / total_w } else { 0.0 };

    let mut probs = x.dot(&weights.t());
    softmax_rows(&mut probs);

    let mut loss = 0.0;
    // Residual rows w_i * (p_i - onehot(y_i)).
    let mut residual = probs;
    for (i, (&y, &wi)) in labels.iter().zip(sample_weights).enumerate() {
        let p = residual[(i, y)];
        loss += wi * -p.max(f64::MIN_POSITIVE).ln();
        residual[(i, y)] -= 1.0;
        let mut row = residual.row_mut(i);
        row *= wi;
    }
    loss *= scale;

    let mut grad = residual.t().dot(x);
    grad *= scale;

    // L2 on everything but the bias column.
    let d = weights.ncols() - 1;
    let mut penalty = 0.0;
    for ((r, c), g) in grad.indexed_iter_mut() {
        if c < d {
            let v = weights[(r, c)];
            penalty += v * v;
            *g += l2 * v;
        }
    }
    loss += 0.5 * l2 * penalty;
    (loss, grad)
}

fn gradient_step(
    weights: &mut Array2<f64>,
    x: &Array2<f64>,
    labels: &[usize],
    sample_weights: &[f64],
    config: &ClassifierConfig,
) {
    let (_, grad) = loss_and_gradient_aug(weights, x, labels, sample_weights, config.l2);
    weights.scaled_add(-config.learning_rate, &grad);
}

/// Weighted mean cross-entropy on the hold-out rows, without the L2 term.
fn holdout_loss(weights: &Array2<f64>, x: &Array2<f64>, labels: &[usize], sample_weights: &[f64]) -> f64 {
    let mut probs = x.dot(&weights.t());
    softmax_rows(&mut probs);
    let total_w: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    for (i, (&y, &wi)) in labels.iter().zip(sample_weights).enumerate() {
        loss += wi * -probs[(i, y)].max(f64::MIN_POSITIVE).ln();
    }
    loss / total_w
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Append the bias column and lift into an ndarray matrix.
fn augment(features: &[Vec<f64>], d: usize) -> Result<Array2<f64>, ClassifierError> {
    let n = features.len();
    let mut flat = Vec::with_capacity(n * (d + 1));
    for (row, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(ClassifierError::DimensionMismatch {
                row,
                got: f.len(),
                expected: d,
            });
        }
        flat.extend_from_slice(f);
        flat.push(1.0);
    }
    Array2::from_shape_vec((n, d + 1), flat)
        .map_err(|e| ClassifierError::Internal(e.to_string()))
}

/// Contract the engine trains against; lets other probabilistic models
/// slot in behind the same loop.
pub trait ClassifierBackend {
    type Model: TrainedModel;

    fn train(
        &self,
        features: &[Vec<f64>],
        pseudo_labels: &PredictionVector,
        config: &ClassifierConfig,
        label_space: &LabelSpace,
    ) -> Result<Self::Model, ClassifierError>;

    fn load(&self, blob: &[u8]) -> Result<Self::Model, ClassifierError>;
}

/// Contract for a fitted model: probability rows plus a self-describing
/// blob for persistence.
pub trait TrainedModel: Send + Sync {
    fn predict_proba(&self, features: &[Vec<f64>]) -> Result<ProbabilityMatrix, ClassifierError>;
    fn to_blob(&self) -> Vec<u8>;
    fn label_space_hash(&self) -> u64;
}

impl TrainedModel for TrainedClassifier {
    fn predict_proba(&self, features: &[Vec<f64>]) -> Result<ProbabilityMatrix, ClassifierError> {
        TrainedClassifier::predict_proba(self, features)
    }

    fn to_blob(&self) -> Vec<u8> {
        TrainedClassifier::to_blob(self)
    }

    fn label_space_hash(&self) -> u64 {
        TrainedClassifier::label_space_hash(self)
    }
}

/// The built-in logistic-regression backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticBackend;

impl ClassifierBackend for LogisticBackend {
    type Model = TrainedClassifier;

    fn train(
        &self,
        features: &[Vec<f64>],
        pseudo_labels: &PredictionVector,
        config: &ClassifierConfig,
        label_space: &LabelSpace,
    ) -> Result<Self::Model, ClassifierError> {
        train(features, pseudo_labels, config, label_space)
    }

    fn load(&self, blob: &[u8]) -> Result<Self::Model, ClassifierError> {
        TrainedClassifier::from_blob(blob)
    }
}
