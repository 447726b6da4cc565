//! Ranking, candidate-set construction, and threshold calibration.
//!
//! Four sampling strategies shrink a probability row into a candidate
//! label set: fixed-size top-k, cumulative-mass top-p, relative-threshold
//! min-p, and min-p-plus (min-p unioned with the sample's current LLM
//! prediction). [`find_optimal_threshold`] calibrates the min-p-plus
//! threshold so the weighted average candidate-set size lands on a target
//! dimensionality; the average is nonincreasing in p, so the search is a
//! bisection over a 1e-4 grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::class_weights;
use crate::types::{PredictionVector, ProbabilityMatrix};

/// Threshold grid resolution for [`find_optimal_threshold`].
const GRID_STEPS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("k = {k} out of range 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("k_target = {k_target} out of range 1..={k}")]
    BadKTarget { k_target: f64, k: usize },
    #[error("p = {0} outside [0, 1]")]
    BadP(f64),
    #[error("{what} length {got} does not match sample count {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("sample weight {value} at index {index} is not positive and finite")]
    BadWeight { index: usize, value: f64 },
    #[error("no samples to calibrate against")]
    EmptyInput,
    #[error("strategy {0:?} needs {1}")]
    MissingParam(Strategy, &'static str),
}

/// How candidate sets are carved out of a probability row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Fixed number of highest-probability labels.
    TopK,
    /// Shortest rank prefix reaching cumulative mass p.
    TopP,
    /// Labels within a fraction p of the row maximum.
    MinP,
    /// Min-p unioned with the current LLM prediction.
    MinPPlus,
    /// Min-p-plus with inverse-frequency sample weights in calibration.
    #[default]
    MinPPlusWeighted,
    /// All labels, ranked (no reduction).
    Full,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::TopK => "top_k",
            Strategy::TopP => "top_p",
            Strategy::MinP => "min_p",
            Strategy::MinPPlus => "min_p_plus",
            Strategy::MinPPlusWeighted => "min_p_plus_weighted",
            Strategy::Full => "full",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_k" => Ok(Strategy::TopK),
            "top_p" => Ok(Strategy::TopP),
            "min_p" => Ok(Strategy::MinP),
            "min_p_plus" => Ok(Strategy::MinPPlus),
            "min_p_plus_weighted" => Ok(Strategy::MinPPlusWeighted),
            "full" => Ok(Strategy::Full),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reduced label set for one sample: label ids in descending-probability
/// order (current prediction appended last when it missed the threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sample_index: usize,
    pub labels: Vec<usize>,
    /// Selection parameter that produced this set: p for probability
    /// strategies, k for top-k, 0 for full.
    pub threshold: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }
}

/// Parameters for [`filter_label_space`]. Which fields matter depends on
/// the strategy: `k` for top-k, `p` for the probability strategies,
/// `current_predictions` for the min-p-plus variants.
#[derive(Debug, Clone, Copy)]
pub struct SelectionParams<'a> {
    pub strategy: Strategy,
    pub k: usize,
    pub p: f64,
    pub current_predictions: Option<&'a PredictionVector>,
    pub weights: Option<&'a [f64]>,
}

/// Label ids sorted by descending probability, ties by ascending id.
pub fn rank(prob_row: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..prob_row.len()).collect();
    ids.sort_by(|&a, &b| {
        prob_row[b]
            .partial_cmp(&prob_row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

/// The k highest-probability labels.
pub fn top_k_select(prob_row: &[f64], k: usize) -> Result<CandidateSet, SelectionError> {
    if k == 0 || k > prob_row.len() {
        return Err(SelectionError::BadK {
            k,
            max: prob_row.len(),
        });
    }
    let mut labels = rank(prob_row);
    labels.truncate(k);
    Ok(CandidateSet {
        sample_index: 0,
        labels,
        threshold: k as f64,
    })
}

/// Shortest rank-order prefix whose cumulative probability reaches p.
/// Always yields at least the top label; labels with zero mass beyond the
/// prefix are never pulled in.
pub fn top_p_select(prob_row: &[f64], p: f64) -> CandidateSet {
    let ranked = rank(prob_row);
    let mut labels = Vec::new();
    let mut cum = 0.0;
    for id in ranked {
        labels.push(id);
        cum += prob_row[id];
        if cum >= p - 1e-12 {
            break;
        }
    }
    CandidateSet {
        sample_index: 0,
        labels,
        threshold: p,
    }
}

/// Labels whose probability is at least p times the row maximum, in rank
/// order. p = 0 keeps all labels; p = 1 keeps the argmax (and its ties).
pub fn min_p_select(prob_row: &[f64], p: f64) -> CandidateSet {
    let max = prob_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = p * max;
    let labels = rank(prob_row)
        .into_iter()
        .filter(|&id| prob_row[id] >= cutoff)
        .collect();
    CandidateSet {
        sample_index: 0,
        labels,
        threshold: p,
    }
}

/// Min-p selection unioned with the current LLM prediction: the
/// prediction keeps its rank position when it passes the threshold and is
/// appended last otherwise.
pub fn min_p_plus_select(prob_row: &[f64], p: f64, current_pred: usize) -> CandidateSet {
    let mut set = min_p_select(prob_row, p);
    if !set.contains(current_pred) {
        set.labels.push(current_pred);
    }
    set
}

/// Per-sample weights inversely proportional to the frequency of each
/// sample's current prediction: w_i = n / (K_observed * count(pred_i)).
/// The weights sum to n, keeping weighted average set sizes on the same
/// scale as unweighted ones.
pub fn sample_weights(current_preds: &PredictionVector, k: usize) -> Vec<f64> {
    let per_class = class_weights(current_preds, k);
    current_preds.preds.iter().map(|&c| per_class[c]).collect()
}

fn grid_p(g: u32) -> f64 {
    f64::from(g) / f64::from(GRID_STEPS)
}

/// Weighted mean of min-p-plus set sizes at threshold p.
fn weighted_mean_size(
    probs: &ProbabilityMatrix,
    preds: &[usize],
    weights: &[f64],
    p: f64,
) -> f64 {
    let mut total = 0.0;
    let mut total_w = 0.0;
    for (i, row) in probs.rows().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cutoff = p * max;
        let mut size = row.iter().filter(|&&v| v >= cutoff).count();
        if row[preds[i]] < cutoff {
            size += 1; // current prediction joins from outside the threshold
        }
        total += weights[i] * size as f64;
        total_w += weights[i];
    }
    total / total_w
}

/// Find the min-p-plus threshold whose weighted average candidate-set
/// size best matches `k_target`.
///
/// The average is nonincreasing in p, so a bisection over the 1e-4 grid
/// finds the crossing; of the two straddling grid points the one with the
/// smaller objective wins, ties going to the larger p (smaller sets).
/// When several grid points share the winning average, the largest such p
/// is returned.
pub fn find_optimal_threshold(
    probs: &ProbabilityMatrix,
    current_preds: &PredictionVector,
    k_target: f64,
    weights: &[f64],
) -> Result<f64, SelectionError> {
    let n = probs.n_rows();
    if n == 0 {
        return Err(SelectionError::EmptyInput);
    }
    let k = probs.k();
    if !(1.0..=k as f64).contains(&k_target) {
        return Err(SelectionError::BadKTarget { k_target, k });
    }
    if current_preds.len() != n {
        return Err(SelectionError::LengthMismatch {
            what: "current_preds",
            got: current_preds.len(),
            expected: n,
        });
    }
    if weights.len() != n {
        return Err(SelectionError::LengthMismatch {
            what: "weights",
            got: weights.len(),
            expected: n,
        });
    }
    if let Some((i, &w)) = weights
        .iter()
        .enumerate()
        .find(|(_, &w)| !(w.is_finite() && w > 0.0))
    {
        return Err(SelectionError::BadWeight { index: i, value: w });
    }

    let mean = |g: u32| weighted_mean_size(probs, &current_preds.preds, weights, grid_p(g));

    // Largest grid point whose average is still >= k_target. The average
    // at p=0 is K >= k_target, so `lo` is always well-defined.
    let winner = if mean(GRID_STEPS) >= k_target {
        GRID_STEPS
    } else {
        let (mut lo, mut hi) = (0u32, GRID_STEPS);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if mean(mid) >= k_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The optimum lies on one of the two straddling points; everything
        // below `lo` has an average at least as large, everything above
        // `hi` at most as small.
        let (obj_lo, obj_hi) = ((mean(lo) - k_target).abs(), (mean(hi) - k_target).abs());
        if obj_hi <= obj_lo {
            hi
        } else {
            lo
        }
    };

    // Extend across any plateau of identical averages toward larger p.
    let v = mean(winner);
    let (mut lo, mut hi) = (winner, GRID_STEPS);
    if mean(GRID_STEPS) >= v {
        lo = GRID_STEPS;
    } else {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if mean(mid) >= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(grid_p(lo))
}

/// Calibrate the strategy-specific parameter so the weighted average
/// candidate-set size approaches `k_target`. For top-k this is just the
/// rounded target; for full it is irrelevant. Returns the parameter to
/// pass to [`filter_label_space`].
pub fn calibrate_strategy(
    probs: &ProbabilityMatrix,
    current_preds: &PredictionVector,
    k_target: f64,
    weights: &[f64],
    strategy: Strategy,
) -> Result<f64, SelectionError> {
    let n = probs.n_rows();
    if n == 0 {
        return Err(SelectionError::EmptyInput);
    }
    let k = probs.k();
    if !(1.0..=k as f64).contains(&k_target) && strategy != Strategy::Full {
        return Err(SelectionError::BadKTarget { k_target, k });
    }
    match strategy {
        Strategy::Full => Ok(0.0),
        Strategy::TopK => Ok((k_target.round() as usize).clamp(1, k) as f64),
        Strategy::MinPPlus | Strategy::MinPPlusWeighted => {
            find_optimal_threshold(probs, current_preds, k_target, weights)
        }
        Strategy::MinP => {
            // Same bisection, with plain min-p sizes (no union).
            let mean = |g: u32| {
                let p = grid_p(g);
                let mut total = 0.0;
                let mut total_w = 0.0;
                for (i, row) in probs.rows().enumerate() {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let size = row.iter().filter(|&&v| v >= p * max).count();
                    total += weights[i] * size as f64;
                    total_w += weights[i];
                }
                total / total_w
            };
            Ok(grid_p(bisect_nonincreasing(&mean, k_target)))
        }
        Strategy::TopP => {
            // Top-p set sizes grow with p, so the bisection flips.
            let mean = |g: u32| {
                let p = grid_p(g);
                let mut total = 0.0;
                let mut total_w = 0.0;
                for (i, row) in probs.rows().enumerate() {
                    total += weights[i] * top_p_select(row, p).len() as f64;
                    total_w += weights[i];
                }
                total / total_w
            };
            if mean(0) >= k_target {
                return Ok(grid_p(0));
            }
            let (mut lo, mut hi) = (0u32, GRID_STEPS);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if mean(mid) >= k_target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (obj_lo, obj_hi) = ((mean(lo) - k_target).abs(), (mean(hi) - k_target).abs());
            Ok(grid_p(if obj_lo <= obj_hi { lo } else { hi }))
        }
    }
}

fn bisect_nonincreasing(mean: &dyn Fn(u32) -> f64, k_target: f64) -> u32 {
    if mean(GRID_STEPS) >= k_target {
        return GRID_STEPS;
    }
    let (mut lo, mut hi) = (0u32, GRID_STEPS);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mean(mid) >= k_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (obj_lo, obj_hi) = ((mean(lo) - k_target).abs(), (mean(hi) - k_target).abs());
    if obj_hi <= obj_lo {
        hi
    } else {
        lo
    }
}

/// Build one candidate set per sample using the configured strategy.
pub fn filter_label_space(
    probs: &ProbabilityMatrix,
    params: &SelectionParams,
) -> Result<Vec<CandidateSet>, SelectionError> {
    let n = probs.n_rows();
    if let Some(preds) = params.current_predictions {
        if preds.len() != n {
            return Err(SelectionError::LengthMismatch {
                what: "current_predictions",
                got: preds.len(),
                expected: n,
            });
        }
    }
    let mut sets = Vec::with_capacity(n);
    for (i, row) in probs.rows().enumerate() {
        let mut set = match params.strategy {
            Strategy::TopK => top_k_select(row, params.k)?,
            Strategy::TopP => {
                if !(0.0..=1.0).contains(&params.p) {
                    return Err(SelectionError::BadP(params.p));
                }
                top_p_select(row, params.p)
            }
            Strategy::MinP => {
                if !(0.0..=1.0).contains(&params.p) {
                    return Err(SelectionError::BadP(params.p));
                }
                min_p_select(row, params.p)
            }
            Strategy::MinPPlus | Strategy::MinPPlusWeighted => {
                if !(0.0..=1.0).contains(&params.p) {
                    return Err(SelectionError::BadP(params.p));
                }
                let preds = params.current_predictions.ok_or(SelectionError::MissingParam(
                    params.strategy,
                    "current_predictions",
                ))?;
                min_p_plus_select(row, params.p, preds.preds[i])
            }
            Strategy::Full => CandidateSet {
                sample_index: 0,
                labels: rank(row),
                threshold: 0.0,
            },
        };
        set.sample_index = i;
        sets.push(set);
    }
    Ok(sets)
}
