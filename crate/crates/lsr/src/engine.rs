//! The refinement loop and everything layered on it: majority voting,
//! self-consistency, distillation, and direct inference.
//!
//! One run works like this: the LLM labels every sample over the full
//! (shuffled) label list; a classifier trains on those pseudo-labels; its
//! calibrated probabilities shrink each sample's label list to a small
//! candidate set; the LLM re-labels over the candidates, and the cycle
//! repeats. The final answer is the per-sample majority vote across all
//! passes.
//!
//! Every iteration is persisted to the run directory before the next
//! starts — predictions stream batch by batch — so an interrupted run
//! resumes where it stopped and, in mock mode, reproduces the exact bytes
//! an uninterrupted run would have written (the event log excepted).

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierBackend, ClassifierConfig, ClassifierError, TrainedModel};
use crate::llm::{BatchContext, CasePrediction, LlmBackend, LlmConfig, LlmError};
use crate::metrics::MetricsError;
use crate::rng::{derive_seed, seeded_rng};
use crate::selection::{
    calibrate_strategy, filter_label_space, find_optimal_threshold, min_p_select, rank,
    sample_weights, CandidateSet, SelectionError, SelectionParams, Strategy,
};
use crate::types::{validate_dataset, Dataset, PredictionVector};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid run config: {0}")]
    BadConfig(String),
    #[error("run directory already holds a different config at {}", path.display())]
    ConfigMismatch { path: PathBuf },
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resume from {}: {detail}", path.display())]
    ResumeCorrupt { path: PathBuf, detail: String },
    #[error("majority vote over an empty history")]
    EmptyHistory,
    #[error("classifier was trained against a different label space")]
    LabelSpaceMismatch,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Desired average candidate-set size, or no reduction at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KTarget {
    /// Rank the full label space; never shrink it.
    Full,
    /// Calibrate selection toward this weighted average set size.
    Target(f64),
}

impl Serialize for KTarget {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            KTarget::Full => serializer.serialize_str("full"),
            KTarget::Target(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for KTarget {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(KTarget::Target(v)),
            Repr::Text(s) if s.eq_ignore_ascii_case("full") => Ok(KTarget::Full),
            Repr::Text(s) => s
                .parse::<f64>()
                .map(KTarget::Target)
                .map_err(|_| serde::de::Error::custom(format!("bad k_target {s:?}"))),
        }
    }
}

/// Full configuration of one refinement run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub k_target: KTarget,
    /// Number of refinement iterations after the initial pass; the run
    /// produces iterations + 1 prediction vectors.
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub classifier: ClassifierConfig,
    pub llm: LlmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k_target: KTarget::Target(2.0),
            iterations: 5,
            batch_size: 10,
            seed: 0,
            strategy: Strategy::MinPPlusWeighted,
            classifier: ClassifierConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

/// Everything recorded about one pass: the predictions made at t, the
/// candidate sets the LLM saw while making them (absent at t = 0), and
/// the classifier trained on those predictions afterwards.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub t: usize,
    pub predictions: PredictionVector,
    /// Selection parameter used to build this pass's candidate sets: p
    /// for the probability strategies, k for top-k. Absent at t = 0 and
    /// in full (no-reduction) mode.
    pub threshold_p: Option<f64>,
    /// Candidate sets shown to the LLM, in dataset order. Absent at t=0.
    pub candidate_sets: Option<Vec<CandidateSet>>,
    /// Serialized classifier trained on this pass's predictions.
    pub classifier_blob: Vec<u8>,
}

/// The complete trace of a run.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    pub final_predictions: PredictionVector,
}

/// One line of `iter_<t>/predictions.records`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct PredictionLine {
    id: String,
    label: usize,
    label_name: String,
    raw_label: String,
    rationale: String,
    candidates: Option<Vec<usize>>,
    fallback: bool,
}

/// Sidecar marking an iteration directory as fully written, and holding
/// the iteration-level selection parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct IterationMeta {
    t: usize,
    threshold_p: Option<f64>,
    complete: bool,
}

/// One line of `final.records`.
#[derive(Debug, Serialize, Deserialize)]
struct FinalLine {
    id: String,
    label: usize,
    label_name: String,
}

struct EventLog {
    file: Option<std::fs::File>,
}

impl EventLog {
    fn open(path: &Path) -> Result<Self, EngineError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_at(path))?;
        Ok(Self { file: Some(file) })
    }

    fn disabled() -> Self {
        Self { file: None }
    }

    fn log(&mut self, message: &str) {
        if let Some(file) = &mut self.file {
            // Event logging is best-effort; losing a line must not abort a run.
            let _ = writeln!(file, "{message}");
        }
    }
}

/// Per-sample most frequent label across passes; ties go to the label
/// whose most recent occurrence is latest.
pub fn majority_vote(history: &[&PredictionVector]) -> Result<PredictionVector, EngineError> {
    Ok(majority_vote_with_ties(history)?.0)
}

/// [`majority_vote`] plus the indices of samples whose vote was tied.
pub fn majority_vote_with_ties(
    history: &[&PredictionVector],
) -> Result<(PredictionVector, Vec<usize>), EngineError> {
    let first = history.first().ok_or(EngineError::EmptyHistory)?;
    let n = first.len();
    let mut preds = Vec::with_capacity(n);
    let mut ties = Vec::new();
    for i in 0..n {
        let mut count: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // label -> (votes, last t)
        for (t, pv) in history.iter().enumerate() {
            let label = pv.preds[i];
            let entry = count.entry(label).or_insert((0, 0));
            entry.0 += 1;
            entry.1 = t;
        }
        let top_votes = count.values().map(|&(votes, _)| votes).max().unwrap();
        if count.values().filter(|&&(votes, _)| votes == top_votes).count() > 1 {
            ties.push(i);
        }
        let (&label, _) = count
            .iter()
            .max_by_key(|(_, &(votes, last))| (votes, last))
            .unwrap();
        preds.push(label);
    }
    Ok((
        PredictionVector {
            preds,
            rationales: None,
        },
        ties,
    ))
}

struct BatchPlan {
    sample_indices: Vec<usize>,
}

fn make_plans(n: usize, batch_size: usize, seed: u64) -> Vec<BatchPlan> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut seeded_rng(seed));
    indices
        .chunks(batch_size)
        .map(|chunk| BatchPlan {
            sample_indices: chunk.to_vec(),
        })
        .collect()
}

fn shuffled_label_order(k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, "labels", 0)));
    order
}

/// Turn one batch's raw case predictions into persisted lines, resolving
/// unanswerable labels: with candidates the top-ranked candidate steps in;
/// on the first pass the batch's own majority answer (or the first label
/// in prompt order) does.
fn resolve_batch(
    case_predictions: &[CasePrediction],
    plan: &BatchPlan,
    dataset: &Dataset,
    suggestions: Option<&[Vec<usize>]>,
    label_order: &[usize],
    events: &mut EventLog,
) -> Result<Vec<PredictionLine>, EngineError> {
    if case_predictions.len() != plan.sample_indices.len()
        || case_predictions
            .iter()
            .enumerate()
            .any(|(j, p)| p.case_index != j)
    {
        return Err(EngineError::Llm(LlmError::Parse(
            "backend returned misaligned case indices".into(),
        )));
    }
    let resolved_in_batch: Vec<usize> = case_predictions
        .iter()
        .filter_map(|p| p.resolved)
        .collect();
    let batch_mode = || -> usize {
        if resolved_in_batch.is_empty() {
            return label_order[0];
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &label in &resolved_in_batch {
            *counts.entry(label).or_default() += 1;
        }
        counts
            .iter()
            .max_by_key(|(_, &votes)| votes)
            .map(|(&label, _)| label)
            .unwrap()
    };

    let mut lines = Vec::with_capacity(plan.sample_indices.len());
    for (j, prediction) in case_predictions.iter().enumerate() {
        let sample = plan.sample_indices[j];
        let record = &dataset.records[sample];
        let candidates = suggestions.map(|s| s[sample].clone());
        let (label, fallback) = match prediction.resolved {
            Some(id) => (id, false),
            None => {
                let substitute = match &candidates {
                    Some(set) => set[0],
                    None => batch_mode(),
                };
                events.log(&format!(
                    "fallback: sample {} raw label {:?} unresolved, using {}",
                    record.id,
                    prediction.raw_label,
                    dataset.label_space.name(substitute).unwrap_or("?")
                ));
                (substitute, true)
            }
        };
        lines.push(PredictionLine {
            id: record.id.clone(),
            label,
            label_name: dataset
                .label_space
                .name(label)
                .unwrap_or_default()
                .to_string(),
            raw_label: prediction.raw_label.clone(),
            rationale: prediction.analysis.clone(),
            candidates,
            fallback,
        });
    }
    Ok(lines)
}

/// Dispatch batches `start_batch..` to the backend with bounded
/// concurrency, returning their resolved lines in batch order. When an
/// appender is given, each batch's lines hit disk as soon as every
/// earlier batch has; on failure the contiguous prefix of successful
/// batches is still persisted.
#[allow(clippy::too_many_arguments)]
fn dispatch_batches(
    llm: &dyn LlmBackend,
    dataset: &Dataset,
    plans: &[BatchPlan],
    start_batch: usize,
    label_order: &[usize],
    suggestions: Option<&[Vec<usize>]>,
    draw: u64,
    mut appender: Option<&mut Appender>,
    events: &mut EventLog,
) -> Result<Vec<PredictionLine>, EngineError> {
    if start_batch >= plans.len() {
        return Ok(Vec::new());
    }
    let workers = llm.max_in_flight().max(1).min(plans.len() - start_batch);
    let next = AtomicUsize::new(start_batch);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<CasePrediction>, LlmError>)>();

    let mut collected: Vec<PredictionLine> = Vec::new();
    let mut outcome: Result<(), EngineError> = Ok(());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let abort = &abort;
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let b = next.fetch_add(1, Ordering::SeqCst);
                if b >= plans.len() {
                    break;
                }
                let plan = &plans[b];
                let context = BatchContext {
                    records: plan
                        .sample_indices
                        .iter()
                        .map(|&i| &dataset.records[i])
                        .collect(),
                    label_order,
                    suggestions: suggestions
                        .map(|s| plan.sample_indices.iter().map(|&i| s[i].clone()).collect()),
                    draw,
                };
                let result = llm.classify_batch(&dataset.label_space, &context);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((b, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Result<Vec<CasePrediction>, LlmError>> = BTreeMap::new();
        let mut next_write = start_batch;
        let mut first_error: Option<(usize, LlmError)> = None;
        while let Ok((b, result)) = rx.recv() {
            match result {
                Ok(v) => {
                    pending.insert(b, Ok(v));
                }
                Err(e) => {
                    if first_error.as_ref().map_or(true, |(fb, _)| b < *fb) {
                        first_error = Some((b, e));
                    }
                }
            }
            while let Some(Ok(case_preds)) = pending.get(&next_write) {
                if let Some((fb, _)) = &first_error {
                    if next_write >= *fb {
                        break;
                    }
                }
                let lines = match resolve_batch(
                    case_preds,
                    &plans[next_write],
                    dataset,
                    suggestions,
                    label_order,
                    events,
                ) {
                    Ok(lines) => lines,
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        if outcome.is_ok() {
                            outcome = Err(e);
                        }
                        pending.remove(&next_write);
                        break;
                    }
                };
                if let Some(appender) = appender.as_deref_mut() {
                    if let Err(e) = appender.append(&lines) {
                        abort.store(true, Ordering::SeqCst);
                        if outcome.is_ok() {
                            outcome = Err(e);
                        }
                        break;
                    }
                }
                collected.extend(lines);
                pending.remove(&next_write);
                next_write += 1;
            }
        }
        if outcome.is_ok() {
            if let Some((_, e)) = first_error {
                outcome = Err(EngineError::Llm(e));
            }
        }
    });

    outcome.map(|()| collected)
}

struct Appender {
    file: std::fs::File,
    path: PathBuf,
}

impl Appender {
    fn open(path: &Path) -> Result<Self, EngineError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_at(path))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn append(&mut self, lines: &[PredictionLine]) -> Result<(), EngineError> {
        let mut buffer = String::new();
        for line in lines {
            buffer.push_str(&serde_json::to_string(line).expect("prediction line serializes"));
            buffer.push('\n');
        }
        self.file
            .write_all(buffer.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(io_at(&self.path))
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            // A torn trailing line from an interrupted write is not an
            // error; everything before it is intact.
            Err(_) => break,
        }
    }
    Ok(out)
}

fn truncate_jsonl(path: &Path, keep_lines: usize) -> Result<(), EngineError> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() > keep_lines {
        let mut kept = lines[..keep_lines].join("\n");
        if keep_lines > 0 {
            kept.push('\n');
        }
        std::fs::write(path, kept).map_err(io_at(path))?;
    }
    Ok(())
}

/// Load the longest prefix of whole batches already persisted for an
/// iteration, truncating any trailing partial or mismatched lines.
fn load_batch_prefix(
    path: &Path,
    plans: &[BatchPlan],
    dataset: &Dataset,
) -> Result<Vec<PredictionLine>, EngineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let lines: Vec<PredictionLine> = read_jsonl(path)?;
    let k = dataset.label_space.len();
    let mut kept = 0usize;
    'batches: for plan in plans {
        let end = kept + plan.sample_indices.len();
        if end > lines.len() {
            break;
        }
        for (line, &sample) in lines[kept..end].iter().zip(&plan.sample_indices) {
            if line.id != dataset.records[sample].id || line.label >= k {
                break 'batches;
            }
        }
        kept = end;
    }
    truncate_jsonl(path, kept)?;
    Ok(lines.into_iter().take(kept).collect())
}

struct LoadedIteration {
    record: IterationRecord,
}

/// Reconstruct a finished iteration from disk, or return None when it is
/// absent or incomplete.
fn load_complete_iteration(
    iter_dir: &Path,
    t: usize,
    dataset: &Dataset,
    id_index: &HashMap<&str, usize>,
) -> Result<Option<LoadedIteration>, EngineError> {
    let meta_path = iter_dir.join("iteration.meta");
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: IterationMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(io_at(&meta_path))?,
    )
    .map_err(|e| EngineError::ResumeCorrupt {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    if !meta.complete || meta.t != t {
        return Ok(None);
    }
    let predictions_path = iter_dir.join("predictions.records");
    let lines: Vec<PredictionLine> = read_jsonl(&predictions_path)?;
    let n = dataset.len();
    if lines.len() != n {
        return Err(EngineError::ResumeCorrupt {
            path: predictions_path,
            detail: format!("{} prediction lines for {} samples", lines.len(), n),
        });
    }
    let k = dataset.label_space.len();
    let mut preds: Vec<Option<usize>> = vec![None; n];
    let mut rationales: Vec<String> = vec![String::new(); n];
    let mut candidates: Vec<Option<Vec<usize>>> = vec![None; n];
    for line in &lines {
        let Some(&i) = id_index.get(line.id.as_str()) else {
            return Err(EngineError::ResumeCorrupt {
                path: predictions_path,
                detail: format!("unknown record id {:?}", line.id),
            });
        };
        if preds[i].is_some() || line.label >= k {
            return Err(EngineError::ResumeCorrupt {
                path: predictions_path,
                detail: format!("duplicate or invalid line for id {:?}", line.id),
            });
        }
        preds[i] = Some(line.label);
        rationales[i] = line.rationale.clone();
        candidates[i] = line.candidates.clone();
    }
    let preds: Vec<usize> = preds.into_iter().map(Option::unwrap).collect();
    let predictions = PredictionVector {
        preds,
        rationales: Some(rationales),
    };
    let candidate_sets = if candidates.iter().all(Option::is_some) {
        Some(
            candidates
                .into_iter()
                .enumerate()
                .map(|(i, labels)| CandidateSet {
                    sample_index: i,
                    labels: labels.unwrap(),
                    threshold: meta.threshold_p.unwrap_or(0.0),
                })
                .collect(),
        )
    } else {
        None
    };
    let blob_path = iter_dir.join("classifier.blob");
    let classifier_blob = std::fs::read(&blob_path).map_err(io_at(&blob_path))?;
    Ok(Some(LoadedIteration {
        record: IterationRecord {
            t,
            predictions,
            threshold_p: meta.threshold_p,
            candidate_sets,
            classifier_blob,
        },
    }))
}

fn lines_to_predictions(
    lines: &[PredictionLine],
    dataset: &Dataset,
    id_index: &HashMap<&str, usize>,
) -> Result<PredictionVector, EngineError> {
    let n = dataset.len();
    let mut preds: Vec<Option<usize>> = vec![None; n];
    let mut rationales: Vec<String> = vec![String::new(); n];
    for line in lines {
        let i = *id_index.get(line.id.as_str()).expect("own ids");
        preds[i] = Some(line.label);
        rationales[i] = line.rationale.clone();
    }
    debug_assert!(preds.iter().all(Option::is_some));
    Ok(PredictionVector {
        preds: preds.into_iter().map(Option::unwrap).collect(),
        rationales: Some(rationales),
    })
}

/// Selection phase for iteration t >= 1: probabilities from the previous
/// classifier, calibration toward the k target, and per-sample candidate
/// sets.
fn build_selection(
    model: &impl TrainedModel,
    features: &[Vec<f64>],
    previous: &PredictionVector,
    config: &RunConfig,
    k: usize,
) -> Result<(Option<f64>, Vec<CandidateSet>), EngineError> {
    let probs = model.predict_proba(features)?;
    let full_mode = matches!(config.k_target, KTarget::Full) || config.strategy == Strategy::Full;
    if full_mode {
        let sets = filter_label_space(
            &probs,
            &SelectionParams {
                strategy: Strategy::Full,
                k: 0,
                p: 0.0,
                current_predictions: Some(previous),
                weights: None,
            },
        )?;
        return Ok((None, sets));
    }
    let KTarget::Target(k_target) = config.k_target else {
        unreachable!("full handled above")
    };
    let weights = match config.strategy {
        Strategy::MinPPlusWeighted => sample_weights(previous, k),
        _ => vec![1.0; features.len()],
    };
    let param = calibrate_strategy(&probs, previous, k_target, &weights, config.strategy)?;
    let sets = filter_label_space(
        &probs,
        &SelectionParams {
            strategy: config.strategy,
            k: param as usize,
            p: param,
            current_predictions: Some(previous),
            weights: Some(&weights),
        },
    )?;
    Ok((Some(param), sets))
}

fn validate_run_inputs(dataset: &Dataset, config: &RunConfig) -> Result<(), EngineError> {
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(EngineError::InvalidDataset(
            violations
                .iter()
                .take(3)
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    if config.batch_size == 0 {
        return Err(EngineError::BadConfig("batch_size must be >= 1".into()));
    }
    if let KTarget::Target(v) = config.k_target {
        let k = dataset.label_space.len();
        if !(1.0..=k as f64).contains(&v) {
            return Err(EngineError::BadConfig(format!(
                "k_target {v} outside 1..={k}"
            )));
        }
    }
    config.llm.validate()?;
    Ok(())
}

/// Stages that train a classifier need numeric features; catching a
/// zero-width feature matrix here beats silently fitting a bias-only
/// model when ingest directives left every column semantic.
fn require_features(dataset: &Dataset) -> Result<(), EngineError> {
    if dataset.d == 0 {
        return Err(EngineError::InvalidDataset(
            "dataset has no numeric feature columns; the classifier stage needs features \
             (check the ingest column directives)"
                .into(),
        ));
    }
    Ok(())
}

/// Run the full refinement loop, persisting every artifact under
/// `run_dir`. Rerunning over the same directory with the same config
/// resumes (or no-ops) instead of re-querying finished work.
pub fn run_lsr<B: ClassifierBackend>(
    dataset: &Dataset,
    config: &RunConfig,
    llm: &dyn LlmBackend,
    backend: &B,
    run_dir: &Path,
) -> Result<RunHistory, EngineError> {
    validate_run_inputs(dataset, config)?;
    require_features(dataset)?;
    std::fs::create_dir_all(run_dir).map_err(io_at(run_dir))?;

    // Config snapshot: write on first run, verify on resume.
    let config_path = run_dir.join("run.config");
    let rendered = toml::to_string_pretty(config)
        .map_err(|e| EngineError::BadConfig(format!("unserializable config: {e}")))?;
    if config_path.exists() {
        let existing = std::fs::read_to_string(&config_path).map_err(io_at(&config_path))?;
        if existing != rendered {
            return Err(EngineError::ConfigMismatch { path: config_path });
        }
    } else {
        std::fs::write(&config_path, &rendered).map_err(io_at(&config_path))?;
    }

    let mut events = EventLog::open(&run_dir.join("events.log"))?;
    events.log(&format!(
        "run: seed={} iterations={} batch_size={} strategy={}",
        config.seed, config.iterations, config.batch_size, config.strategy
    ));

    let n = dataset.len();
    let k = dataset.label_space.len();
    let features = dataset.feature_matrix();
    let truth = dataset.truth_vector();
    let id_index: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let label_order = shuffled_label_order(k, config.seed);
    let metrics_path = run_dir.join("metrics.records");

    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.iterations + 1);
    let mut prev_model: Option<B::Model> = None;

    for t in 0..=config.iterations {
        let iter_dir = run_dir.join(format!("iter_{t}"));
        std::fs::create_dir_all(&iter_dir).map_err(io_at(&iter_dir))?;

        if let Some(loaded) = load_complete_iteration(&iter_dir, t, dataset, &id_index)? {
            events.log(&format!("resume: iteration {t} loaded from disk"));
            prev_model = Some(backend.load(&loaded.record.classifier_blob)?);
            records.push(loaded.record);
            continue;
        }

        // This iteration runs fresh (possibly from a partial batch
        // prefix); any metrics rows at or beyond t are stale.
        if truth.is_some() {
            truncate_jsonl(&metrics_path, t)?;
        }

        let (threshold_p, suggestions, candidate_sets) = if t == 0 {
            (None, None, None)
        } else {
            let model = prev_model.as_ref().expect("previous iteration trained");
            let previous = &records[t - 1].predictions;
            let (param, sets) = build_selection(model, &features, previous, config, k)?;
            let suggestion_lists: Vec<Vec<usize>> =
                sets.iter().map(|s| s.labels.clone()).collect();
            (param, Some(suggestion_lists), Some(sets))
        };

        let plans = make_plans(n, config.batch_size, derive_seed(config.seed, "batches", t as u64));
        let predictions_path = iter_dir.join("predictions.records");
        let prefix = load_batch_prefix(&predictions_path, &plans, dataset)?;
        let prefix_batches = {
            let mut covered = 0usize;
            let mut batches = 0usize;
            for plan in &plans {
                if covered + plan.sample_indices.len() <= prefix.len() {
                    covered += plan.sample_indices.len();
                    batches += 1;
                } else {
                    break;
                }
            }
            batches
        };
        if prefix_batches > 0 {
            events.log(&format!(
                "resume: iteration {t} reusing {prefix_batches} persisted batches"
            ));
        }

        let mut appender = Appender::open(&predictions_path)?;
        let rest = dispatch_batches(
            llm,
            dataset,
            &plans,
            prefix_batches,
            &label_order,
            suggestions.as_deref(),
            t as u64,
            Some(&mut appender),
            &mut events,
        )?;
        let mut lines = prefix;
        lines.extend(rest);
        let predictions = lines_to_predictions(&lines, dataset, &id_index)?;

        let mut clf_config = config.classifier.clone();
        clf_config.seed = derive_seed(config.seed, "clf", t as u64);
        let model = backend.train(&features, &predictions, &clf_config, &dataset.label_space)?;
        let blob = model.to_blob();
        let blob_path = iter_dir.join("classifier.blob");
        std::fs::write(&blob_path, &blob).map_err(io_at(&blob_path))?;

        records.push(IterationRecord {
            t,
            predictions,
            threshold_p,
            candidate_sets,
            classifier_blob: blob,
        });

        if let Some(truth) = &truth {
            let rows = crate::metrics::iteration_report(&records, truth, k)?;
            let row = rows.last().expect("one row per iteration");
            let mut line = serde_json::to_string(row).expect("report row serializes");
            line.push('\n');
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&metrics_path)
                .map_err(io_at(&metrics_path))?;
            file.write_all(line.as_bytes()).map_err(io_at(&metrics_path))?;
        }

        let meta = IterationMeta {
            t,
            threshold_p,
            complete: true,
        };
        let meta_path = iter_dir.join("iteration.meta");
        std::fs::write(
            &meta_path,
            serde_json::to_string(&meta).expect("meta serializes"),
        )
        .map_err(io_at(&meta_path))?;

        events.log(&format!(
            "iteration {t}: complete (threshold={threshold_p:?})"
        ));
        prev_model = Some(model);
    }

    let views: Vec<&PredictionVector> = records.iter().map(|r| &r.predictions).collect();
    let (final_predictions, ties) = majority_vote_with_ties(&views)?;
    for &i in &ties {
        events.log(&format!(
            "vote: tie on sample {} resolved to {}",
            dataset.records[i].id,
            dataset
                .label_space
                .name(final_predictions.preds[i])
                .unwrap_or("?")
        ));
    }
    let final_path = run_dir.join("final.records");
    let mut buffer = String::new();
    for (i, record) in dataset.records.iter().enumerate() {
        let line = FinalLine {
            id: record.id.clone(),
            label: final_predictions.preds[i],
            label_name: dataset
                .label_space
                .name(final_predictions.preds[i])
                .unwrap_or_default()
                .to_string(),
        };
        buffer.push_str(&serde_json::to_string(&line).expect("final line serializes"));
        buffer.push('\n');
    }
    std::fs::write(&final_path, buffer).map_err(io_at(&final_path))?;

    Ok(RunHistory {
        config: config.clone(),
        records,
        final_predictions,
    })
}

/// Load a finished run back from its directory. Every iteration named by
/// the persisted config must be complete; a gap is reported by number.
pub fn load_run(run_dir: &Path, dataset: &Dataset) -> Result<RunHistory, EngineError> {
    let config_path = run_dir.join("run.config");
    let rendered = std::fs::read_to_string(&config_path).map_err(io_at(&config_path))?;
    let config: RunConfig =
        toml::from_str(&rendered).map_err(|e| EngineError::ResumeCorrupt {
            path: config_path.clone(),
            detail: e.to_string(),
        })?;
    let id_index: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut records = Vec::with_capacity(config.iterations + 1);
    for t in 0..=config.iterations {
        let iter_dir = run_dir.join(format!("iter_{t}"));
        match load_complete_iteration(&iter_dir, t, dataset, &id_index)? {
            Some(loaded) => records.push(loaded.record),
            None => {
                return Err(EngineError::ResumeCorrupt {
                    path: iter_dir,
                    detail: format!("iteration {t} is missing or incomplete"),
                })
            }
        }
    }
    let views: Vec<&PredictionVector> = records.iter().map(|r| &r.predictions).collect();
    let final_predictions = majority_vote(&views)?;
    Ok(RunHistory {
        config,
        records,
        final_predictions,
    })
}

/// Repeated independent full-label-space passes aggregated by majority
/// vote (ties to the latest resample). With a zero temperature the mock
/// backend redraws nothing, so every resample is identical.
pub fn self_consistency(
    dataset: &Dataset,
    config: &RunConfig,
    llm: &dyn LlmBackend,
    resamples: usize,
    temperature: f64,
) -> Result<PredictionVector, EngineError> {
    validate_run_inputs(dataset, config)?;
    if resamples == 0 {
        return Err(EngineError::BadConfig("resamples must be >= 1".into()));
    }
    let k = dataset.label_space.len();
    let label_order = shuffled_label_order(k, config.seed);
    let mut passes = Vec::with_capacity(resamples);
    let id_index: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    for r in 0..resamples {
        let plans = make_plans(
            dataset.len(),
            config.batch_size,
            derive_seed(config.seed, "sc", r as u64),
        );
        let draw = if temperature > 0.0 { r as u64 } else { 0 };
        let mut events = EventLog::disabled();
        let lines = dispatch_batches(
            llm,
            dataset,
            &plans,
            0,
            &label_order,
            None,
            draw,
            None,
            &mut events,
        )?;
        passes.push(lines_to_predictions(&lines, dataset, &id_index)?);
    }
    let views: Vec<&PredictionVector> = passes.iter().collect();
    majority_vote(&views)
}

/// Train a single classifier on the whole run: every sample appears once
/// per iteration, labeled with that iteration's prediction.
pub fn distill<B: ClassifierBackend>(
    dataset: &Dataset,
    history: &[PredictionVector],
    config: &ClassifierConfig,
    backend: &B,
) -> Result<B::Model, EngineError> {
    if history.is_empty() {
        return Err(EngineError::EmptyHistory);
    }
    require_features(dataset)?;
    let features = dataset.feature_matrix();
    let n = features.len();
    let mut replicated = Vec::with_capacity(n * history.len());
    let mut labels = Vec::with_capacity(n * history.len());
    for pass in history {
        if pass.len() != n {
            return Err(EngineError::BadConfig(format!(
                "history pass has {} predictions for {} samples",
                pass.len(),
                n
            )));
        }
        replicated.extend(features.iter().cloned());
        labels.extend(pass.preds.iter().copied());
    }
    let pseudo = PredictionVector {
        preds: labels,
        rationales: None,
    };
    Ok(backend.train(&replicated, &pseudo, config, &dataset.label_space)?)
}

/// How [`direct_infer`] deploys a distilled classifier.
pub enum InferMode<'a> {
    /// Argmax of the classifier's probabilities (ties to the lower id).
    Plain,
    /// Shrink each sample to its calibrated candidate set, then ask the
    /// LLM once over those candidates.
    WithLlm {
        llm: &'a dyn LlmBackend,
        k_target: f64,
        batch_size: usize,
        seed: u64,
    },
}

/// What [`direct_infer`] produced, with the selection telemetry the
/// LLM-assisted mode generates along the way.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub predictions: PredictionVector,
    /// Calibrated threshold of the LLM-assisted mode; absent in plain mode.
    pub threshold_p: Option<f64>,
    /// Weighted mean candidate-set size at that threshold; absent in
    /// plain mode.
    pub mean_candidate_size: Option<f64>,
}

/// Classify new samples with a trained classifier, optionally adding one
/// LLM pass over each sample's reduced candidate set.
pub fn direct_infer<M: TrainedModel>(
    model: &M,
    dataset: &Dataset,
    mode: InferMode,
) -> Result<InferOutcome, EngineError> {
    if model.label_space_hash() != dataset.label_space.hash64() {
        return Err(EngineError::LabelSpaceMismatch);
    }
    let features = dataset.feature_matrix();
    let probs = model.predict_proba(&features)?;
    let argmax: Vec<usize> = probs.rows().map(|row| rank(row)[0]).collect();
    let argmax = PredictionVector {
        preds: argmax,
        rationales: None,
    };
    match mode {
        InferMode::Plain => Ok(InferOutcome {
            predictions: argmax,
            threshold_p: None,
            mean_candidate_size: None,
        }),
        InferMode::WithLlm {
            llm,
            k_target,
            batch_size,
            seed,
        } => {
            let k = dataset.label_space.len();
            let weights = sample_weights(&argmax, k);
            let p = find_optimal_threshold(&probs, &argmax, k_target, &weights)?;
            let suggestions: Vec<Vec<usize>> = probs
                .rows()
                .map(|row| min_p_select(row, p).labels)
                .collect();
            let mean_size = {
                let total: f64 = suggestions
                    .iter()
                    .zip(&weights)
                    .map(|(s, w)| w * s.len() as f64)
                    .sum();
                total / weights.iter().sum::<f64>()
            };
            let plans = make_plans(dataset.len(), batch_size.max(1), derive_seed(seed, "batches", 0));
            let label_order = shuffled_label_order(k, seed);
            let mut events = EventLog::disabled();
            let lines = dispatch_batches(
                llm,
                dataset,
                &plans,
                0,
                &label_order,
                Some(&suggestions),
                0,
                None,
                &mut events,
            )?;
            let id_index: HashMap<&str, usize> = dataset
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| (r.id.as_str(), i))
                .collect();
            Ok(InferOutcome {
                predictions: lines_to_predictions(&lines, dataset, &id_index)?,
                threshold_p: Some(p),
                mean_candidate_size: Some(mean_size),
            })
        }
    }
}
