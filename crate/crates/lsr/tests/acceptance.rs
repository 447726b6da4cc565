//! Acceptance suite: ten numbered properties of the pipeline, each checked
//! against an independent oracle or a frozen scenario margin. Every test
//! prints a single `acceptance NN <name>: PASS/FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`); the libtest result line
//! doubles as the machine-readable verdict.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use common::{Scripted, StubServer};
use lsr::classifier::{loss_and_gradient, train, ClassifierConfig, LogisticBackend};
use lsr::engine::{distill, run_lsr, KTarget, RunConfig};
use lsr::llm::{
    BatchContext, CasePrediction, LiveClient, LlmBackend, LlmConfig, LlmError, LlmMode, MockLlm,
    MockParams,
};
use lsr::metrics::{hit_at_k, macro_f1};
use lsr::rng::{derive_seed, seeded_rng};
use lsr::selection::{
    find_optimal_threshold, min_p_plus_select, min_p_select, top_k_select, top_p_select,
};
use lsr::synth::{generate, generate_with_noise_seed, SynthSpec};
use lsr::types::{Dataset, LabelSpace, PredictionVector, ProbabilityMatrix, SampleRecord};
use rand::Rng;

fn verdict(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {number:02} {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {number} ({name}) failed: {detail}");
}

fn random_row(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().max(1e-9)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Brute-force ranking: repeatedly pick the highest-probability label not
/// yet chosen, smallest id first on ties.
fn oracle_order(row: &[f64]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..row.len()).collect();
    let mut out = Vec::with_capacity(row.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if row[remaining[i]] > row[remaining[best]] {
                best = i;
            }
        }
        out.push(remaining.remove(best));
    }
    out
}

#[test]
fn criterion_01_selection_oracle_equivalence() {
    let mut rng = seeded_rng(derive_seed(2024, "acceptance", 1));
    let mut mismatches: Vec<String> = Vec::new();
    for case in 0..1000 {
        let k = rng.gen_range(2..=12);
        let row = random_row(&mut rng, k);
        let order = oracle_order(&row);
        let take = rng.gen_range(1..=k);
        let p: f64 = rng.gen();
        let prev = rng.gen_range(0..k);

        let got_top_k = top_k_select(&row, take).unwrap().labels;
        if got_top_k != order[..take] {
            mismatches.push(format!("case {case}: top_k"));
        }

        let mut cum = 0.0;
        let mut want_top_p = Vec::new();
        for &id in &order {
            want_top_p.push(id);
            cum += row[id];
            if cum >= p - 1e-12 {
                break;
            }
        }
        if top_p_select(&row, p).labels != want_top_p {
            mismatches.push(format!("case {case}: top_p"));
        }

        let max = row[order[0]];
        let cutoff = p * max;
        let want_min_p: Vec<usize> = order.iter().copied().filter(|&i| row[i] >= cutoff).collect();
        if min_p_select(&row, p).labels != want_min_p {
            mismatches.push(format!("case {case}: min_p"));
        }

        let mut want_plus = want_min_p.clone();
        if !want_plus.contains(&prev) {
            want_plus.push(prev);
        }
        if min_p_plus_select(&row, p, prev).labels != want_plus {
            mismatches.push(format!("case {case}: min_p_plus"));
        }
    }
    verdict(
        1,
        "selection-oracle-equivalence",
        mismatches.is_empty(),
        &format!(
            "4 strategies x 1000 random rows (K <= 12), exact; mismatches: {:?}",
            &mismatches[..mismatches.len().min(5)]
        ),
    );
}

#[test]
fn criterion_02_threshold_search_matches_exhaustive_grid() {
    const STEPS: u32 = 10_000;
    let mut rng = seeded_rng(derive_seed(2024, "acceptance", 2));
    let targets = [1.5, 2.0, 3.0, 5.0];
    let mut searched = 0usize;
    let mut worst_gap = 0i64;
    let mut gap_failures = 0usize;
    let mut mean_misses = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..=100);
        let k = rng.gen_range(2..=20);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_row(&mut rng, k)).collect();
        let pred_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();

        // Exhaustive objective curve, replicating the library's arithmetic
        // (same cutoff expression, same summation order).
        let maxes: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mean_at = |p: f64| -> f64 {
            let mut total = 0.0;
            let mut total_w = 0.0;
            for (i, row) in rows.iter().enumerate() {
                let cutoff = p * maxes[i];
                let mut size = row.iter().filter(|&&v| v >= cutoff).count();
                if row[pred_ids[i]] < cutoff {
                    size += 1;
                }
                total += 1.0 * size as f64;
                total_w += 1.0;
            }
            total / total_w
        };
        let curve: Vec<f64> = (0..=STEPS)
            .map(|g| mean_at(f64::from(g) / f64::from(STEPS)))
            .collect();

        let probs = ProbabilityMatrix::new(rows.clone()).unwrap();
        let preds = PredictionVector::new(pred_ids.clone(), k).unwrap();
        let weights = vec![1.0; n];
        for &target in &targets {
            if target > k as f64 {
                continue;
            }
            let p = find_optimal_threshold(&probs, &preds, target, &weights).unwrap();
            let g = (p * f64::from(STEPS)).round() as i64;

            let mut best_obj = f64::INFINITY;
            let mut best_g = 0i64;
            for (gi, &m) in curve.iter().enumerate() {
                let obj = (m - target).abs();
                if obj <= best_obj {
                    best_obj = obj;
                    best_g = gi as i64; // <= keeps the largest argmin
                }
            }
            searched += 1;
            let gap = (g - best_g).abs();
            worst_gap = worst_gap.max(gap);
            if gap > 1 {
                gap_failures += 1;
            }
            let achieved = (curve[g as usize] - target).abs();
            if best_obj <= 0.25 && achieved > 0.25 + 1e-12 {
                mean_misses += 1;
            }
        }
    }
    verdict(
        2,
        "threshold-search-vs-exhaustive",
        gap_failures == 0 && mean_misses == 0,
        &format!(
            "{searched} searches over 200 matrices; worst distance from the exhaustive \
             optimum: {worst_gap} grid step(s); mean within ±0.25 whenever the grid optimum is \
             ({mean_misses} misses)"
        ),
    );
}

#[test]
fn criterion_03_min_p_plus_hit_rate_dominates_min_p() {
    let mut rng = seeded_rng(derive_seed(2024, "acceptance", 3));
    let mut hits_plain = 0usize;
    let mut hits_plus = 0usize;
    let mut law_violations = 0usize;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=12);
        let row = random_row(&mut rng, k);
        let p: f64 = rng.gen();
        let prev = rng.gen_range(0..k);
        let truth = rng.gen_range(0..k);
        let plain = min_p_select(&row, p);
        let plus = min_p_plus_select(&row, p, prev);
        if !plain.labels.iter().all(|&l| plus.contains(l)) {
            law_violations += 1; // plus must be a superset of plain
        }
        if plain.contains(truth) && !plus.contains(truth) {
            law_violations += 1;
        }
        hits_plain += usize::from(plain.contains(truth));
        hits_plus += usize::from(plus.contains(truth));
    }
    verdict(
        3,
        "hit-rate-ordering",
        law_violations == 0 && hits_plus >= hits_plain,
        &format!(
            "hit(min_p_plus) {hits_plus}/1000 >= hit(min_p) {hits_plain}/1000 >= 0; \
             superset law exact on every instance"
        ),
    );
}

/// Independent confusion-matrix implementation of the macro-averaged F1.
fn oracle_macro_f1(preds: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut f1s = Vec::with_capacity(k);
    for c in 0..k {
        let tp = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count();
        let fp = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t != c)
            .count();
        let fn_ = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p != c && t == c)
            .count();
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        f1s.push(if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        });
    }
    f1s.iter().sum::<f64>() / k as f64
}

#[test]
fn criterion_04_metric_oracles() {
    let mut rng = seeded_rng(derive_seed(2024, "acceptance", 4));
    let mut macro_mismatches = 0usize;
    let mut hit_mismatches = 0usize;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=8);
        let n = rng.gen_range(1..=50);
        let pred_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let truth_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let preds = PredictionVector::new(pred_ids.clone(), k).unwrap();
        let truth = PredictionVector::new(truth_ids.clone(), k).unwrap();
        let got = macro_f1(&preds, &truth, k).unwrap().macro_f1;
        if got != oracle_macro_f1(&pred_ids, &truth_ids, k) {
            macro_mismatches += 1;
        }

        // hit@k against a membership oracle on random full rankings.
        let rankings: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut ids: Vec<usize> = (0..k).collect();
                for i in (1..ids.len()).rev() {
                    ids.swap(i, rng.gen_range(0..=i));
                }
                ids
            })
            .collect();
        let cut = rng.gen_range(1..=k + 2);
        let got_hit = hit_at_k(&rankings, &truth, cut).unwrap();
        let want_hits = rankings
            .iter()
            .zip(&truth_ids)
            .filter(|(ranking, &t)| ranking[..cut.min(ranking.len())].contains(&t))
            .count();
        if got_hit != want_hits as f64 / n as f64 {
            hit_mismatches += 1;
        }
    }

    // Worked two-class example: macro F1 = 11/15.
    let preds = PredictionVector::new(vec![0, 1, 1, 1], 2).unwrap();
    let truth = PredictionVector::new(vec![0, 0, 1, 1], 2).unwrap();
    let worked = macro_f1(&preds, &truth, 2).unwrap().macro_f1;
    let worked_ok = (worked - 0.733_333_333_333_333_3).abs() <= 1e-9;

    verdict(
        4,
        "metric-oracles",
        macro_mismatches == 0 && hit_mismatches == 0 && worked_ok,
        &format!(
            "1000 instances exact (macro mismatches {macro_mismatches}, hit@k mismatches \
             {hit_mismatches}); worked example {worked:.10} vs 0.7333333333 ± 1e-9"
        ),
    );
}

#[test]
fn criterion_05_classifier_numerics() {
    // (a) Analytic gradient vs central finite differences.
    let mut rng = seeded_rng(derive_seed(2024, "acceptance", 5));
    let (n, d, k) = (15usize, 4usize, 3usize);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let sample_weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut w = ndarray::Array2::<f64>::zeros((k, d + 1));
    for v in w.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let l2 = 0.07;
    let (_, grad) = loss_and_gradient(&w, &features, &labels, &sample_weights, l2);
    let h = 1e-5;
    let mut numeric = ndarray::Array2::<f64>::zeros((k, d + 1));
    for r in 0..k {
        for c in 0..=d {
            let mut wp = w.clone();
            wp[(r, c)] += h;
            let mut wm = w.clone();
            wm[(r, c)] -= h;
            let (lp, _) = loss_and_gradient(&wp, &features, &labels, &sample_weights, l2);
            let (lm, _) = loss_and_gradient(&wm, &features, &labels, &sample_weights, l2);
            numeric[(r, c)] = (lp - lm) / (2.0 * h);
        }
    }
    let err_norm = (&grad - &numeric).mapv(|v| v * v).sum().sqrt();
    let grad_norm = grad.mapv(|v| v * v).sum().sqrt().max(1e-12);
    let rel = err_norm / grad_norm;
    let gradient_ok = rel <= 1e-4;

    // (b) Predicted probabilities are row-stochastic within 1e-6.
    let spec = SynthSpec {
        classes: 5,
        per_class: 20,
        dim: 8,
        separation: 10.0,
        seed: 5,
    };
    let dataset = generate(&spec);
    let truth = PredictionVector::new(
        dataset.records.iter().map(|r| r.truth.unwrap()).collect(),
        5,
    )
    .unwrap();
    let config = ClassifierConfig::default();
    let model = train(
        &dataset.feature_matrix(),
        &truth,
        &config,
        &dataset.label_space,
    )
    .unwrap();
    let fresh: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..8).map(|_| rng.gen_range(-15.0..15.0)).collect())
        .collect();
    let probs = model.predict_proba(&fresh).unwrap();
    let worst_row_sum = probs
        .rows()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let stochastic_ok = worst_row_sum <= 1e-6;

    // (c) Perfect accuracy on separable clusters.
    let train_probs = model.predict_proba(&dataset.feature_matrix()).unwrap();
    let correct = train_probs
        .rows()
        .zip(&truth.preds)
        .filter(|(row, &t)| lsr::selection::rank(row)[0] == t)
        .count();
    let separable_ok = correct == dataset.len();

    // (d) Same-seed retrain is bit-identical.
    let again = train(
        &dataset.feature_matrix(),
        &truth,
        &config,
        &dataset.label_space,
    )
    .unwrap();
    let retrain_ok = again.weights() == model.weights() && again.to_blob() == model.to_blob();

    verdict(
        5,
        "classifier-numerics",
        gradient_ok && stochastic_ok && separable_ok && retrain_ok,
        &format!(
            "gradient rel err {rel:.2e} <= 1e-4; worst row-sum dev {worst_row_sum:.2e} <= 1e-6; \
             separable accuracy {correct}/{}; same-seed retrain bit-identical: {retrain_ok}",
            dataset.len()
        ),
    );
}

// --- Frozen benchmark scenario for criteria 6-8 (seed fixed after a
// --- 10-seed pilot; pilot minima quoted in each verdict line).

const SCENARIO_SEED: u64 = 0;

fn scenario_spec() -> SynthSpec {
    SynthSpec {
        classes: 20,
        per_class: 60,
        dim: 16,
        separation: 10.0,
        seed: SCENARIO_SEED,
    }
}

fn scenario_mock() -> MockLlm {
    MockLlm::new(MockParams {
        accuracy_at_full: 0.6,
        accuracy_at_two: 0.95,
        seed: SCENARIO_SEED,
    })
}

fn scenario_config(k_target: KTarget) -> RunConfig {
    RunConfig {
        k_target,
        iterations: 5,
        batch_size: 10,
        seed: SCENARIO_SEED,
        ..RunConfig::default()
    }
}

fn truth_vector(dataset: &Dataset) -> PredictionVector {
    PredictionVector::new(
        dataset.records.iter().map(|r| r.truth.unwrap()).collect(),
        dataset.label_space.len(),
    )
    .unwrap()
}

/// Run the frozen scenario; returns (iteration-0 macro F1, final-vote macro
/// F1, per-iteration prediction history).
fn run_scenario(k_target: KTarget) -> (f64, f64, Vec<PredictionVector>) {
    let dataset = generate(&scenario_spec());
    let truth = truth_vector(&dataset);
    let k = dataset.label_space.len();
    let dir = tempfile::tempdir().unwrap();
    let history = run_lsr(
        &dataset,
        &scenario_config(k_target),
        &scenario_mock(),
        &LogisticBackend,
        dir.path(),
    )
    .unwrap();
    let f0 = macro_f1(&history.records[0].predictions, &truth, k)
        .unwrap()
        .macro_f1;
    let fv = macro_f1(&history.final_predictions, &truth, k)
        .unwrap()
        .macro_f1;
    let passes = history
        .records
        .iter()
        .map(|r| r.predictions.clone())
        .collect();
    (f0, fv, passes)
}

#[test]
fn criterion_06_end_to_end_uplift_with_reduction() {
    // Scenario premise: on true labels this feature space is separable
    // enough for the classifier to reach >= 0.99 macro F1.
    let dataset = generate(&scenario_spec());
    let truth = truth_vector(&dataset);
    let model = train(
        &dataset.feature_matrix(),
        &truth,
        &ClassifierConfig::default(),
        &dataset.label_space,
    )
    .unwrap();
    let probs = model.predict_proba(&dataset.feature_matrix()).unwrap();
    let argmax = PredictionVector::new(
        probs.rows().map(|row| lsr::selection::rank(row)[0]).collect(),
        dataset.label_space.len(),
    )
    .unwrap();
    let truth_f1 = macro_f1(&argmax, &truth, dataset.label_space.len())
        .unwrap()
        .macro_f1;

    let (f0, fv, _) = run_scenario(KTarget::Target(2.0));
    let uplift = fv - f0;
    verdict(
        6,
        "end-to-end-uplift-k2",
        truth_f1 >= 0.99 && uplift >= 0.05,
        &format!(
            "true-label classifier {truth_f1:.4} >= 0.99; vote {fv:.4} vs iteration-0 {f0:.4}, \
             uplift {uplift:+.4} >= 0.05 (10-seed pilot min {:+.4})",
            0.3802
        ),
    );
}

#[test]
fn criterion_07_ranking_only_mode_nonnegative_uplift() {
    let (f0_full, fv_full, _) = run_scenario(KTarget::Full);
    let (f0_k2, fv_k2, _) = run_scenario(KTarget::Target(2.0));
    let uplift_full = fv_full - f0_full;
    let uplift_k2 = fv_k2 - f0_k2;
    // Assert nonnegativity only; the k=2 comparison is reported, and held
    // on 10/10 pilot seeds.
    verdict(
        7,
        "ranking-only-uplift",
        uplift_full >= 0.0,
        &format!(
            "full-space uplift {uplift_full:+.4} >= 0; smaller than k=2 uplift {uplift_k2:+.4}: \
             {} (10/10 pilot seeds)",
            uplift_full < uplift_k2
        ),
    );
}

#[test]
fn criterion_08_distillation_fidelity() {
    let dataset = generate(&scenario_spec());
    let (_, vote_f1, passes) = run_scenario(KTarget::Target(2.0));
    let clf_config = ClassifierConfig {
        seed: derive_seed(SCENARIO_SEED, "distill", 0),
        ..ClassifierConfig::default()
    };
    let model = distill(&dataset, &passes, &clf_config, &LogisticBackend).unwrap();

    // Fresh in-distribution test set: same class centers, new noise.
    let test = generate_with_noise_seed(&scenario_spec(), SCENARIO_SEED ^ 0x9e37_79b9_7f4a_7c15);
    let probs = model.predict_proba(&test.feature_matrix()).unwrap();
    let preds = PredictionVector::new(
        probs.rows().map(|row| lsr::selection::rank(row)[0]).collect(),
        test.label_space.len(),
    )
    .unwrap();
    let test_f1 = macro_f1(&preds, &truth_vector(&test), test.label_space.len())
        .unwrap()
        .macro_f1;
    let gap = (test_f1 - vote_f1).abs();
    verdict(
        8,
        "distillation-fidelity",
        gap <= 0.03,
        &format!(
            "distilled {test_f1:.4} on fresh-noise test vs vote ensemble {vote_f1:.4}, \
             gap {gap:.4} <= 0.03 (10-seed pilot max 0.0076)"
        ),
    );
}

/// Mock wrapper that fails exactly one call, to interrupt a run mid-iteration.
struct FailOnce {
    inner: MockLlm,
    fail_at: usize,
    calls: AtomicUsize,
}

impl LlmBackend for FailOnce {
    fn classify_batch(
        &self,
        label_space: &LabelSpace,
        batch: &BatchContext,
    ) -> Result<Vec<CasePrediction>, LlmError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(LlmError::Transport("injected outage".to_string()));
        }
        self.inner.classify_batch(label_space, batch)
    }

    fn max_in_flight(&self) -> usize {
        1
    }
}

fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path
                    .strip_prefix(base)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                if rel.ends_with("events.log") {
                    continue; // append-only trace; not part of run state
                }
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_09_engine_invariants() {
    let spec = SynthSpec {
        classes: 6,
        per_class: 20,
        dim: 8,
        separation: 8.0,
        seed: 11,
    };
    let dataset = generate(&spec);
    let mock = MockLlm::new(MockParams {
        accuracy_at_full: 0.7,
        accuracy_at_two: 0.95,
        seed: 7,
    });

    // Membership sweep: each candidate set at iteration t contains the
    // prediction from iteration t-1.
    let mut combos = 0usize;
    let mut membership_violations = 0usize;
    for &iterations in &[0usize, 1, 5, 15] {
        for k_target in [KTarget::Target(1.5), KTarget::Target(2.0), KTarget::Full] {
            let config = RunConfig {
                k_target,
                iterations,
                batch_size: 10,
                seed: 3,
                ..RunConfig::default()
            };
            let dir = tempfile::tempdir().unwrap();
            let history = run_lsr(&dataset, &config, &mock, &LogisticBackend, dir.path()).unwrap();
            assert_eq!(history.records.len(), iterations + 1);
            for t in 1..history.records.len() {
                let sets = history.records[t]
                    .candidate_sets
                    .as_ref()
                    .expect("candidate sets exist for every pass after the first");
                let prev = &history.records[t - 1].predictions.preds;
                for (i, set) in sets.iter().enumerate() {
                    if !set.contains(prev[i]) {
                        membership_violations += 1;
                    }
                }
            }
            combos += 1;
        }
    }

    // Resume bit-identity: interrupt a run mid-iteration, resume it, and
    // compare every persisted byte with an uninterrupted run.
    let config = RunConfig {
        k_target: KTarget::Target(2.0),
        iterations: 5,
        batch_size: 10,
        seed: 3,
        ..RunConfig::default()
    };
    let clean_dir = tempfile::tempdir().unwrap();
    let clean = run_lsr(&dataset, &config, &mock, &LogisticBackend, clean_dir.path()).unwrap();

    let resumed_dir = tempfile::tempdir().unwrap();
    let failing = FailOnce {
        inner: MockLlm::new(MockParams {
            accuracy_at_full: 0.7,
            accuracy_at_two: 0.95,
            seed: 7,
        }),
        fail_at: 30, // iteration 2, batch 6 of 12
        calls: AtomicUsize::new(0),
    };
    let interrupted =
        run_lsr(&dataset, &config, &failing, &LogisticBackend, resumed_dir.path()).unwrap_err();
    assert!(
        matches!(interrupted, lsr::engine::EngineError::Llm(_)),
        "unexpected interruption error: {interrupted:?}"
    );
    let resumed = run_lsr(&dataset, &config, &mock, &LogisticBackend, resumed_dir.path()).unwrap();

    let same_outcome = resumed.final_predictions == clean.final_predictions;
    let clean_files = dir_snapshot(clean_dir.path());
    let resumed_files = dir_snapshot(resumed_dir.path());
    let differing: Vec<&String> = clean_files
        .keys()
        .chain(resumed_files.keys())
        .filter(|k| clean_files.get(*k) != resumed_files.get(*k))
        .collect();

    verdict(
        9,
        "engine-invariants",
        membership_violations == 0 && same_outcome && differing.is_empty(),
        &format!(
            "membership exact over {combos} configs ({membership_violations} violations); \
             resumed run bit-identical across {} files (diffs: {differing:?})",
            clean_files.len()
        ),
    );
}

#[test]
fn criterion_10_wire_protocol_conformance() {
    fn live(server: &StubServer, key_env: &str, retries: u32, max_in_flight: usize) -> LlmConfig {
        std::env::set_var(key_env, "acceptance-key");
        LlmConfig {
            mode: LlmMode::Live,
            endpoint: server.endpoint.clone(),
            model: "stub-model".to_string(),
            api_key_env: key_env.to_string(),
            temperature: 0.0,
            max_in_flight,
            retries,
            ..LlmConfig::default()
        }
    }
    fn sample(id: &str, text: &str) -> SampleRecord {
        SampleRecord {
            id: id.to_string(),
            semantic: vec![("Text".to_string(), text.to_string())],
            features: vec![],
            truth: None,
        }
    }
    let space = LabelSpace::new(["refund", "card arrival", "exchange rate"]).unwrap();

    // (a) Retry/backoff: two transient failures, then success; the third
    // attempt arrives at least 3 seconds after the first. All completions
    // from the stub are fenced JSON, so lenient parsing is exercised on
    // every request in this test.
    let server = StubServer::start();
    server.script([Scripted::status(429), Scripted::status(503)]);
    let client = LiveClient::new(&live(&server, "LSR_ACC_KEY_A", 3, 1)).unwrap();
    let records = [sample("a", "where is my card"), sample("b", "refund me")];
    let batch = BatchContext {
        records: records.iter().collect(),
        label_order: &[0, 1, 2],
        suggestions: None,
        draw: 0,
    };
    let parsed = client.classify_batch(&space, &batch).unwrap();
    let fenced_ok = parsed.len() == 2 && parsed.iter().all(|c| c.resolved.is_some());
    let reqs = server.requests();
    let backoff_ok = reqs.len() == 3
        && reqs[2].at.duration_since(reqs[0].at) >= Duration::from_secs(3)
        && reqs[0].authorization.as_deref() == Some("Bearer acceptance-key");

    // (b) Auth failures surface immediately, without retries.
    let server_auth = StubServer::start();
    server_auth.script([Scripted::status(401)]);
    let auth_client = LiveClient::new(&live(&server_auth, "LSR_ACC_KEY_B", 3, 1)).unwrap();
    let auth_err = auth_client.complete("hello").unwrap_err();
    let auth_ok =
        matches!(auth_err, LlmError::AuthFailure(401)) && server_auth.request_count() == 1;

    // (c) Bounded in-flight requests while six held batches are pending.
    let server_flight = StubServer::start();
    server_flight.set_default_hold(Duration::from_millis(150));
    let flight_config = live(&server_flight, "LSR_ACC_KEY_C", 0, 2);
    let flight_client = LiveClient::new(&flight_config).unwrap();
    let unlabeled: Vec<SampleRecord> = (0..12)
        .map(|i| sample(&format!("s{i}"), &format!("message {i}")))
        .collect();
    let flight_dataset = Dataset::new(unlabeled, space.clone());
    let flight_run = RunConfig {
        batch_size: 2,
        llm: flight_config,
        ..RunConfig::default()
    };
    lsr::engine::self_consistency(&flight_dataset, &flight_run, &flight_client, 1, 0.0).unwrap();
    let flight_ok =
        server_flight.request_count() == 6 && server_flight.max_concurrency() <= 2;

    // (d) Prompt bytes: an engine-driven run sends the exact template, with
    // candidate suggestions appearing from the second pass on and never in
    // the first.
    let server_run = StubServer::start();
    let run_llm = live(&server_run, "LSR_ACC_KEY_D", 0, 1);
    let run_client = LiveClient::new(&run_llm).unwrap();
    let run_dataset = generate(&SynthSpec {
        classes: 3,
        per_class: 4,
        dim: 4,
        separation: 6.0,
        seed: 1,
    });
    let run_config = RunConfig {
        iterations: 1,
        batch_size: 4,
        seed: 1,
        llm: run_llm,
        ..RunConfig::default()
    };
    let run_dir = tempfile::tempdir().unwrap();
    run_lsr(
        &run_dataset,
        &run_config,
        &run_client,
        &LogisticBackend,
        run_dir.path(),
    )
    .unwrap();
    let bodies = server_run.requests();
    let batches_per_pass = 3;
    let mut template_ok = bodies.len() == 2 * batches_per_pass;
    for (i, request) in bodies.iter().enumerate() {
        let content = &request.content;
        let sections = content.find("### Context ###").zip(content.find("### Instructions ###")).zip(content.find("### Cases ###"));
        template_ok &= matches!(sections, Some(((a, b), c)) if a < b && b < c);
        template_ok &= content.contains("The categories are: [");
        template_ok &= content.contains(
            "{\"predictions\": [{\"Case\": 0, \"Analysis\": \"...\", \"Label\": \"...\"}, ...]}",
        );
        template_ok &= content.contains(", suggestions: [") == (i >= batches_per_pass);
    }

    verdict(
        10,
        "wire-protocol-conformance",
        backoff_ok && fenced_ok && auth_ok && flight_ok && template_ok,
        &format!(
            "backoff {backoff_ok} (3 attempts, >= 3s spread); fenced-JSON parse {fenced_ok}; \
             auth fail-fast {auth_ok}; in-flight bound {flight_ok} (max {} of 2); \
             template + suggestions placement {template_ok}",
            server_flight.max_concurrency()
        ),
    );
}
