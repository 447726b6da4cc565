//! Calibrating the min-p threshold so candidate sets average k labels.
//!
//! The weighted mean candidate-set size is nonincreasing in p, so a
//! bisection over a 1e-4 grid finds the threshold whose achieved mean is
//! closest to the target. Class weights make rare predicted classes count
//! as much as common ones, so the calibration is not dominated by
//! whatever the previous pass over-predicted.
//!
//! Run with: cargo run --example threshold_search

use lsr::classifier::{train, ClassifierConfig};
use lsr::selection::{find_optimal_threshold, min_p_plus_select, rank, sample_weights};
use lsr::synth::{generate, SynthSpec};
use lsr::types::PredictionVector;

fn main() -> anyhow::Result<()> {
    // Train a classifier on true labels to get realistic probabilities.
    let dataset = generate(&SynthSpec {
        classes: 12,
        per_class: 25,
        dim: 10,
        separation: 6.0,
        seed: 3,
    });
    let truth = dataset.truth_vector().unwrap();
    let clf = train(
        &dataset.feature_matrix(),
        &truth,
        &ClassifierConfig::default(),
        &dataset.label_space,
    )?;
    let probs = clf.predict_proba(&dataset.feature_matrix())?;

    let current = PredictionVector {
        preds: probs.rows().map(|row| rank(row)[0]).collect(),
        rationales: None,
    };
    let weights = sample_weights(&current, dataset.label_space.len());

    println!("k_target  threshold_p  achieved_mean");
    for k_target in [1.5, 2.0, 3.0, 5.0] {
        let p = find_optimal_threshold(&probs, &current, k_target, &weights)?;
        let total_w: f64 = weights.iter().sum();
        let mean: f64 = probs
            .rows()
            .enumerate()
            .map(|(i, row)| {
                weights[i] * min_p_plus_select(row, p, current.preds[i]).len() as f64
            })
            .sum::<f64>()
            / total_w;
        println!("{k_target:>8}  {p:>11.4}  {mean:>13.4}");
    }

    // Degenerate targets behave sensibly: k = K selects everything at a
    // low threshold, k = 1 pushes the threshold to its ceiling.
    let k = dataset.label_space.len() as f64;
    let p_all = find_optimal_threshold(&probs, &current, k, &weights)?;
    let p_one = find_optimal_threshold(&probs, &current, 1.0, &weights)?;
    println!("\nk=K ({k}) -> p = {p_all:.4}; k=1 -> p = {p_one:.4}");
    Ok(())
}
