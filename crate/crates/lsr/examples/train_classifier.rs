//! Training the built-in logistic classifier on (pseudo-)labels.
//!
//! Training runs in two phases: a stratified hold-out picks the epoch
//! budget by early stopping, then the model retrains from scratch on all
//! data for exactly that many epochs. Class weighting keeps rare labels
//! from being drowned out. Everything is seeded and bit-reproducible,
//! including the serialized blob.
//!
//! Run with: cargo run --example train_classifier

use lsr::classifier::{train, ClassifierConfig, TrainedClassifier};
use lsr::metrics::macro_f1;
use lsr::selection::rank;
use lsr::synth::{generate, SynthSpec};
use lsr::types::PredictionVector;

fn main() -> anyhow::Result<()> {
    let dataset = generate(&SynthSpec {
        classes: 6,
        per_class: 50,
        dim: 8,
        separation: 7.0,
        seed: 21,
    });
    let truth = dataset.truth_vector().unwrap();
    let features = dataset.feature_matrix();

    let config = ClassifierConfig {
        seed: 21,
        ..ClassifierConfig::default()
    };
    let clf = train(&features, &truth, &config, &dataset.label_space)?;
    println!(
        "trained {} classes x {} features in {} epochs (best hold-out loss {:.4})",
        clf.k(),
        clf.d(),
        clf.epochs_used,
        clf.final_holdout_loss.unwrap_or(f64::NAN)
    );

    let probs = clf.predict_proba(&features)?;
    let preds = PredictionVector {
        preds: probs.rows().map(|row| rank(row)[0]).collect(),
        rationales: None,
    };
    let report = macro_f1(&preds, &truth, dataset.label_space.len())?;
    println!("training-set macro F1: {:.4}", report.macro_f1);

    // Probabilities are proper distributions.
    let worst_row_error = probs
        .rows()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("worst |row sum - 1|: {worst_row_error:.2e}");

    // Serialization round-trips bit-exactly.
    let blob = clf.to_blob();
    let restored = TrainedClassifier::from_blob(&blob)?;
    println!(
        "blob: {} bytes, reload reproduces weights exactly: {}",
        blob.len(),
        restored.weights() == clf.weights()
    );

    // Same seed, same bytes.
    let again = train(&features, &truth, &config, &dataset.label_space)?;
    println!("same-seed retrain is bit-identical: {}", again.to_blob() == blob);
    Ok(())
}
