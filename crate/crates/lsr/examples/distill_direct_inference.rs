//! Compress a whole refinement run into one classifier, then deploy it.
//!
//! Distillation trains on every pass of the run at once: each sample
//! appears once per iteration, labeled with that iteration's prediction,
//! so labels the passes agree on dominate. The distilled model then
//! classifies fresh data with no LLM at all (plain mode), or with a single
//! cheap LLM pass over each sample's reduced candidate set (with-llm).
//!
//! Run with: cargo run --example distill_direct_inference

use lsr::classifier::LogisticBackend;
use lsr::engine::{direct_infer, distill, run_lsr, InferMode, RunConfig};
use lsr::llm::{MockLlm, MockParams};
use lsr::metrics::macro_f1;
use lsr::synth::{generate, generate_with_noise_seed, SynthSpec};
use lsr::types::PredictionVector;

fn main() -> anyhow::Result<()> {
    let spec = SynthSpec {
        classes: 10,
        per_class: 40,
        dim: 12,
        separation: 10.0,
        seed: 13,
    };
    let train_set = generate(&spec);
    // Fresh noise, same clusters: an unseen in-distribution test set.
    let test_set = generate_with_noise_seed(&spec, 9_999);
    let k = train_set.label_space.len();

    let config = RunConfig {
        iterations: 5,
        seed: 13,
        ..RunConfig::default()
    };
    let llm = MockLlm::new(MockParams {
        accuracy_at_full: 0.6,
        accuracy_at_two: 0.95,
        seed: 13,
    });
    let run_dir = tempfile::tempdir()?;
    let history = run_lsr(&train_set, &config, &llm, &LogisticBackend, run_dir.path())?;

    let train_truth = train_set.truth_vector().unwrap();
    let vote_f1 = macro_f1(&history.final_predictions, &train_truth, k)?.macro_f1;
    println!("majority vote on training data: {vote_f1:.4}");

    let passes: Vec<PredictionVector> = history
        .records
        .iter()
        .map(|r| r.predictions.clone())
        .collect();
    let distilled = distill(&train_set, &passes, &config.classifier, &LogisticBackend)?;
    println!(
        "distilled {} passes into one model ({} epochs)",
        passes.len(),
        distilled.epochs_used
    );

    let test_truth = test_set.truth_vector().unwrap();
    let plain = direct_infer(&distilled, &test_set, InferMode::Plain)?;
    let plain_f1 = macro_f1(&plain.predictions, &test_truth, k)?.macro_f1;
    println!("distilled model alone on unseen data: {plain_f1:.4}");

    let assisted = direct_infer(
        &distilled,
        &test_set,
        InferMode::WithLlm {
            llm: &llm,
            k_target: 2.0,
            batch_size: 10,
            seed: 13,
        },
    )?;
    let assisted_f1 = macro_f1(&assisted.predictions, &test_truth, k)?.macro_f1;
    println!(
        "with one LLM pass over candidates: {assisted_f1:.4} (threshold p = {:.4}, mean set size {:.3})",
        assisted.threshold_p.unwrap(),
        assisted.mean_candidate_size.unwrap()
    );
    Ok(())
}
