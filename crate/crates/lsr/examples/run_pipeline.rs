//! The full refinement loop, end to end, against the offline mock LLM.
//!
//! The mock answers correctly with probability 0.6 when shown the whole
//! label list and 0.95 when shown two candidates, interpolating
//! log-linearly in between — the trade-off the loop exploits: a weak
//! zero-shot pass trains a classifier, the classifier's rankings shrink
//! each sample's label list, and the LLM becomes much stronger on the
//! short lists.
//!
//! Run with: cargo run --example run_pipeline

use lsr::classifier::LogisticBackend;
use lsr::engine::{run_lsr, KTarget, RunConfig};
use lsr::llm::{MockLlm, MockParams};
use lsr::metrics::{iteration_report, macro_f1};
use lsr::synth::{generate, SynthSpec};

fn main() -> anyhow::Result<()> {
    let dataset = generate(&SynthSpec {
        classes: 10,
        per_class: 40,
        dim: 12,
        separation: 10.0,
        seed: 7,
    });
    let truth = dataset.truth_vector().expect("synthetic data has truth");

    let config = RunConfig {
        k_target: KTarget::Target(2.0),
        iterations: 5,
        seed: 7,
        ..RunConfig::default()
    };
    let llm = MockLlm::new(MockParams {
        accuracy_at_full: 0.6,
        accuracy_at_two: 0.95,
        seed: 7,
    });

    let run_dir = tempfile::tempdir()?;
    let history = run_lsr(&dataset, &config, &llm, &LogisticBackend, run_dir.path())?;

    println!("iter  macro_f1  vote_f1  mean_cands  cand_hit");
    let k = dataset.label_space.len();
    for row in iteration_report(&history.records, &truth, k)? {
        println!(
            "{:>4}  {:>8.4}  {:>7.4}  {:>10}  {:>8}",
            row.t,
            row.macro_f1,
            row.vote_macro_f1,
            row.mean_candidate_size
                .map_or("-".into(), |v| format!("{v:.3}")),
            row.candidate_hit_rate
                .map_or("-".into(), |v| format!("{v:.3}")),
        );
    }

    let final_f1 = macro_f1(&history.final_predictions, &truth, k)?.macro_f1;
    let first_f1 = macro_f1(&history.records[0].predictions, &truth, k)?.macro_f1;
    println!(
        "majority vote: {final_f1:.4} (zero-shot pass was {first_f1:.4}, uplift {:+.4})",
        final_f1 - first_f1
    );
    println!(
        "run artifacts (predictions, classifiers, metrics) were written to {}",
        run_dir.path().display()
    );
    Ok(())
}
