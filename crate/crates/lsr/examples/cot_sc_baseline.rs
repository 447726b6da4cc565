//! The self-consistency baseline: resample the LLM, take the mode.
//!
//! Instead of refining the label space, this baseline asks the model the
//! same full-label-space question several times at a positive temperature
//! and majority-votes the answers. It is the natural comparison point for
//! the refinement loop: same query budget, no classifier in the loop.
//!
//! Run with: cargo run --example cot_sc_baseline

use lsr::engine::{self_consistency, RunConfig};
use lsr::llm::{MockLlm, MockParams};
use lsr::metrics::macro_f1;
use lsr::synth::{generate, SynthSpec};

fn main() -> anyhow::Result<()> {
    let dataset = generate(&SynthSpec {
        classes: 10,
        per_class: 30,
        dim: 12,
        separation: 10.0,
        seed: 17,
    });
    let truth = dataset.truth_vector().unwrap();
    let k = dataset.label_space.len();

    let config = RunConfig {
        seed: 17,
        ..RunConfig::default()
    };
    let llm = MockLlm::new(MockParams {
        accuracy_at_full: 0.6,
        accuracy_at_two: 0.95,
        seed: 17,
    });

    // At temperature 0 every resample gives the same answer, so the vote
    // changes nothing — it IS the single zero-shot pass.
    let single = self_consistency(&dataset, &config, &llm, 1, 0.0)?;
    let frozen = self_consistency(&dataset, &config, &llm, 9, 0.0)?;
    println!(
        "temperature 0: 1 resample == 9 resamples: {}",
        single.preds == frozen.preds
    );

    // At a positive temperature the resamples disagree and the vote
    // filters out some of the noise.
    println!("\nresamples  macro_f1 (temperature 0.7)");
    for resamples in [1, 3, 5, 9] {
        let voted = self_consistency(&dataset, &config, &llm, resamples, 0.7)?;
        let f1 = macro_f1(&voted, &truth, k)?.macro_f1;
        println!("{resamples:>9}  {f1:.4}");
    }
    Ok(())
}
