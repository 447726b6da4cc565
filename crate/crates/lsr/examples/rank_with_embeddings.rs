//! Ranking labels by embedding cosine vs by classifier probability.
//!
//! A cheap alternative to a trained classifier is to embed samples and
//! label names in the same space and rank labels by cosine similarity.
//! This example builds both rankings on synthetic data and compares
//! their Hit@k curves. The classifier, having actually seen labeled
//! data, should dominate at small k.
//!
//! Run with: cargo run --example rank_with_embeddings

use lsr::classifier::{train, ClassifierConfig};
use lsr::metrics::{embedding_rank, hit_at_k};
use lsr::selection::rank;
use lsr::synth::{generate, SynthSpec};

fn main() -> anyhow::Result<()> {
    let dataset = generate(&SynthSpec {
        classes: 8,
        per_class: 30,
        dim: 10,
        separation: 4.0, // deliberately fuzzy clusters
        seed: 29,
    });
    let truth = dataset.truth_vector().unwrap();
    let features = dataset.feature_matrix();
    let k = dataset.label_space.len();

    // "Label embeddings": the per-class mean feature vector, a stand-in
    // for a sentence embedding of the label name.
    let mut label_embeddings = vec![vec![0.0; features[0].len()]; k];
    let mut counts = vec![0usize; k];
    for (row, &class) in features.iter().zip(&truth.preds) {
        counts[class] += 1;
        for (j, v) in row.iter().enumerate() {
            label_embeddings[class][j] += v;
        }
    }
    for (embedding, &count) in label_embeddings.iter_mut().zip(&counts) {
        for v in embedding.iter_mut() {
            *v /= count as f64;
        }
    }
    let embedding_rankings = embedding_rank(&features, &label_embeddings)?;

    // Classifier rankings from a model trained on the true labels.
    let clf = train(&features, &truth, &ClassifierConfig::default(), &dataset.label_space)?;
    let probs = clf.predict_proba(&features)?;
    let classifier_rankings: Vec<Vec<usize>> = probs.rows().map(rank).collect();

    println!("   k  classifier_hit  embedding_hit");
    for cut in 1..=k {
        let c = hit_at_k(&classifier_rankings, &truth, cut)?;
        let e = hit_at_k(&embedding_rankings, &truth, cut)?;
        println!("{cut:>4}  {c:>14.4}  {e:>13.4}");
    }
    println!("\nboth curves are nondecreasing and reach 1.0 at k=K");
    Ok(())
}
