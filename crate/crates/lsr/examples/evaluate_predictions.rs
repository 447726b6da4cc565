//! Scoring predictions: macro-F1 with the all-classes convention, Hit@k.
//!
//! Macro-F1 averages F1 over ALL classes, including ones that never
//! appear in the truth or the predictions — those contribute 0, so a
//! model that silently drops rare classes pays for it. Hit@k asks how
//! often the true label appears in the first k entries of a ranking.
//!
//! Run with: cargo run --example evaluate_predictions

use lsr::metrics::{hit_at_k, macro_f1, render_report_table};
use lsr::types::{LabelSpace, PredictionVector};

fn main() -> anyhow::Result<()> {
    let space = LabelSpace::new(["cat", "dog", "bird"])?;

    // The classic worked example: truth [0,0,1,1], preds [0,1,1,1].
    let truth = PredictionVector::new(vec![0, 0, 1, 1], 2)?;
    let preds = PredictionVector::new(vec![0, 1, 1, 1], 2)?;
    let report = macro_f1(&preds, &truth, 2)?;
    println!(
        "two-class example: per-class F1 = [{:.4}, {:.4}], macro = {:.4}",
        report.per_class[0].f1, report.per_class[1].f1, report.macro_f1
    );

    // Same predictions scored over three classes: "bird" never occurs,
    // scores 0, and pulls the mean down by a third.
    let truth3 = PredictionVector::new(vec![0, 0, 1, 1], 3)?;
    let preds3 = PredictionVector::new(vec![0, 1, 1, 1], 3)?;
    let mut report3 = macro_f1(&preds3, &truth3, 3)?;
    println!(
        "same vectors over K=3: macro = {:.4} (the absent class dilutes)",
        report3.macro_f1
    );

    // Hit@k over rankings: position of the true label is what matters.
    let rankings = vec![
        vec![0, 1, 2], // truth 0 -> hit at k=1
        vec![1, 0, 2], // truth 0 -> hit at k=2
        vec![2, 1, 0], // truth 0 -> hit at k=3
    ];
    let rank_truth = PredictionVector::new(vec![0, 0, 0], 3)?;
    for k in 1..=3 {
        report3
            .hit_at_k
            .insert(k, hit_at_k(&rankings, &rank_truth, k)?);
    }
    println!(
        "hit@1/2/3 over the toy rankings: {:?}",
        report3.hit_at_k.values().collect::<Vec<_>>()
    );

    println!("\nfull report table:\n{}", render_report_table(&report3, &space));
    Ok(())
}
