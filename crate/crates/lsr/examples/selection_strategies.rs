//! How the candidate-selection strategies carve up one probability row.
//!
//! Four ways to turn a probability distribution over labels into a short
//! candidate list:
//!   top-k    — a fixed number of best labels
//!   top-p    — the shortest ranked prefix reaching cumulative mass p
//!   min-p    — every label within a factor p of the highest probability
//!   min-p+   — min-p, plus the current prediction appended as a floor
//!
//! Run with: cargo run --example selection_strategies

use lsr::selection::{min_p_plus_select, min_p_select, top_k_select, top_p_select};

fn show(name: &str, labels: &[usize], names: &[&str]) {
    let rendered: Vec<&str> = labels.iter().map(|&i| names[i]).collect();
    println!("{name:<28} {rendered:?}");
}

fn main() -> anyhow::Result<()> {
    let names = ["refund", "card_lost", "card_stolen", "top_up", "exchange"];
    // A peaked-but-uncertain posterior: two plausible labels, three unlikely.
    let row = [0.08, 0.45, 0.37, 0.06, 0.04];
    println!("probabilities: {row:?}\n");

    show("top_k (k=2)", &top_k_select(&row, 2)?.labels, &names);
    show("top_p (p=0.5)", &top_p_select(&row, 0.5).labels, &names);
    show("top_p (p=0.9)", &top_p_select(&row, 0.9).labels, &names);
    show("min_p (p=0.5)", &min_p_select(&row, 0.5).labels, &names);
    show("min_p (p=0.1)", &min_p_select(&row, 0.1).labels, &names);

    // min-p+ guarantees the current prediction survives the cut. Here the
    // current prediction "exchange" (label 4) is far below the threshold,
    // so it is appended at the end rather than ranked.
    show(
        "min_p_plus (p=0.5, cur=4)",
        &min_p_plus_select(&row, 0.5, 4).labels,
        &names,
    );
    // When the current prediction already clears the threshold the result
    // is identical to plain min-p.
    show(
        "min_p_plus (p=0.5, cur=2)",
        &min_p_plus_select(&row, 0.5, 2).labels,
        &names,
    );

    // The invariant the refinement loop depends on: whatever the
    // threshold does, the previous answer is always still on the menu.
    for p in [0.0, 0.3, 0.7, 1.0] {
        for current in 0..names.len() {
            assert!(min_p_plus_select(&row, p, current).contains(current));
        }
    }
    println!("\nmin_p_plus kept the current prediction at every threshold");
    Ok(())
}
