//! The exact prompt sent to the LLM and the tolerant response parser.
//!
//! The prompt has three fixed sections — Context, Instructions, Cases —
//! and asks for a JSON object with one entry per case. Candidate
//! suggestions appear per case from the second pass onward; the very
//! first pass lists no suggestions, only the full category list. The
//! parser accepts fenced or unfenced JSON, ignores prose around it, and
//! resolves sloppy label strings (case, whitespace, quotes, unique
//! substrings) back to label ids.
//!
//! Run with: cargo run --example prompt_and_parsing

use lsr::llm::{build_prompt, match_label, parse_response};
use lsr::types::{LabelSpace, SampleRecord};

fn main() -> anyhow::Result<()> {
    let space = LabelSpace::new(["refund", "card arrival", "exchange rate"])?;
    let records = vec![
        SampleRecord {
            id: "a".into(),
            semantic: vec![("Text".into(), "Where is my new card?".into())],
            features: vec![],
            truth: None,
        },
        SampleRecord {
            id: "b".into(),
            semantic: vec![("Text".into(), "I want my money back".into())],
            features: vec![],
            truth: None,
        },
    ];
    let batch: Vec<&SampleRecord> = records.iter().collect();

    // First pass: the whole label space, no suggestions.
    println!(
        "=== first-pass prompt ===\n{}\n",
        build_prompt(&batch, &space, &[0, 1, 2], None)?
    );

    // Later pass: each case carries its ranked candidate list.
    let suggestions = vec![vec![1, 2], vec![0]];
    println!(
        "=== later-pass prompt ===\n{}\n",
        build_prompt(&batch, &space, &[0, 1, 2], Some(&suggestions))?
    );

    // A messy but recoverable completion: fenced, with prose around it.
    let completion = r#"Sure! Here is my analysis.
```json
{"predictions": [
  {"Case": 0, "Analysis": "asks about card delivery", "Label": "Card Arrival"},
  {"Case": 1, "Analysis": "wants a refund", "Label": "'refund'"}
]}
```
Hope that helps."#;
    let parsed = parse_response(completion, 2)?;
    for case in &parsed {
        let resolved = match_label(&case.raw_label, &space, None);
        println!(
            "case {}: raw {:?} -> label id {:?} ({:?})",
            case.case_index,
            case.raw_label,
            resolved,
            resolved.and_then(|id| space.name(id))
        );
    }

    // Substring rescue: "rate" is a unique substring of one label.
    println!(
        "\"rate\" resolves to {:?}",
        match_label("rate", &space, None).and_then(|id| space.name(id))
    );
    println!(
        "\"card\" resolves to {:?} (substring of exactly one label)",
        match_label("card", &space, None).and_then(|id| space.name(id))
    );
    // Ambiguous fragments stay unresolved rather than guessing.
    println!(
        "\"a\" resolves to {:?} (substring of several labels, so none)",
        match_label("a", &space, None).and_then(|id| space.name(id))
    );
    Ok(())
}
