//! Loading datasets from CSV and line-delimited JSON with column rules.
//!
//! Every non-dropped column contributes to the semantic view (the text
//! the LLM sees); numeric features come from columns marked
//! categorical_numeric (first-occurrence integer codes) or
//! passthrough_numeric (parsed reals), plus an optional precomputed
//! feature-vector column. Empty label cells mean "no truth".
//!
//! Run with: cargo run --example ingest_formats

use std::io::Write;

use lsr::ingest::{load_dataset, render_semantic, ColumnDirective, IngestSpec};
use lsr::types::LabelSpace;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let space = LabelSpace::new(["billing", "shipping", "returns"])?;

    // A CSV with a text column, a categorical column, a numeric column,
    // and a truth label that is sometimes missing.
    let csv_path = dir.path().join("tickets.csv");
    let mut f = std::fs::File::create(&csv_path)?;
    writeln!(f, "id,message,channel,age_days,label")?;
    writeln!(f, "t1,Where is my package,email,3,shipping")?;
    writeln!(f, "t2,I was double charged,phone,1,billing")?;
    writeln!(f, "t3,Send me a return label,email,7,returns")?;
    writeln!(f, "t4,Refund my order,chat,2,")?;
    drop(f);

    let mut spec = IngestSpec::default();
    spec.columns
        .insert("channel".into(), ColumnDirective::CategoricalNumeric);
    spec.columns
        .insert("age_days".into(), ColumnDirective::PassthroughNumeric);

    let dataset = load_dataset(&csv_path, &spec, &space)?;
    println!("CSV: {} records, {} features each", dataset.len(), dataset.d);
    for record in &dataset.records {
        println!(
            "  {}: features {:?} truth {:?}\n      semantic: {}",
            record.id,
            record.features,
            record.truth.and_then(|t| space.name(t)),
            render_semantic(record)
        );
    }

    // The same data as line-delimited JSON, with a precomputed feature
    // vector column instead of numeric columns.
    let jsonl_path = dir.path().join("tickets.jsonl");
    let mut f = std::fs::File::create(&jsonl_path)?;
    writeln!(
        f,
        r#"{{"id": "t1", "message": "Where is my package", "features": "[0.1, 0.9]", "label": "shipping"}}"#
    )?;
    writeln!(
        f,
        r#"{{"id": "t2", "message": "I was double charged", "features": "[0.8, 0.2]", "label": "billing"}}"#
    )?;
    drop(f);

    let dataset = load_dataset(&jsonl_path, &IngestSpec::default(), &space)?;
    println!(
        "\nJSONL: {} records, feature width {} (from the \"features\" column)",
        dataset.len(),
        dataset.d
    );
    println!("  t1 features: {:?}", dataset.records[0].features);
    Ok(())
}
