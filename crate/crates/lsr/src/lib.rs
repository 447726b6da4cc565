//! Iterative label space reduction for zero-shot classification.
//!
//! An LLM assigns pseudo-labels to unlabeled samples, a probabilistic
//! classifier is trained on those pseudo-labels, and the classifier's
//! calibrated rankings shrink the candidate label set handed back to the
//! LLM on the next pass. Majority voting over all passes yields the final
//! predictions, and the whole ensemble can be distilled into a single
//! frozen classifier for cheap deployment.
//!
//! The crate is organized around that loop:
//!
//! - [`types`]: shared domain types (label spaces, datasets, probability
//!   matrices) and dataset validation.
//! - [`ingest`]: file loading, the dual numerical/semantic views, and
//!   preprocessing transforms.
//! - [`classifier`]: the pluggable classifier contract plus a built-in
//!   multinomial logistic regression with stratified hold-out early
//!   stopping.
//! - [`selection`]: ranking, the top-k / top-p / min-p family of label
//!   selection strategies, and the target-dimensionality threshold search.
//! - [`llm`]: prompt construction, a chat-completions client with retry
//!   and bounded concurrency, response parsing, and a deterministic mock
//!   backend for offline runs.
//! - [`engine`]: the iterative refinement loop, majority voting, the
//!   self-consistency baseline, distillation, and direct inference.
//! - [`metrics`]: macro-F1, hit rate, the embedding-cosine ranking
//!   baseline, and per-iteration reporting.
//! - [`synth`]: a seeded Gaussian-mixture benchmark generator.
//! - [`cli`]: the subcommand implementations behind the `lsr` binary.
//!
//! See the `examples/` directory for one runnable example per capability;
//! `run_pipeline` is the best starting point.

pub mod cli;
pub mod classifier;
pub mod engine;
pub mod ingest;
pub mod llm;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod types;
