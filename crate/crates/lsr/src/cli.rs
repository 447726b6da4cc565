//! Command-line surface: configure and launch runs, distill and deploy
//! classifiers, evaluate predictions, and run the desk-scale ablations.
//!
//! Configuration is layered: command-line flags override the TOML config
//! file, which overrides built-in defaults. The effective configuration
//! is persisted next to each command's outputs. Exit codes group errors
//! by what the operator has to fix: 2 configuration, 3 data, 4 LLM
//! backend, 5 filesystem.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierError, TrainedClassifier};
use crate::engine::{
    direct_infer, distill, load_run, run_lsr, EngineError, InferMode, KTarget, RunConfig,
};
use crate::ingest::{load_dataset, load_label_space, IngestError, IngestSpec};
use crate::llm::{LiveClient, LlmBackend, LlmConfig, LlmError, LlmMode, MockLlm};
use crate::metrics::{
    embedding_rank, hit_at_k, iteration_report, macro_f1, render_report_table, IterationReportRow,
    MetricsError,
};
use crate::rng::derive_seed;
use crate::selection::{
    calibrate_strategy, filter_label_space, rank, sample_weights, SelectionParams, Strategy,
};
use crate::synth::{generate, SynthSpec};
use crate::types::{Dataset, PredictionVector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_LLM: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// A failure already sorted into the exit-code category it belongs to.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Llm(String),
    Io(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Llm(_) => "llm",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Llm(_) => EXIT_LLM,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Llm(m) | CliError::Io(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::BadConfig(_)
            | EngineError::ConfigMismatch { .. }
            | EngineError::Selection(_) => CliError::Config(e.to_string()),
            EngineError::Llm(inner) => match inner {
                LlmError::BadConfig(_) | LlmError::MissingApiKey(_) => {
                    CliError::Config(e.to_string())
                }
                _ => CliError::Llm(e.to_string()),
            },
            EngineError::Classifier(ClassifierError::BadConfig(_)) => {
                CliError::Config(e.to_string())
            }
            EngineError::InvalidDataset(_)
            | EngineError::Classifier(_)
            | EngineError::Metrics(_)
            | EngineError::EmptyHistory
            | EngineError::LabelSpaceMismatch => CliError::Data(e.to_string()),
            EngineError::Io { .. } | EngineError::ResumeCorrupt { .. } => {
                CliError::Io(e.to_string())
            }
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match &e {
            IngestError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match &e {
            ClassifierError::BadConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match &e {
            LlmError::BadConfig(_) | LlmError::MissingApiKey(_) => CliError::Config(e.to_string()),
            _ => CliError::Llm(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// The `[run]` section of the config file; mirrors [`RunConfig`] minus
/// its nested sections, which get their own tables.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunSection {
    pub k_target: KTarget,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            k_target: d.k_target,
            iterations: d.iterations,
            batch_size: d.batch_size,
            seed: d.seed,
            strategy: d.strategy,
        }
    }
}

/// Root structure of the TOML config file: `[run]`, `[classifier]`,
/// `[llm]` (with `[llm.mock]`), and `[ingest]` (with `[ingest.columns]`).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CliConfig {
    pub run: RunSection,
    pub classifier: ClassifierConfig,
    pub llm: LlmConfig,
    pub ingest: IngestSpec,
}

impl CliConfig {
    pub fn to_run_config(&self) -> RunConfig {
        RunConfig {
            k_target: self.run.k_target,
            iterations: self.run.iterations,
            batch_size: self.run.batch_size,
            seed: self.run.seed,
            strategy: self.run.strategy,
            classifier: self.classifier.clone(),
            llm: self.llm.clone(),
        }
    }
}

fn load_cli_config(path: Option<&Path>) -> Result<CliConfig, CliError> {
    match path {
        None => Ok(CliConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn parse_k_target(s: &str) -> Result<KTarget, CliError> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(KTarget::Full);
    }
    s.parse::<f64>()
        .map(KTarget::Target)
        .map_err(|_| CliError::Config(format!("bad k-target {s:?}: expected a number or \"full\"")))
}

fn build_backend(config: &LlmConfig) -> Result<Box<dyn LlmBackend>, CliError> {
    config.validate()?;
    match config.mode {
        LlmMode::Mock => Ok(Box::new(MockLlm::new(config.mock.clone()))),
        LlmMode::Live => Ok(Box::new(LiveClient::new(config)?)),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "lsr",
    version,
    about = "Iterative label space reduction: LLM passes train a classifier whose rankings shrink the label set fed back to the LLM"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full refinement loop over a dataset
    Run(RunArgs),
    /// Compress a finished run into one standalone classifier
    Distill(DistillArgs),
    /// Classify a dataset with a trained classifier blob
    Infer(InferArgs),
    /// Compare candidate-selection strategies across target sizes
    AblateSampling(AblateArgs),
    /// Compare classifier rankings against embedding-cosine rankings
    RankCompare(RankCompareArgs),
    /// Generate the synthetic Gaussian-cluster benchmark
    Bench(BenchArgs),
    /// Score an existing predictions file against dataset truth
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input dataset: .jsonl/.ndjson/.json for line-delimited JSON,
    /// anything else parses as CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Label space file, one label per line
    #[arg(long)]
    labels: PathBuf,
}

impl DataArgs {
    fn load(&self, ingest: &IngestSpec) -> Result<Dataset, CliError> {
        let space = load_label_space(&self.labels)?;
        Ok(load_dataset(&self.data, ingest, &space)?)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML config file; missing sections fall back to defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create or resume
    #[arg(long)]
    out: PathBuf,
    /// Refinement iterations after the initial pass
    #[arg(long)]
    iterations: Option<usize>,
    /// Desired average candidate-set size, or "full" for no reduction
    #[arg(long)]
    k_target: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate selection strategy: top_k, top_p, min_p, min_p_plus,
    /// min_p_plus_weighted, or full
    #[arg(long)]
    strategy: Option<String>,
    /// LLM backend: mock or live
    #[arg(long)]
    llm_mode: Option<String>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Finished run directory to distill
    #[arg(long)]
    run_dir: PathBuf,
    /// Where to write the classifier blob
    #[arg(long)]
    out: PathBuf,
    /// TOML config file (ingest section)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained classifier blob
    #[arg(long)]
    classifier: PathBuf,
    /// Where to write predictions (line-delimited JSON)
    #[arg(long)]
    out: PathBuf,
    /// plain: classifier argmax; with-llm: one LLM pass over each
    /// sample's reduced candidate set
    #[arg(long, default_value = "plain")]
    mode: String,
    /// TOML config file (ingest and llm sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Average candidate-set size for with-llm mode
    #[arg(long)]
    k_target: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Take the classifier from the last iteration of this run directory
    #[arg(long, conflicts_with = "classifier")]
    run_dir: Option<PathBuf>,
    /// Or load this classifier blob directly
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Comma-separated target average candidate-set sizes
    #[arg(long, default_value = "1.5,2,3,5")]
    k_grid: String,
    /// TOML config file (ingest section)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankCompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON file holding one embedding array per label, in label order
    #[arg(long)]
    label_embeddings: PathBuf,
    /// Take the classifier from the last iteration of this run directory
    #[arg(long, conflicts_with = "classifier")]
    run_dir: Option<PathBuf>,
    /// Or load this classifier blob directly
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// TOML config file (ingest section)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory to fill with data.jsonl, labels.txt, and config.toml
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Predictions file: line-delimited JSON with "id" and "label" keys
    #[arg(long)]
    preds: PathBuf,
    /// TOML config file (ingest section)
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parse arguments and dispatch, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Infer(args) => cmd_infer(args),
        Command::AblateSampling(args) => cmd_ablate_sampling(args),
        Command::RankCompare(args) => cmd_rank_compare(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn render_iteration_table(rows: &[IterationReportRow]) -> String {
    let mut out = format!(
        "{:>4}  {:>9}  {:>9}  {:>10}  {:>9}\n",
        "iter", "macro_f1", "vote_f1", "mean_cands", "cand_hit"
    );
    let opt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    };
    for row in rows {
        out.push_str(&format!(
            "{:>4}  {:>9.4}  {:>9.4}  {:>10}  {:>9}\n",
            row.t,
            row.macro_f1,
            row.vote_macro_f1,
            opt(row.mean_candidate_size),
            opt(row.candidate_hit_rate),
        ));
    }
    out
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut config = load_cli_config(args.config.as_deref())?;
    if let Some(v) = args.iterations {
        config.run.iterations = v;
    }
    if let Some(s) = &args.k_target {
        config.run.k_target = parse_k_target(s)?;
    }
    if let Some(v) = args.batch_size {
        config.run.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.run.seed = v;
    }
    if let Some(s) = &args.strategy {
        config.run.strategy = s
            .parse::<Strategy>()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(s) = &args.llm_mode {
        config.llm.mode = match s.to_ascii_lowercase().as_str() {
            "mock" => LlmMode::Mock,
            "live" => LlmMode::Live,
            other => {
                return Err(CliError::Config(format!(
                    "bad llm-mode {other:?}: expected mock or live"
                )))
            }
        };
    }

    let dataset = args.data.load(&config.ingest)?;
    let run_config = config.to_run_config();
    let backend = build_backend(&run_config.llm)?;
    let history = run_lsr(
        &dataset,
        &run_config,
        backend.as_ref(),
        &crate::classifier::LogisticBackend,
        &args.out,
    )?;

    println!(
        "run complete: {} samples, {} labels, {} passes -> {}",
        dataset.len(),
        dataset.label_space.len(),
        history.records.len(),
        args.out.display()
    );
    if let Some(truth) = dataset.truth_vector() {
        let rows = iteration_report(&history.records, &truth, dataset.label_space.len())?;
        print!("{}", render_iteration_table(&rows));
        let report = macro_f1(&history.final_predictions, &truth, dataset.label_space.len())?;
        println!("final vote macro F1: {:.4}", report.macro_f1);
    }
    Ok(())
}

fn cmd_distill(args: DistillArgs) -> Result<(), CliError> {
    let config = load_cli_config(args.config.as_deref())?;
    let dataset = args.data.load(&config.ingest)?;
    let history = load_run(&args.run_dir, &dataset)?;
    let passes: Vec<PredictionVector> = history
        .records
        .iter()
        .map(|r| r.predictions.clone())
        .collect();
    let mut clf_config = history.config.classifier.clone();
    clf_config.seed = derive_seed(history.config.seed, "distill", 0);
    let model = distill(
        &dataset,
        &passes,
        &clf_config,
        &crate::classifier::LogisticBackend,
    )?;
    let blob = model.to_blob();
    std::fs::write(&args.out, &blob).map_err(io_err(&args.out))?;

    let meta = serde_json::json!({
        "source_run_dir": args.run_dir.display().to_string(),
        "passes": passes.len(),
        "training_rows": dataset.len() * passes.len(),
        "classes": model.k(),
        "feature_dim": model.d(),
        "epochs_used": model.epochs_used,
        "final_holdout_loss": model.final_holdout_loss,
        "classifier": clf_config,
    });
    let meta_path = sibling_meta(&args.out);
    std::fs::write(&meta_path, format!("{meta:#}\n")).map_err(io_err(&meta_path))?;

    println!(
        "distilled {} passes x {} samples into {} ({} classes, {} features, {} epochs)",
        passes.len(),
        dataset.len(),
        args.out.display(),
        model.k(),
        model.d(),
        model.epochs_used,
    );
    Ok(())
}

fn sibling_meta(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct PredsLine {
    id: String,
    label: usize,
    label_name: String,
}

fn write_predictions(
    path: &Path,
    dataset: &Dataset,
    preds: &PredictionVector,
) -> Result<(), CliError> {
    let mut buffer = String::new();
    for (record, &label) in dataset.records.iter().zip(&preds.preds) {
        let line = PredsLine {
            id: record.id.clone(),
            label,
            label_name: dataset
                .label_space
                .name(label)
                .unwrap_or_default()
                .to_string(),
        };
        buffer.push_str(&serde_json::to_string(&line).expect("prediction line serializes"));
        buffer.push('\n');
    }
    std::fs::write(path, buffer).map_err(io_err(path))
}

fn cmd_infer(args: InferArgs) -> Result<(), CliError> {
    let config = load_cli_config(args.config.as_deref())?;
    let dataset = args.data.load(&config.ingest)?;
    let blob = std::fs::read(&args.classifier).map_err(io_err(&args.classifier))?;
    let model = TrainedClassifier::from_blob(&blob)?;

    let k_target = args.k_target.unwrap_or(2.0);
    let batch_size = args.batch_size.unwrap_or(config.run.batch_size);
    let seed = args.seed.unwrap_or(config.run.seed);
    let outcome = match args.mode.as_str() {
        "plain" => direct_infer(&model, &dataset, InferMode::Plain)?,
        "with-llm" => {
            let backend = build_backend(&config.llm)?;
            direct_infer(
                &model,
                &dataset,
                InferMode::WithLlm {
                    llm: backend.as_ref(),
                    k_target,
                    batch_size,
                    seed,
                },
            )?
        }
        other => {
            return Err(CliError::Config(format!(
                "bad mode {other:?}: expected plain or with-llm"
            )))
        }
    };
    write_predictions(&args.out, &dataset, &outcome.predictions)?;

    let meta = serde_json::json!({
        "classifier": args.classifier.display().to_string(),
        "mode": args.mode,
        "k_target": if args.mode == "with-llm" { Some(k_target) } else { None },
        "threshold_p": outcome.threshold_p,
        "mean_candidate_size": outcome.mean_candidate_size,
        "samples": dataset.len(),
    });
    let meta_path = sibling_meta(&args.out);
    std::fs::write(&meta_path, format!("{meta:#}\n")).map_err(io_err(&meta_path))?;

    println!(
        "wrote {} predictions to {}",
        dataset.len(),
        args.out.display()
    );
    if let (Some(p), Some(mean)) = (outcome.threshold_p, outcome.mean_candidate_size) {
        println!("candidate threshold p = {p:.4}, weighted mean candidate size = {mean:.3}");
    }
    if let Some(truth) = dataset.truth_vector() {
        let report = macro_f1(&outcome.predictions, &truth, dataset.label_space.len())?;
        print!(
            "{}",
            render_report_table(&report, &dataset.label_space)
        );
    }
    Ok(())
}

/// Load a classifier either from an explicit blob or from the last
/// iteration of a run directory.
fn load_model_source(
    run_dir: Option<&Path>,
    classifier: Option<&Path>,
    dataset: &Dataset,
) -> Result<TrainedClassifier, CliError> {
    match (run_dir, classifier) {
        (_, Some(path)) => {
            let blob = std::fs::read(path).map_err(io_err(path))?;
            Ok(TrainedClassifier::from_blob(&blob)?)
        }
        (Some(dir), None) => {
            let history = load_run(dir, dataset)?;
            let last = history.records.last().ok_or_else(|| {
                CliError::Data(format!("run directory {} holds no iterations", dir.display()))
            })?;
            Ok(TrainedClassifier::from_blob(&last.classifier_blob)?)
        }
        (None, None) => Err(CliError::Config(
            "supply --run-dir or --classifier".to_string(),
        )),
    }
}

fn cmd_ablate_sampling(args: AblateArgs) -> Result<(), CliError> {
    let config = load_cli_config(args.config.as_deref())?;
    let dataset = args.data.load(&config.ingest)?;
    let truth = dataset
        .truth_vector()
        .ok_or_else(|| CliError::Data("ablation needs truth labels in the dataset".to_string()))?;
    let model = load_model_source(args.run_dir.as_deref(), args.classifier.as_deref(), &dataset)?;
    if model.label_space_hash() != dataset.label_space.hash64() {
        return Err(CliError::Data(
            "classifier was trained against a different label space".to_string(),
        ));
    }
    let grid: Vec<f64> = args
        .k_grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad k-grid entry {s:?}")))
        })
        .collect::<Result<_, _>>()?;

    let features = dataset.feature_matrix();
    let probs = model.predict_proba(&features)?;
    let k = dataset.label_space.len();
    let current = PredictionVector {
        preds: probs.rows().map(|row| rank(row)[0]).collect(),
        rationales: None,
    };
    let uniform = vec![1.0; dataset.len()];
    let weighted = sample_weights(&current, k);

    println!(
        "{:<22}  {:>8}  {:>10}  {:>10}  {:>8}",
        "strategy", "k_target", "param", "mean_size", "hit_rate"
    );
    let strategies = [
        Strategy::TopK,
        Strategy::TopP,
        Strategy::MinP,
        Strategy::MinPPlus,
        Strategy::MinPPlusWeighted,
    ];
    for &strategy in &strategies {
        for &k_target in &grid {
            let weights: &[f64] = if strategy == Strategy::MinPPlusWeighted {
                &weighted
            } else {
                &uniform
            };
            let param = calibrate_strategy(&probs, &current, k_target, weights, strategy)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let sets = filter_label_space(
                &probs,
                &SelectionParams {
                    strategy,
                    k: param as usize,
                    p: param,
                    current_predictions: Some(&current),
                    weights: Some(weights),
                },
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let total_w: f64 = weights.iter().sum();
            let mean = sets
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.len() as f64)
                .sum::<f64>()
                / total_w;
            let hits = sets
                .iter()
                .zip(&truth.preds)
                .filter(|(s, &t)| s.contains(t))
                .count();
            println!(
                "{:<22}  {:>8}  {:>10.4}  {:>10.3}  {:>8.4}",
                strategy.as_str(),
                k_target,
                param,
                mean,
                hits as f64 / dataset.len() as f64
            );
        }
    }
    println!(
        "{:<22}  {:>8}  {:>10.4}  {:>10.3}  {:>8.4}",
        Strategy::Full.as_str(),
        "-",
        0.0,
        k as f64,
        1.0
    );
    Ok(())
}

fn cmd_rank_compare(args: RankCompareArgs) -> Result<(), CliError> {
    let config = load_cli_config(args.config.as_deref())?;
    let dataset = args.data.load(&config.ingest)?;
    let truth = dataset.truth_vector().ok_or_else(|| {
        CliError::Data("rank comparison needs truth labels in the dataset".to_string())
    })?;
    let model = load_model_source(args.run_dir.as_deref(), args.classifier.as_deref(), &dataset)?;
    if model.label_space_hash() != dataset.label_space.hash64() {
        return Err(CliError::Data(
            "classifier was trained against a different label space".to_string(),
        ));
    }
    let text =
        std::fs::read_to_string(&args.label_embeddings).map_err(io_err(&args.label_embeddings))?;
    let label_embeddings: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| {
        CliError::Data(format!("{}: {e}", args.label_embeddings.display()))
    })?;
    let k = dataset.label_space.len();
    if label_embeddings.len() != k {
        return Err(CliError::Data(format!(
            "{} label embeddings for {} labels",
            label_embeddings.len(),
            k
        )));
    }

    let features = dataset.feature_matrix();
    let probs = model.predict_proba(&features)?;
    let classifier_rankings: Vec<Vec<usize>> = probs.rows().map(rank).collect();
    let embedding_rankings = embedding_rank(&features, &label_embeddings)?;

    println!("{:>4}  {:>14}  {:>13}", "k", "classifier_hit", "embedding_hit");
    for cut in 1..=k {
        let c = hit_at_k(&classifier_rankings, &truth, cut)?;
        let e = hit_at_k(&embedding_rankings, &truth, cut)?;
        println!("{cut:>4}  {c:>14.4}  {e:>13.4}");
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        separation: args.separation,
        seed: args.seed,
    };
    let dataset = generate(&spec);
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let data_path = args.out.join("data.jsonl");
    let mut buffer = String::new();
    for record in &dataset.records {
        let mut object = serde_json::Map::new();
        object.insert("id".into(), serde_json::Value::String(record.id.clone()));
        let truth = record.truth.expect("benchmark records carry truth");
        object.insert(
            "label".into(),
            serde_json::Value::String(
                dataset
                    .label_space
                    .name(truth)
                    .expect("truth in range")
                    .to_string(),
            ),
        );
        for (j, &v) in record.features.iter().enumerate() {
            object.insert(
                format!("f{j}"),
                serde_json::Value::Number(
                    serde_json::Number::from_f64(v).expect("finite feature"),
                ),
            );
        }
        buffer.push_str(&serde_json::to_string(&object).expect("record serializes"));
        buffer.push('\n');
    }
    std::fs::write(&data_path, buffer).map_err(io_err(&data_path))?;

    let labels_path = args.out.join("labels.txt");
    let mut labels = dataset.label_space.names().join("\n");
    labels.push('\n');
    std::fs::write(&labels_path, labels).map_err(io_err(&labels_path))?;

    let mut config = CliConfig::default();
    config.run.seed = args.seed;
    config.ingest.default_directive = crate::ingest::ColumnDirective::PassthroughNumeric;
    config.ingest.id_column = Some("id".to_string());
    config.ingest.label_column = Some("label".to_string());
    let config_path = args.out.join("config.toml");
    let rendered = toml::to_string_pretty(&config)
        .map_err(|e| CliError::Config(format!("unserializable config: {e}")))?;
    std::fs::write(&config_path, rendered).map_err(io_err(&config_path))?;

    println!(
        "benchmark written to {}: {} records, {} classes, {} features",
        args.out.display(),
        dataset.len(),
        dataset.label_space.len(),
        args.dim
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let config = load_cli_config(args.config.as_deref())?;
    let dataset = args.data.load(&config.ingest)?;
    let truth = dataset
        .truth_vector()
        .ok_or_else(|| CliError::Data("evaluation needs truth labels in the dataset".to_string()))?;

    let text = std::fs::read_to_string(&args.preds).map_err(io_err(&args.preds))?;
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let k = dataset.label_space.len();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{} line {}: {e}", args.preds.display(), lineno + 1))
        })?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{} line {}: missing \"id\"",
                    args.preds.display(),
                    lineno + 1
                ))
            })?
            .to_string();
        let label = value
            .get("label")
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .or_else(|| {
                value
                    .get("label_name")
                    .and_then(|v| v.as_str())
                    .and_then(|name| dataset.label_space.id_of(name))
            })
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{} line {}: missing usable \"label\"",
                    args.preds.display(),
                    lineno + 1
                ))
            })?;
        if label >= k {
            return Err(CliError::Data(format!(
                "{} line {}: label {label} out of range for {k} classes",
                args.preds.display(),
                lineno + 1
            )));
        }
        if by_id.insert(id.clone(), label).is_some() {
            return Err(CliError::Data(format!(
                "{}: duplicate prediction for id {id:?}",
                args.preds.display()
            )));
        }
    }

    let mut preds = Vec::with_capacity(dataset.len());
    for record in &dataset.records {
        match by_id.get(&record.id) {
            Some(&label) => preds.push(label),
            None => {
                return Err(CliError::Data(format!(
                    "{}: no prediction for id {:?}",
                    args.preds.display(),
                    record.id
                )))
            }
        }
    }
    let preds = PredictionVector {
        preds,
        rationales: None,
    };
    let report = macro_f1(&preds, &truth, k)?;
    print!("{}", render_report_table(&report, &dataset.label_space));
    Ok(())
}
