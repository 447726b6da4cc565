//! Prompt construction, LLM response parsing, label matching, and the two
//! batch classifiers: a live chat-completions client and a deterministic
//! mock oracle for offline runs.
//!
//! One request covers a whole batch of cases. The prompt follows a fixed
//! three-section template; the model must answer with a JSON object of
//! per-case predictions, which [`parse_response`] digs out of whatever
//! prose or code fences surround it.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::render_semantic;
use crate::rng::{fnv1a64, seeded_rng};
use crate::types::{normalize_label, LabelSpace, SampleRecord};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("suggestions cover {suggestions} cases but the batch has {batch}")]
    PromptMismatch { batch: usize, suggestions: usize },
    #[error("label order must list each of the {k} labels exactly once")]
    BadLabelOrder { k: usize },
    #[error("invalid llm config: {0}")]
    BadConfig(String),
    #[error("record {0:?} has no truth label; the mock oracle needs one")]
    MissingTruth(String),
    #[error("record {0:?} got an empty candidate set")]
    EmptyCandidates(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("authentication failed with status {0}")]
    AuthFailure(u16),
    #[error("request failed with status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed completion envelope: {0}")]
    Protocol(String),
    #[error("unusable model response: {0}")]
    Parse(String),
}

/// Whether batches go to a real endpoint or the offline oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    Live,
    #[default]
    Mock,
}

/// Parameters of the mock oracle: accuracy as a function of how many
/// candidate labels a case offers, interpolated log-linearly between the
/// two-candidate and full-label-space anchors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MockParams {
    pub accuracy_at_full: f64,
    pub accuracy_at_two: f64,
    pub seed: u64,
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            accuracy_at_full: 0.6,
            accuracy_at_two: 0.95,
            seed: 0,
        }
    }
}

impl MockParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        for (name, v) in [
            ("accuracy_at_full", self.accuracy_at_full),
            ("accuracy_at_two", self.accuracy_at_two),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LlmError::BadConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.accuracy_at_two < self.accuracy_at_full {
            return Err(LlmError::BadConfig(format!(
                "accuracy_at_two ({}) must be >= accuracy_at_full ({})",
                self.accuracy_at_two, self.accuracy_at_full
            )));
        }
        Ok(())
    }

    /// Simulated accuracy when choosing among `size` candidates out of a
    /// label space of `k`: the two-candidate anchor up to size 2, the
    /// full-space anchor at size >= k, log-linear in between.
    pub fn accuracy_for(&self, size: usize, k: usize) -> f64 {
        if size <= 2 {
            return self.accuracy_at_two;
        }
        if size >= k || k <= 2 {
            return self.accuracy_at_full;
        }
        let span = (k as f64).ln() - 2.0f64.ln();
        let pos = ((size as f64).ln() - 2.0f64.ln()) / span;
        self.accuracy_at_two + (self.accuracy_at_full - self.accuracy_at_two) * pos
    }
}

/// Connection and behavior settings for the LLM stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LlmConfig {
    pub mode: LlmMode,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; never stored on disk.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub retries: u32,
    pub mock: MockParams,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            mode: LlmMode::Mock,
            endpoint: "https://api.deepinfra.com/v1/openai".to_string(),
            model: "meta-llama/Meta-Llama-3.1-70B-Instruct".to_string(),
            api_key_env: "LSR_API_KEY".to_string(),
            temperature: 0.0,
            max_in_flight: 4,
            retries: 3,
            mock: MockParams::default(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature < 0.0 {
            return Err(LlmError::BadConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::BadConfig("max_in_flight must be >= 1".into()));
        }
        self.mock.validate()
    }
}

/// One model answer for one case in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_index: usize,
    pub analysis: String,
    /// Label text exactly as the model produced it.
    pub raw_label: String,
    /// Label id after matching, when the raw text resolved.
    pub resolved: Option<usize>,
}

/// Everything a backend needs to classify one batch.
pub struct BatchContext<'a> {
    pub records: Vec<&'a SampleRecord>,
    /// Presentation order of the full label list (a permutation of ids).
    pub label_order: &'a [usize],
    /// Ranked candidate label ids per case; `None` on the first pass.
    pub suggestions: Option<Vec<Vec<usize>>>,
    /// Distinguishes repeat queries of the same sample (iteration index,
    /// or resample index for self-consistency) so the mock oracle can
    /// redraw deterministically.
    pub draw: u64,
}

/// A batch classifier: the live client and the mock oracle both implement
/// this, and the engine only sees the trait.
pub trait LlmBackend: Send + Sync {
    fn classify_batch(
        &self,
        label_space: &LabelSpace,
        batch: &BatchContext,
    ) -> Result<Vec<CasePrediction>, LlmError>;

    /// Upper bound on concurrent in-flight batches the engine may run.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Render the three-section classification prompt for a batch.
///
/// The full category list appears in the Context section in
/// `label_order`; each case renders its semantic pairs, and — only when
/// `suggestions` is given — its ranked candidate labels.
pub fn build_prompt(
    records: &[&SampleRecord],
    label_space: &LabelSpace,
    label_order: &[usize],
    suggestions: Option<&[Vec<usize>]>,
) -> Result<String, LlmError> {
    if records.is_empty() {
        return Err(LlmError::EmptyBatch);
    }
    if let Some(s) = suggestions {
        if s.len() != records.len() {
            return Err(LlmError::PromptMismatch {
                batch: records.len(),
                suggestions: s.len(),
            });
        }
    }
    let k = label_space.len();
    {
        let mut seen = vec![false; k];
        if label_order.len() != k
            || !label_order.iter().all(|&id| {
                if id >= k || seen[id] {
                    false
                } else {
                    seen[id] = true;
                    true
                }
            })
        {
            return Err(LlmError::BadLabelOrder { k });
        }
    }

    let categories = label_order
        .iter()
        .map(|&id| label_space.name(id).unwrap())
        .collect::<Vec<_>>()
        .join(", ");

    let mut prompt = format!(
        "### Context ###\n\
         Your goal is to predict the correct category given the context for each case.\n\
         The categories are: [{categories}]\n\
         \n\
         ### Instructions ###\n\
         1. Write down your thinking in a step-by-step way.\n\
         2. You MUST pick one of the suggested categories.\n\
         3. Your output must be in JSON format structured as follows:\n   \
         {{\"predictions\": [{{\"Case\": 0, \"Analysis\": \"...\", \"Label\": \"...\"}}, ...]}}\n\
         4. You must analyze all cases individually.\n\
         \n\
         ### Cases ###"
    );
    for (i, record) in records.iter().enumerate() {
        prompt.push_str(&format!("\nCase {i}: {}", render_semantic(record)));
        if let Some(all) = suggestions {
            let quoted = all[i]
                .iter()
                .map(|&id| format!("'{}'", label_space.name(id).unwrap()))
                .collect::<Vec<_>>()
                .join(", ");
            prompt.push_str(&format!(", suggestions: [{quoted}]"));
        }
    }
    Ok(prompt)
}

/// Extract per-case predictions from raw model output.
///
/// Scans for the first balanced JSON object containing a "predictions"
/// key, ignoring fences and prose around it. Later duplicates of a case
/// override earlier ones; indices beyond the batch are dropped; any case
/// index in `0..n_cases` left unanswered is an error.
pub fn parse_response(text: &str, n_cases: usize) -> Result<Vec<CasePrediction>, LlmError> {
    let object = first_json_object_with_key(text, "predictions")
        .ok_or_else(|| LlmError::Parse("no JSON object with a \"predictions\" key".into()))?;
    let entries = object
        .get("predictions")
        .and_then(serde_json::Value::as_array)
        .ok_or_else(|| LlmError::Parse("\"predictions\" is not an array".into()))?;

    let mut slots: Vec<Option<CasePrediction>> = vec![None; n_cases];
    for (i, entry) in entries.iter().enumerate() {
        let case = entry
            .get("Case")
            .and_then(value_as_index)
            .ok_or_else(|| LlmError::Parse(format!("entry {i} is missing \"Case\"")))?;
        let raw_label = match entry.get("Label") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(LlmError::Parse(format!("entry {i} is missing \"Label\""))),
        };
        let analysis = entry
            .get("Analysis")
            .and_then(serde_json::Value::as_str)
            .unwrap_or_default()
            .to_string();
        if case < n_cases {
            slots[case] = Some(CasePrediction {
                case_index: case,
                analysis,
                raw_label,
                resolved: None,
            });
        }
    }
    let missing: Vec<String> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| i.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(LlmError::Parse(format!(
            "missing cases {{{}}}",
            missing.join(", ")
        )));
    }
    Ok(slots.into_iter().map(Option::unwrap).collect())
}

fn value_as_index(v: &serde_json::Value) -> Option<usize> {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                Some(u as usize)
            } else {
                n.as_f64()
                    .filter(|f| f.fract() == 0.0 && *f >= 0.0)
                    .map(|f| f as usize)
            }
        }
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Find the first balanced `{...}` in `text` that parses as JSON and
/// contains `key`. String-aware: braces inside quoted strings don't count.
fn first_json_object_with_key(text: &str, key: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(open) = text[start..].find('{').map(|i| start + i) {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(end) => {
                if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[open..=end]) {
                    if value.get(key).is_some() {
                        return Some(value);
                    }
                }
                start = open + 1;
            }
            None => return None,
        }
    }
    None
}

/// Resolve a raw label string to an id.
///
/// The ladder: exact name match, then normalized match (case, whitespace,
/// surrounding quotes), then a unique substring match in either direction.
/// When several labels substring-match but exactly one sits in the
/// supplied candidate set, the candidate wins. Anything else is
/// unresolved and left to the caller's fallback.
pub fn match_label(
    raw: &str,
    label_space: &LabelSpace,
    candidates: Option<&[usize]>,
) -> Option<usize> {
    if let Some(id) = label_space.names().iter().position(|n| n == raw) {
        return Some(id);
    }
    let stripped = strip_quotes(raw.trim());
    let norm = normalize_label(stripped);
    if norm.is_empty() {
        return None;
    }
    if let Some(id) = label_space.id_of(&norm) {
        return Some(id);
    }
    let matches: Vec<usize> = label_space
        .names()
        .iter()
        .enumerate()
        .filter(|(_, name)| {
            let n = normalize_label(name);
            n.contains(&norm) || norm.contains(&n)
        })
        .map(|(id, _)| id)
        .collect();
    match matches.len() {
        0 => None,
        1 => Some(matches[0]),
        _ => {
            let shortlisted: Vec<usize> = match candidates {
                Some(set) => matches.iter().copied().filter(|m| set.contains(m)).collect(),
                None => return None,
            };
            if shortlisted.len() == 1 {
                Some(shortlisted[0])
            } else {
                None
            }
        }
    }
}

fn strip_quotes(s: &str) -> &str {
    for quote in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(quote) && s.ends_with(quote) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// Deterministic offline stand-in for the live model.
///
/// Accuracy depends only on candidate-set size (see
/// [`MockParams::accuracy_for`]); answers never leave the candidate set.
/// Each (sample id, draw) pair gets its own RNG stream, so resumed or
/// reordered runs reproduce identical answers.
pub struct MockLlm {
    pub params: MockParams,
    pub parallelism: usize,
}

impl MockLlm {
    pub fn new(params: MockParams) -> Self {
        Self {
            params,
            parallelism: 4,
        }
    }
}

/// Produce mock predictions for a batch; the core of [`MockLlm`],
/// callable directly in tests.
pub fn mock_llm(
    records: &[&SampleRecord],
    suggestions: Option<&[Vec<usize>]>,
    label_space: &LabelSpace,
    params: &MockParams,
    draw: u64,
) -> Result<Vec<CasePrediction>, LlmError> {
    if records.is_empty() {
        return Err(LlmError::EmptyBatch);
    }
    params.validate()?;
    if let Some(s) = suggestions {
        if s.len() != records.len() {
            return Err(LlmError::PromptMismatch {
                batch: records.len(),
                suggestions: s.len(),
            });
        }
    }
    let k = label_space.len();
    let full: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let set: &[usize] = match suggestions {
            Some(all) => {
                if all[i].is_empty() {
                    return Err(LlmError::EmptyCandidates(record.id.clone()));
                }
                &all[i]
            }
            None => &full,
        };
        let truth = record
            .truth
            .ok_or_else(|| LlmError::MissingTruth(record.id.clone()))?;

        let mut key = params.seed.to_le_bytes().to_vec();
        key.extend_from_slice(record.id.as_bytes());
        key.extend_from_slice(&draw.to_le_bytes());
        let mut rng = seeded_rng(fnv1a64(&key));

        use rand::Rng;
        let accuracy = params.accuracy_for(set.len(), k);
        let chosen = if set.contains(&truth) {
            if rng.gen::<f64>() < accuracy || set.len() == 1 {
                truth
            } else {
                let wrong: Vec<usize> = set.iter().copied().filter(|&s| s != truth).collect();
                wrong[rng.gen_range(0..wrong.len())]
            }
        } else {
            set[rng.gen_range(0..set.len())]
        };
        out.push(CasePrediction {
            case_index: i,
            analysis: format!("mock analysis for case {i}"),
            raw_label: label_space.name(chosen).unwrap().to_string(),
            resolved: Some(chosen),
        });
    }
    Ok(out)
}

impl LlmBackend for MockLlm {
    fn classify_batch(
        &self,
        label_space: &LabelSpace,
        batch: &BatchContext,
    ) -> Result<Vec<CasePrediction>, LlmError> {
        mock_llm(
            &batch.records,
            batch.suggestions.as_deref(),
            label_space,
            &self.params,
            batch.draw,
        )
    }

    fn max_in_flight(&self) -> usize {
        self.parallelism
    }
}

/// Chat-completions client with bounded retries and exponential backoff.
pub struct LiveClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
    retries: u32,
    max_in_flight: usize,
}

impl LiveClient {
    /// Build a client from config, reading the API key from the
    /// configured environment variable.
    pub fn new(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(config.api_key_env.clone()))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(120))
            .build();
        Ok(Self {
            agent,
            endpoint: config.endpoint.trim_end_matches('/').to_string(),
            model: config.model.clone(),
            api_key,
            temperature: config.temperature,
            retries: config.retries,
            max_in_flight: config.max_in_flight,
        })
    }

    /// Send one prompt and return the assistant text, retrying transport
    /// errors, 5xx, and 429 with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.endpoint);
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                use rand::Rng;
                let jitter: f64 = rand::thread_rng().gen();
                std::thread::sleep(backoff_delay(attempt - 1, jitter));
            }
            let result = self
                .agent
                .post(&url)
                .set("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body.clone());
            match result {
                Ok(response) => {
                    let envelope: serde_json::Value = response
                        .into_json()
                        .map_err(|e| LlmError::Protocol(e.to_string()))?;
                    let content = envelope
                        .get("choices")
                        .and_then(|c| c.get(0))
                        .and_then(|c| c.get("message"))
                        .and_then(|m| m.get("content"))
                        .and_then(serde_json::Value::as_str)
                        .ok_or_else(|| {
                            LlmError::Protocol("no choices[0].message.content".into())
                        })?;
                    return Ok(content.to_string());
                }
                Err(ureq::Error::Status(status, response)) => {
                    if status == 401 || status == 403 {
                        return Err(LlmError::AuthFailure(status));
                    }
                    let body = response.into_string().unwrap_or_default();
                    if status == 429 || (500..600).contains(&status) {
                        last_error = format!("status {status}: {body}");
                        continue;
                    }
                    return Err(LlmError::Http { status, body });
                }
                Err(ureq::Error::Transport(t)) => {
                    last_error = t.to_string();
                    continue;
                }
            }
        }
        Err(LlmError::ExhaustedRetries {
            attempts: self.retries + 1,
            last: last_error,
        })
    }
}

/// Backoff before retry number `attempt` (0-based): 1s * 2^attempt,
/// stretched by up to 25% jitter.
pub fn backoff_delay(attempt: u32, jitter01: f64) -> Duration {
    let base = Duration::from_secs(1).as_secs_f64() * 2f64.powi(attempt as i32);
    Duration::from_secs_f64(base * (1.0 + 0.25 * jitter01.clamp(0.0, 1.0)))
}

impl LlmBackend for LiveClient {
    fn classify_batch(
        &self,
        label_space: &LabelSpace,
        batch: &BatchContext,
    ) -> Result<Vec<CasePrediction>, LlmError> {
        let prompt = build_prompt(
            &batch.records,
            label_space,
            batch.label_order,
            batch.suggestions.as_deref(),
        )?;
        let text = self.complete(&prompt)?;
        let mut predictions = parse_response(&text, batch.records.len())?;
        for prediction in &mut predictions {
            let candidates = batch
                .suggestions
                .as_ref()
                .map(|all| all[prediction.case_index].as_slice());
            prediction.resolved = match_label(&prediction.raw_label, label_space, candidates);
        }
        Ok(predictions)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
