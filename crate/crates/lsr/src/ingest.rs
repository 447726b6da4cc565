//! Dataset loading and preprocessing.
//!
//! Two on-disk formats are supported: line-delimited JSON records and
//! CSV with a header row. Both are lowered into a [`RawTable`] and then
//! assembled into a [`Dataset`](crate::types::Dataset) according to an
//! [`IngestSpec`]: every non-dropped column feeds the semantic view, and
//! columns marked numeric additionally feed the feature vector, either as
//! first-occurrence categorical codes or as parsed reals. A precomputed
//! embedding vector can ride along in a designated column.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded_rng;
use crate::types::{validate_dataset, Dataset, LabelSpace, PredictionVector, SampleRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("column {0:?} not found in table")]
    MissingColumn(String),
    #[error("no feature source: no numeric columns, no feature vector column, and no semantic columns")]
    MissingFeatureSource,
    #[error("row {row}: label {value:?} is not in the label space")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: cannot parse feature vector {value:?}: {detail}")]
    BadFeatureVector {
        row: usize,
        value: String,
        detail: String,
    },
    #[error("loaded dataset is invalid: {0}")]
    InvalidDataset(String),
    #[error("subsample fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("no strata available: record {0:?} has no truth label and no strata were supplied")]
    MissingStrata(String),
    #[error("strata length {got} does not match dataset size {expected}")]
    StrataLength { got: usize, expected: usize },
}

/// A rectangular table of string cells with named columns, the common
/// shape both loaders reduce to.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Index of the id column, when one was designated; otherwise the row
    /// index serves as the id.
    pub id_column: Option<usize>,
}

impl RawTable {
    /// Build a table, rejecting duplicate column names and ragged rows.
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(IngestError::DuplicateColumn(c.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(IngestError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: columns.len(),
                });
            }
        }
        Ok(Self {
            columns,
            rows,
            id_column: None,
        })
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// What to do with one source column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColumnDirective {
    /// Semantic view only.
    #[default]
    SemanticOnly,
    /// Semantic view plus a first-occurrence integer code in the features.
    CategoricalNumeric,
    /// Semantic view plus the value parsed as a real in the features.
    PassthroughNumeric,
    /// Excluded from both views.
    Drop,
}

/// Column handling rules for [`load_dataset`].
///
/// Columns without an explicit directive get `default_directive`
/// (semantic-only unless overridden). The reserved names `id`, `features`,
/// and `label` are picked up automatically when the corresponding option
/// is left unset and a column with that name exists.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct IngestSpec {
    /// Per-column directives, keyed by column name.
    pub columns: std::collections::BTreeMap<String, ColumnDirective>,
    /// Directive for columns not listed in `columns`.
    pub default_directive: ColumnDirective,
    /// Column holding the unique record id.
    pub id_column: Option<String>,
    /// Column holding a precomputed feature vector (a JSON-style array of
    /// numbers). Appended after any per-column numeric features.
    pub feature_vector_column: Option<String>,
    /// Column holding the ground-truth label name; empty cells mean no truth.
    pub label_column: Option<String>,
}

/// Load a dataset from `path`, choosing the format by extension:
/// `.jsonl`/`.ndjson`/`.json` parse as line-delimited JSON objects,
/// anything else as CSV with a header row.
pub fn load_dataset(
    path: &Path,
    spec: &IngestSpec,
    label_space: &LabelSpace,
) -> Result<Dataset, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let table = match ext.as_str() {
        "jsonl" | "ndjson" | "json" => read_jsonl(path)?,
        _ => read_csv(path)?,
    };
    build_dataset(&table, spec, label_space)
}

/// Parse line-delimited JSON objects into a table. The first line fixes
/// the column order; later lines must carry exactly the same keys.
pub fn read_jsonl(path: &Path) -> Result<RawTable, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| IngestError::Parse {
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        if columns.is_empty() {
            columns = value.keys().cloned().collect();
        }
        let mut row = Vec::with_capacity(columns.len());
        for col in &columns {
            let cell = value.get(col).ok_or_else(|| IngestError::Parse {
                line: lineno + 1,
                detail: format!("missing key {col:?}"),
            })?;
            row.push(json_cell_to_string(cell));
        }
        if value.len() != columns.len() {
            let extra: Vec<&String> =
                value.keys().filter(|k| !columns.contains(k)).collect();
            return Err(IngestError::Parse {
                line: lineno + 1,
                detail: format!("unexpected keys {extra:?}"),
            });
        }
        rows.push(row);
    }
    RawTable::new(columns, rows)
}

fn json_cell_to_string(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        // Arrays keep their JSON text so feature vectors can be re-parsed.
        other => other.to_string(),
    }
}

/// Parse a CSV file with a header row into a table.
pub fn read_csv(path: &Path) -> Result<RawTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| IngestError::Parse {
            line: 0,
            detail: e.to_string(),
        })?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            detail: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Parse {
            line: i + 2,
            detail: e.to_string(),
        })?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    RawTable::new(columns, rows)
}

/// Assemble a dataset from a table per the [`IngestSpec`]. Every non-dropped,
/// non-reserved column becomes a semantic pair; numeric directives also
/// contribute features, in source column order, followed by the
/// precomputed vector when one is designated.
pub fn build_dataset(
    table: &RawTable,
    spec: &IngestSpec,
    label_space: &LabelSpace,
) -> Result<Dataset, IngestError> {
    let resolve = |explicit: &Option<String>, reserved: &str| -> Result<Option<usize>, IngestError> {
        match explicit {
            Some(name) => table
                .column_index(name)
                .map(Some)
                .ok_or_else(|| IngestError::MissingColumn(name.clone())),
            None => Ok(table.column_index(reserved)),
        }
    };
    let id_col = match table.id_column {
        Some(i) => Some(i),
        None => resolve(&spec.id_column, "id")?,
    };
    let vec_col = resolve(&spec.feature_vector_column, "features")?;
    let label_col = resolve(&spec.label_column, "label")?;

    let reserved: HashSet<usize> = [id_col, vec_col, label_col]
        .into_iter()
        .flatten()
        .collect();

    // Directive per data column, in source order.
    let mut data_columns: Vec<(usize, ColumnDirective)> = Vec::new();
    for (i, name) in table.columns.iter().enumerate() {
        if reserved.contains(&i) {
            continue;
        }
        let directive = spec
            .columns
            .get(name)
            .copied()
            .unwrap_or(spec.default_directive);
        if directive != ColumnDirective::Drop {
            data_columns.push((i, directive));
        }
    }

    let has_numeric = data_columns.iter().any(|(_, d)| {
        matches!(
            d,
            ColumnDirective::CategoricalNumeric | ColumnDirective::PassthroughNumeric
        )
    });
    if !has_numeric && vec_col.is_none() && data_columns.is_empty() {
        return Err(IngestError::MissingFeatureSource);
    }

    // Categorical codes are assigned per column over the whole table.
    let mut codes: std::collections::HashMap<usize, Vec<f64>> = std::collections::HashMap::new();
    for &(col, directive) in &data_columns {
        if directive == ColumnDirective::CategoricalNumeric {
            let values: Vec<&str> = table.rows.iter().map(|r| r[col].as_str()).collect();
            let encoded = encode_categorical(&values).into_iter().map(|c| c as f64);
            codes.insert(col, encoded.collect());
        }
    }

    let mut records = Vec::with_capacity(table.rows.len());
    for (row_idx, row) in table.rows.iter().enumerate() {
        let id = match id_col {
            Some(c) => row[c].clone(),
            None => row_idx.to_string(),
        };
        let mut semantic = Vec::new();
        let mut features = Vec::new();
        for &(col, directive) in &data_columns {
            let name = table.columns[col].clone();
            let value = row[col].clone();
            match directive {
                ColumnDirective::SemanticOnly => semantic.push((name, value)),
                ColumnDirective::CategoricalNumeric => {
                    features.push(codes[&col][row_idx]);
                    semantic.push((name, value));
                }
                ColumnDirective::PassthroughNumeric => {
                    let parsed: f64 = value.trim().parse().map_err(|_| IngestError::BadNumber {
                        row: row_idx,
                        column: name.clone(),
                        value: value.clone(),
                    })?;
                    features.push(parsed);
                    semantic.push((name, value));
                }
                ColumnDirective::Drop => unreachable!("dropped above"),
            }
        }
        if let Some(c) = vec_col {
            let cell = row[c].trim();
            let parsed: Vec<f64> =
                serde_json::from_str(cell).map_err(|e| IngestError::BadFeatureVector {
                    row: row_idx,
                    value: cell.to_string(),
                    detail: e.to_string(),
                })?;
            features.extend(parsed);
        }
        let truth = match label_col {
            Some(c) if !row[c].trim().is_empty() => {
                let value = row[c].trim();
                Some(
                    label_space
                        .id_of(value)
                        .ok_or_else(|| IngestError::UnknownLabel {
                            row: row_idx,
                            value: value.to_string(),
                        })?,
                )
            }
            _ => None,
        };
        records.push(SampleRecord {
            id,
            semantic,
            features,
            truth,
        });
    }

    let dataset = Dataset::new(records, label_space.clone());
    let violations = validate_dataset(&dataset);
    if !violations.is_empty() {
        let summary = violations
            .iter()
            .take(3)
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(IngestError::InvalidDataset(summary));
    }
    Ok(dataset)
}

/// Load a label space from a text file, one name per line; line order
/// defines label ids. Blank lines are skipped.
pub fn load_label_space(path: &Path) -> Result<LabelSpace, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut names = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            names.push(trimmed.to_string());
        }
    }
    LabelSpace::new(names).map_err(|e| IngestError::InvalidDataset(e.to_string()))
}

/// Assign integer codes to strings by first occurrence, starting at 0;
/// identical strings share a code.
pub fn encode_categorical(values: &[&str]) -> Vec<usize> {
    let mut next = 0usize;
    let mut map: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    values
        .iter()
        .map(|v| {
            *map.entry(v).or_insert_with(|| {
                let code = next;
                next += 1;
                code
            })
        })
        .collect()
}

/// Quantize real-valued embeddings to 0/1 features: strictly positive
/// entries become 1, everything else (including exact 0) becomes 0.
pub fn binarize_embeddings(matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
    matrix
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Render a record's semantic view as `Name: value, Name: value, ...`.
/// Values are rendered verbatim; values containing `, ` are not escaped.
pub fn render_semantic(record: &SampleRecord) -> String {
    record
        .semantic
        .iter()
        .map(|(name, value)| format!("{name}: {value}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Take a stratified subsample. Strata come from `strata` when supplied,
/// otherwise from each record's truth label. Each stratum of size m keeps
/// round(fraction * m) samples (half-up), floored at 1. Output preserves
/// the original record order; identical seeds give identical subsamples.
pub fn stratified_subsample(
    dataset: &Dataset,
    strata: Option<&PredictionVector>,
    fraction: f64,
    seed: u64,
) -> Result<Dataset, IngestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::BadFraction(fraction));
    }
    let labels: Vec<usize> = match strata {
        Some(pv) => {
            if pv.len() != dataset.len() {
                return Err(IngestError::StrataLength {
                    got: pv.len(),
                    expected: dataset.len(),
                });
            }
            pv.preds.clone()
        }
        None => dataset
            .records
            .iter()
            .map(|r| {
                r.truth
                    .ok_or_else(|| IngestError::MissingStrata(r.id.clone()))
            })
            .collect::<Result<_, _>>()?,
    };

    let k = dataset.label_space.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }

    let mut rng = seeded_rng(seed);
    let mut keep: Vec<usize> = Vec::new();
    for indices in by_class.iter_mut() {
        if indices.is_empty() {
            continue;
        }
        let m = indices.len();
        let want = ((fraction * m as f64) + 0.5).floor() as usize;
        let want = want.clamp(1, m);
        indices.shuffle(&mut rng);
        keep.extend_from_slice(&indices[..want]);
    }
    keep.sort_unstable();

    let records = keep
        .into_iter()
        .map(|i| dataset.records[i].clone())
        .collect();
    Ok(Dataset::new(records, dataset.label_space.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn space() -> LabelSpace {
        LabelSpace::new(["card_arrival", "card_delivery_estimate"]).unwrap()
    }

    #[test]
    fn encode_categorical_first_occurrence() {
        assert_eq!(encode_categorical(&["Mon", "Tue", "Mon"]), vec![0, 1, 0]);
        assert_eq!(encode_categorical(&["x"]), vec![0]);
        assert_eq!(encode_categorical(&["b", "a", "b", "c"]), vec![0, 1, 0, 2]);
    }

    #[test]
    fn binarize_sign_rule() {
        assert_eq!(
            binarize_embeddings(&[vec![0.3, -0.2, 0.0, 1.5]]),
            vec![vec![1.0, 0.0, 0.0, 1.0]]
        );
        assert_eq!(
            binarize_embeddings(&[vec![-1.0, -0.5]]),
            vec![vec![0.0, 0.0]]
        );
        assert_eq!(binarize_embeddings(&[vec![1.0, 1.0]]), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn binarize_is_idempotent() {
        let once = binarize_embeddings(&[vec![0.3, -0.2, 0.0, 1.5, 2.0]]);
        let twice = binarize_embeddings(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn render_semantic_crime_style() {
        let record = SampleRecord {
            id: "0".into(),
            semantic: vec![
                ("Descript".into(), "FALSE IMPRISONMENT".into()),
                ("DayOfWeek".into(), "Sunday".into()),
                ("PdDistrict".into(), "TARAVAL".into()),
                ("Resolution".into(), "NONE".into()),
                ("Address".into(), "2400 Block of 28TH AV".into()),
                ("Hour".into(), "19".into()),
            ],
            features: vec![],
            truth: None,
        };
        assert_eq!(
            render_semantic(&record),
            "Descript: FALSE IMPRISONMENT, DayOfWeek: Sunday, PdDistrict: TARAVAL, \
             Resolution: NONE, Address: 2400 Block of 28TH AV, Hour: 19"
        );
    }

    #[test]
    fn render_semantic_single_text_pair() {
        let record = SampleRecord {
            id: "0".into(),
            semantic: vec![(
                "text".into(),
                "Can I make sure my card is delivered on a specific day?".into(),
            )],
            features: vec![],
            truth: None,
        };
        assert_eq!(
            render_semantic(&record),
            "text: Can I make sure my card is delivered on a specific day?"
        );
        let single = SampleRecord {
            id: "1".into(),
            semantic: vec![("a".into(), "b".into())],
            features: vec![],
            truth: None,
        };
        assert_eq!(render_semantic(&single), "a: b");
    }

    #[test]
    fn jsonl_record_with_reserved_keys() {
        let mut file = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        writeln!(
            file,
            r#"{{"id":"r1","text":"hello","features":[0.1,0.2],"label":"card_arrival"}}"#
        )
        .unwrap();
        writeln!(
            file,
            r#"{{"id":"r2","text":"bye","features":[0.3,0.4],"label":""}}"#
        )
        .unwrap();
        let ds = load_dataset(file.path(), &IngestSpec::default(), &space()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.d, 2);
        assert_eq!(ds.records[0].id, "r1");
        assert_eq!(ds.records[0].features, vec![0.1, 0.2]);
        assert_eq!(ds.records[0].truth, Some(0));
        assert_eq!(
            ds.records[0].semantic,
            vec![("text".to_string(), "hello".to_string())]
        );
        assert_eq!(ds.records[1].truth, None);
    }

    #[test]
    fn csv_all_categorical_gives_six_features() {
        let mut file = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(file, "Descript,DayOfWeek,PdDistrict,Resolution,Address,Hour").unwrap();
        writeln!(file, "THEFT,Sunday,TARAVAL,NONE,100 Block,19").unwrap();
        writeln!(file, "THEFT,Monday,CENTRAL,NONE,200 Block,7").unwrap();
        writeln!(file, "ASSAULT,Sunday,TARAVAL,ARREST,100 Block,19").unwrap();
        let mut spec = IngestSpec {
            default_directive: ColumnDirective::CategoricalNumeric,
            ..IngestSpec::default()
        };
        spec.columns.clear();
        let ds = load_dataset(file.path(), &spec, &space()).unwrap();
        assert_eq!(ds.d, 6);
        assert_eq!(ds.records[0].semantic.len(), 6);
        // First-occurrence codes per column.
        assert_eq!(ds.records[0].features, vec![0.0; 6]);
        assert_eq!(ds.records[1].features, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(ds.records[2].features, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        // No id column designated: row indices become ids.
        assert_eq!(ds.records[2].id, "2");
    }

    #[test]
    fn unknown_label_is_named_in_error() {
        let mut file = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        writeln!(
            file,
            r#"{{"id":"r1","text":"x","features":[0.0],"label":"no_such_label"}}"#
        )
        .unwrap();
        let err = load_dataset(file.path(), &IngestSpec::default(), &space()).unwrap_err();
        assert!(err.to_string().contains("no_such_label"), "{err}");
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let mut file = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(file, "a,b,label").unwrap();
        writeln!(file, "1,2,card_arrival").unwrap();
        writeln!(file, "3,4").unwrap();
        let err = load_dataset(file.path(), &IngestSpec::default(), &space()).unwrap_err();
        assert!(matches!(err, IngestError::RaggedRow { .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut file = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        for _ in 0..2 {
            writeln!(file, r#"{{"id":"same","text":"x","features":[0.0]}}"#).unwrap();
        }
        let err = load_dataset(file.path(), &IngestSpec::default(), &space()).unwrap_err();
        assert!(matches!(err, IngestError::InvalidDataset(_)), "{err}");
    }

    #[test]
    fn passthrough_numeric_parses_reals() {
        let mut file = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(file, "hour,note").unwrap();
        writeln!(file, "19,ok").unwrap();
        writeln!(file, "7.5,fine").unwrap();
        let mut spec = IngestSpec::default();
        spec.columns
            .insert("hour".into(), ColumnDirective::PassthroughNumeric);
        let ds = load_dataset(file.path(), &spec, &space()).unwrap();
        assert_eq!(ds.d, 1);
        assert_eq!(ds.records[0].features, vec![19.0]);
        assert_eq!(ds.records[1].features, vec![7.5]);
        assert_eq!(ds.records[0].semantic.len(), 2);
    }

    fn truth_dataset(counts: &[usize]) -> Dataset {
        let space = LabelSpace::new((0..counts.len()).map(|c| format!("class_{c}"))).unwrap();
        let mut records = Vec::new();
        for (c, &m) in counts.iter().enumerate() {
            for j in 0..m {
                records.push(SampleRecord {
                    id: format!("c{c}-{j}"),
                    semantic: vec![("text".into(), format!("sample {c}/{j}"))],
                    features: vec![c as f64],
                    truth: Some(c),
                });
            }
        }
        Dataset::new(records, space)
    }

    #[test]
    fn subsample_even_split() {
        let ds = truth_dataset(&[50, 50]);
        let sub = stratified_subsample(&ds, None, 0.5, 7).unwrap();
        let counts = count_by_class(&sub);
        assert_eq!(counts, vec![25, 25]);
    }

    #[test]
    fn subsample_rounds_half_up() {
        let ds = truth_dataset(&[10, 90]);
        let sub = stratified_subsample(&ds, None, 0.25, 7).unwrap();
        let counts = count_by_class(&sub);
        assert_eq!(counts, vec![3, 23]);
    }

    #[test]
    fn subsample_fraction_one_is_identity() {
        let ds = truth_dataset(&[4, 6]);
        let sub = stratified_subsample(&ds, None, 1.0, 7).unwrap();
        assert_eq!(sub.records, ds.records);
    }

    #[test]
    fn subsample_is_seed_deterministic_and_order_preserving() {
        let ds = truth_dataset(&[10, 90]);
        let a = stratified_subsample(&ds, None, 0.25, 42).unwrap();
        let b = stratified_subsample(&ds, None, 0.25, 42).unwrap();
        let ids = |d: &Dataset| d.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        let c = stratified_subsample(&ds, None, 0.25, 43).unwrap();
        assert_ne!(ids(&a), ids(&c));
        // Original order: positions of kept ids are increasing in ds.
        let positions: Vec<usize> = a
            .records
            .iter()
            .map(|r| ds.records.iter().position(|o| o.id == r.id).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsample_uses_supplied_strata_over_truth() {
        let mut ds = truth_dataset(&[6, 6]);
        for r in &mut ds.records {
            r.truth = None;
        }
        let strata = PredictionVector::new(vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1], 2).unwrap();
        let sub = stratified_subsample(&ds, Some(&strata), 0.5, 1).unwrap();
        assert_eq!(sub.len(), 6);
        let err = stratified_subsample(&ds, None, 0.5, 1).unwrap_err();
        assert!(matches!(err, IngestError::MissingStrata(_)));
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let ds = truth_dataset(&[4, 4]);
        assert!(stratified_subsample(&ds, None, 0.0, 1).is_err());
        assert!(stratified_subsample(&ds, None, 1.5, 1).is_err());
    }

    fn count_by_class(ds: &Dataset) -> Vec<usize> {
        let mut counts = vec![0usize; ds.label_space.len()];
        for r in &ds.records {
            counts[r.truth.unwrap()] += 1;
        }
        counts
    }
}
