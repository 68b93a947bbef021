//! On-disk formats.
//!
//! | file        | format                                                    |
//! |-------------|-----------------------------------------------------------|
//! | dataset     | JSONL or CSV of [`ExampleRecord`]                         |
//! | traces      | JSONL of [`TokenTrace`]                                   |
//! | predictions | JSONL `{"example_id", "raw_output"}`                      |
//! | labels      | CSV `example_id,error,predicted`                          |
//! | features    | CSV plus a `.manifest.json` sidecar                       |
//! | model       | JSON [`ModelArtifact`]                                    |
//! | toy model   | JSON [`ToyModelFile`]                                     |

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use inputrisk_core::corpus::{CharSpan, ErrorLabel, ExampleRecord, Prediction, TaskKind};
use inputrisk_core::features::{baseline_manifest, full_manifest, BaselineSet, FeatureSpec, FeatureVector};
use inputrisk_core::learn::{Classifier, Matrix, ModelKind, Standardizer, TrainedClassifier};
use inputrisk_core::toy_lm::BigramModel;
use inputrisk_core::trace::{validate_trace, TokenTrace};

use crate::num::{fmt_num, parse_num};
use crate::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 0-based row index among non-blank lines.
fn jsonl_rows(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut rows = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            rows.push((rows.len(), line));
        }
    }
    Ok(rows)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl_rows(path)?
        .into_iter()
        .map(|(row, line)| serde_json::from_str(&line).map_err(|e| Error::row(path, row, e)))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record() as usize);
    match row {
        // record 0 is the header
        Some(r) if r > 0 => Error::row(path, r - 1, e),
        _ => Error::format(path, e),
    }
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// `.csv` is CSV; anything else is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

fn take<T: DeserializeOwned>(obj: &mut Map<String, Value>, field: &str, required: bool) -> std::result::Result<Option<T>, String> {
    match obj.remove(field) {
        None | Some(Value::Null) if required => Err(format!("field `{field}`: missing")),
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| format!("field `{field}`: {e}")),
    }
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("field `task`: unknown task `{s}`"))
}

fn record_from_json(line: &str) -> std::result::Result<ExampleRecord, String> {
    let mut obj = match serde_json::from_str::<Value>(line).map_err(|e| e.to_string())? {
        Value::Object(o) => o,
        _ => return Err("expected a JSON object".into()),
    };
    let task: String = take(&mut obj, "task", true)?.unwrap_or_default();
    Ok(ExampleRecord {
        id: take(&mut obj, "id", true)?.unwrap_or_default(),
        sentence: take(&mut obj, "sentence", true)?.unwrap_or_default(),
        expression: take(&mut obj, "expression", false)?,
        task: parse_task(&task)?,
        instruction: take(&mut obj, "instruction", false)?,
        gold: take(&mut obj, "gold", true)?.unwrap_or_default(),
        choices: take(&mut obj, "choices", false)?,
    })
}

const DATASET_COLUMNS: [&str; 7] = ["id", "sentence", "expression", "task", "instruction", "gold", "choices"];

fn parse_span_cell(s: &str) -> std::result::Result<Option<CharSpan>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    let bad = || format!("field `expression`: expected `start:end`, found `{s}`");
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let start = a.trim().parse().map_err(|_| bad())?;
    let end = b.trim().parse().map_err(|_| bad())?;
    Ok(Some(CharSpan::new(start, end)))
}

/// Choices are a JSON array, or `|`-separated when the cell does not start
/// with `[`.
fn parse_choices_cell(s: &str) -> std::result::Result<Option<Vec<String>>, String> {
    if s.is_empty() {
        Ok(None)
    } else if s.trim_start().starts_with('[') {
        serde_json::from_str(s)
            .map(Some)
            .map_err(|e| format!("field `choices`: {e}"))
    } else {
        Ok(Some(s.split('|').map(str::to_string).collect()))
    }
}

fn read_dataset_csv(path: &Path) -> Result<Vec<ExampleRecord>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut col = HashMap::new();
    for name in DATASET_COLUMNS {
        match header.iter().position(|h| h == name) {
            Some(i) => {
                col.insert(name, i);
            }
            None if matches!(name, "expression" | "instruction" | "choices") => {}
            None => return Err(Error::format(path, format!("missing column `{name}`"))),
        }
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let cell = |name: &str| col.get(name).and_then(|&i| rec.get(i)).unwrap_or("");
        let parsed = (|| -> std::result::Result<ExampleRecord, String> {
            let instruction = cell("instruction");
            Ok(ExampleRecord {
                id: cell("id").to_string(),
                sentence: cell("sentence").to_string(),
                expression: parse_span_cell(cell("expression"))?,
                task: parse_task(cell("task"))?,
                instruction: (!instruction.is_empty()).then(|| instruction.to_string()),
                gold: cell("gold").to_string(),
                choices: parse_choices_cell(cell("choices"))?,
            })
        })();
        out.push(parsed.map_err(|m| Error::row(path, row, m))?);
    }
    Ok(out)
}

fn check_records(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut seen = HashMap::new();
    for (row, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::row(path, row, e))?;
        if let Some(prev) = seen.insert(r.id.as_str(), row) {
            return Err(Error::row(path, row, format!("duplicate id `{}` (first at row {prev})", r.id)));
        }
    }
    Ok(())
}

/// Loads and validates a dataset, keeping file order.
pub fn load_dataset(path: &Path) -> Result<Vec<ExampleRecord>> {
    let records = match DatasetFormat::from_path(path) {
        DatasetFormat::Csv => read_dataset_csv(path)?,
        DatasetFormat::Jsonl => jsonl_rows(path)?
            .into_iter()
            .map(|(row, line)| record_from_json(&line).map_err(|m| Error::row(path, row, m)))
            .collect::<Result<_>>()?,
    };
    check_records(path, &records)?;
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    match DatasetFormat::from_path(path) {
        DatasetFormat::Jsonl => write_jsonl(path, records),
        DatasetFormat::Csv => {
            let mut w = csv::Writer::from_writer(create(path)?);
            w.write_record(DATASET_COLUMNS).map_err(|e| csv_err(path, e))?;
            for r in records {
                let span = r.expression.map(|s| format!("{}:{}", s.start, s.end)).unwrap_or_default();
                let choices = match &r.choices {
                    Some(c) => serde_json::to_string(c).map_err(|e| Error::format(path, e))?,
                    None => String::new(),
                };
                w.write_record([
                    r.id.as_str(),
                    r.sentence.as_str(),
                    span.as_str(),
                    r.task.as_str(),
                    r.instruction.as_deref().unwrap_or(""),
                    r.gold.as_str(),
                    choices.as_str(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

// ------------------------------------------------------------------ traces

/// Reads traces without checking their invariants. An optional
/// `log_base_declared` field is accepted but must be 2.
pub fn read_traces(path: &Path) -> Result<Vec<TokenTrace>> {
    jsonl_rows(path)?
        .into_iter()
        .map(|(row, line)| {
            let mut v: Value = serde_json::from_str(&line).map_err(|e| Error::row(path, row, e))?;
            if let Some(base) = v.as_object_mut().and_then(|o| o.remove("log_base_declared")) {
                if base.as_f64() != Some(2.0) {
                    return Err(Error::row(path, row, format!("log_base_declared is {base}, expected 2")));
                }
            }
            serde_json::from_value(v).map_err(|e| Error::row(path, row, e))
        })
        .collect()
}

/// Reads traces and rejects the first one that violates an invariant.
pub fn load_traces(path: &Path) -> Result<Vec<TokenTrace>> {
    let traces = read_traces(path)?;
    for (row, t) in traces.iter().enumerate() {
        if let Err(v) = validate_trace(t) {
            let first = v.first().map(ToString::to_string).unwrap_or_default();
            return Err(Error::row(
                path,
                row,
                format!("trace `{}` has {} violation(s), first: {first}", t.example_id, v.len()),
            ));
        }
    }
    Ok(traces)
}

pub fn write_traces(path: &Path, traces: &[TokenTrace]) -> Result<()> {
    write_jsonl(path, traces)
}

// ------------------------------------------------------------- predictions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub example_id: String,
    pub raw_output: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    read_jsonl(path)
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_jsonl(path, rows)
}

// ------------------------------------------------------------------ labels

pub fn write_labels(path: &Path, labels: &[ErrorLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["example_id", "error", "predicted"])
        .map_err(|e| csv_err(path, e))?;
    for l in labels {
        let pred = l.predicted.label().unwrap_or("");
        w.write_record([l.example_id.as_str(), if l.error { "1" } else { "0" }, pred])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Labels keyed by example id. An empty `predicted` cell reads back as
/// unparseable.
pub fn read_labels(path: &Path) -> Result<Vec<ErrorLabel>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or("");
        let error = match rec.get(1).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => {
                return Err(Error::row(
                    path,
                    row,
                    format!("field `error`: expected 0 or 1, found {:?}", other.unwrap_or("")),
                ))
            }
        };
        let predicted = match rec.get(2).unwrap_or("") {
            "" => Prediction::Unparseable,
            l => Prediction::Label(l.to_string()),
        };
        out.push(ErrorLabel {
            example_id: id.to_string(),
            predicted,
            error,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- features

/// Looks a feature up by its manifest name.
pub fn spec_from_name(name: &str) -> Option<FeatureSpec> {
    full_manifest()
        .into_iter()
        .chain(baseline_manifest(BaselineSet::Combined))
        .find(|s| s.name() == name)
}

/// A feature matrix: one classifier row (values then validity flags) per
/// example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub manifest: Vec<FeatureSpec>,
    pub x: Matrix,
}

impl FeatureTable {
    /// Stacks vectors that share one manifest.
    pub fn from_vectors(manifest: Vec<FeatureSpec>, vectors: &[FeatureVector]) -> Result<Self> {
        let cols = 2 * manifest.len();
        let mut data = Vec::with_capacity(vectors.len() * cols);
        for v in vectors {
            if v.manifest != manifest {
                return Err(Error::Config(format!("example `{}` has a different manifest", v.example_id)));
            }
            data.extend(v.classifier_row());
        }
        Ok(Self {
            ids: vectors.iter().map(|v| v.example_id.clone()).collect(),
            x: Matrix::from_vec(vectors.len(), cols, data)?,
            manifest,
        })
    }

    pub fn columns(&self) -> Vec<String> {
        FeatureVector::classifier_columns(&self.manifest)
    }

    pub fn manifest_hash(&self) -> String {
        manifest_hash(&self.columns())
    }

    /// Keeps the value and validity columns of features matching `keep`.
    pub fn select(&self, keep: impl Fn(&FeatureSpec) -> bool) -> FeatureTable {
        let d = self.manifest.len();
        let idx: Vec<usize> = (0..d).filter(|&i| keep(&self.manifest[i])).collect();
        let cols: Vec<usize> = idx.iter().copied().chain(idx.iter().map(|i| i + d)).collect();
        FeatureTable {
            ids: self.ids.clone(),
            manifest: idx.iter().map(|&i| self.manifest[i]).collect(),
            x: self.x.select_cols(&cols),
        }
    }

    /// Rounds every entry to the CSV encoding, so in-memory and on-disk
    /// tables train identically.
    pub fn rounded(mut self) -> Self {
        let rows = self.x.rows();
        for i in 0..rows {
            self.x.row_mut(i).iter_mut().for_each(|v| *v = crate::num::round_sig(*v));
        }
        self
    }
}

/// SHA-256 over the newline-joined classifier column names.
pub fn manifest_hash(columns: &[String]) -> String {
    let mut h = Sha256::new();
    for c in columns {
        h.update(c.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub measure: String,
    pub granularity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aggregator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_kind: Option<String>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub manifest_hash: String,
    pub columns: Vec<String>,
    pub features: Vec<ManifestEntry>,
}

impl ManifestFile {
    pub fn new(manifest: &[FeatureSpec]) -> Self {
        let columns = FeatureVector::classifier_columns(manifest);
        let features = manifest
            .iter()
            .enumerate()
            .map(|(index, s)| ManifestEntry {
                name: s.name(),
                measure: s.measure.as_str().to_string(),
                granularity: s.granularity().map(|g| g.as_str().to_string()),
                aggregator: s.aggregator().map(|a| a.as_str().to_string()),
                feature_kind: s.aggregator().is_none().then(|| s.kind.tag().to_string()),
                index,
            })
            .collect();
        Self {
            manifest_hash: manifest_hash(&columns),
            columns,
            features,
        }
    }
}

/// `features.csv` → `features.manifest.json`.
pub fn manifest_path(features_csv: &Path) -> PathBuf {
    features_csv.with_extension("manifest.json")
}

/// Writes the CSV and its manifest sidecar.
pub fn write_features(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["example_id".to_string()];
    header.extend(table.columns());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in table.ids.iter().zip(table.x.iter_rows()) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(id.clone());
        rec.extend(row.iter().map(|&v| fmt_num(v)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&manifest_path(path), &ManifestFile::new(&table.manifest))
}

/// Reads a feature CSV. The manifest is recovered from the header; if the
/// sidecar exists its hash must agree.
pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("example_id") {
        return Err(Error::format(path, "first column must be `example_id`"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if !columns.len().is_multiple_of(2) {
        return Err(Error::format(path, "expected each feature to have a `_valid` column"));
    }
    let d = columns.len() / 2;
    let manifest = columns[..d]
        .iter()
        .map(|n| spec_from_name(n).ok_or_else(|| Error::format(path, format!("unknown feature `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    if FeatureVector::classifier_columns(&manifest) != columns {
        return Err(Error::format(path, "validity columns do not match the feature columns"));
    }
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        let m: ManifestFile = read_json(&sidecar)?;
        let found = manifest_hash(&columns);
        if m.manifest_hash != found {
            return Err(Error::ManifestMismatch {
                expected: m.manifest_hash,
                found,
            });
        }
    }

    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != columns.len() + 1 {
            return Err(Error::row(path, row, format!("expected {} cells, found {}", columns.len() + 1, rec.len())));
        }
        ids.push(rec[0].to_string());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v = parse_num(cell)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::row(path, row, format!("field `{}`: not a finite number: `{cell}`", columns[c])))?;
            data.push(v);
        }
    }
    Ok(FeatureTable {
        x: Matrix::from_vec(ids.len(), columns.len(), data)?,
        ids,
        manifest,
    })
}

// ------------------------------------------------------------------- model

pub const MODEL_FORMAT: &str = "inputrisk-model/1";

/// A trained classifier bound to the feature columns it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub manifest_hash: String,
    pub columns: Vec<String>,
    pub kind: ModelKind,
    pub tau: f64,
    pub standardizer: Standardizer,
    /// Parameters as flat arrays, tagged with the model kind.
    pub classifier: Classifier,
}

impl ModelArtifact {
    pub fn new(columns: Vec<String>, model: TrainedClassifier) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            manifest_hash: manifest_hash(&columns),
            columns,
            kind: model.classifier.kind(),
            tau: model.threshold,
            standardizer: model.standardizer,
            classifier: model.classifier,
        }
    }

    pub fn model(&self) -> TrainedClassifier {
        TrainedClassifier {
            standardizer: self.standardizer.clone(),
            classifier: self.classifier.clone(),
            threshold: self.tau,
        }
    }

    /// Refuses a table whose manifest differs from the training manifest.
    pub fn check_table(&self, table: &FeatureTable) -> Result<()> {
        let found = table.manifest_hash();
        if found != self.manifest_hash {
            return Err(Error::ManifestMismatch {
                expected: self.manifest_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// `(probabilities, decisions)` for every row of `table`.
    pub fn score(&self, table: &FeatureTable) -> Result<(Vec<f64>, Vec<bool>)> {
        self.check_table(table)?;
        let model = self.model();
        let p = model.predict_proba(&table.x)?;
        let d = inputrisk_core::learn::decide(&p, self.tau)?;
        Ok((p, d))
    }
}

pub fn write_model(path: &Path, artifact: &ModelArtifact) -> Result<()> {
    write_json(path, artifact)
}

pub fn read_model(path: &Path) -> Result<ModelArtifact> {
    let m: ModelArtifact = read_json(path)?;
    if m.format != MODEL_FORMAT {
        return Err(Error::format(path, format!("unsupported model format `{}`", m.format)));
    }
    if m.kind != m.classifier.kind() || manifest_hash(&m.columns) != m.manifest_hash {
        return Err(Error::format(path, "inconsistent model artifact"));
    }
    if m.standardizer.dim() != m.columns.len() {
        return Err(Error::format(path, "standardizer does not match the column count"));
    }
    Ok(m)
}

// --------------------------------------------------------------- toy model

/// Bigram counts as nested rows; `start_counts` holds sequence-initial
/// counts and may be omitted (all zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelFile {
    pub vocab: Vec<char>,
    pub counts: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub start_counts: Vec<u64>,
    pub alpha: f64,
}

impl From<&BigramModel> for ToyModelFile {
    fn from(m: &BigramModel) -> Self {
        let v = m.vocab_size().max(1);
        Self {
            vocab: m.vocab().to_vec(),
            counts: m.counts().chunks(v).map(<[u64]>::to_vec).collect(),
            start_counts: m.start_counts().to_vec(),
            alpha: m.alpha(),
        }
    }
}

impl ToyModelFile {
    pub fn into_model(self) -> inputrisk_core::Result<BigramModel> {
        let v = self.vocab.len();
        if self.counts.len() != v || self.counts.iter().any(|r| r.len() != v) {
            return Err(inputrisk_core::Error::InvalidVocabulary("counts must be |V| x |V|"));
        }
        let start = if self.start_counts.is_empty() {
            vec![0; v]
        } else {
            self.start_counts
        };
        BigramModel::from_parts(self.vocab, self.counts.concat(), start, self.alpha)
    }
}

pub fn write_toy_model(path: &Path, model: &BigramModel) -> Result<()> {
    write_json(path, &ToyModelFile::from(model))
}

pub fn read_toy_model(path: &Path) -> Result<BigramModel> {
    let f: ToyModelFile = read_json(path)?;
    f.into_model().map_err(|e| Error::format(path, e))
}

/// Trains a bigram model on a plain-text corpus, one sequence per line. The
/// vocabulary is every char in the corpus plus `extra` (e.g. the prompts to
/// be scored later).
pub fn train_toy_model<'a>(corpus: &Path, alpha: f64, extra: impl IntoIterator<Item = &'a str>) -> Result<BigramModel> {
    let text = std::fs::read_to_string(corpus).map_err(|e| Error::io(corpus, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let extra: Vec<&str> = extra.into_iter().collect();
    let vocab = BigramModel::vocab_from(lines.iter().chain(&extra).copied());
    let mut model = BigramModel::new(vocab, alpha)?;
    model.train(lines)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_cells() {
        assert_eq!(parse_span_cell("3:7").unwrap(), Some(CharSpan::new(3, 7)));
        assert_eq!(parse_span_cell("").unwrap(), None);
        assert!(parse_span_cell("3-7").unwrap_err().contains("expression"));
    }

    #[test]
    fn choices_cells() {
        assert_eq!(parse_choices_cell("a|b").unwrap(), Some(vec!["a".into(), "b".into()]));
        assert_eq!(parse_choices_cell(r#"["a|b","c"]"#).unwrap(), Some(vec!["a|b".into(), "c".into()]));
    }

    #[test]
    fn json_record_errors_name_the_field() {
        let e = record_from_json(r#"{"id":"x","sentence":"s","task":"idiom","gold":7}"#).unwrap_err();
        assert!(e.contains("`gold`"), "{e}");
        let e = record_from_json(r#"{"id":"x","task":"idiom","gold":"i"}"#).unwrap_err();
        assert!(e.contains("`sentence`"), "{e}");
        let e = record_from_json(r#"{"id":"x","sentence":"s","task":"poem","gold":"i"}"#).unwrap_err();
        assert!(e.contains("`task`"), "{e}");
    }

    #[test]
    fn every_feature_name_resolves() {
        for s in full_manifest().into_iter().chain(baseline_manifest(BaselineSet::Combined)) {
            assert_eq!(spec_from_name(&s.name()), Some(s));
        }
        assert_eq!(spec_from_name("spr.sentence.median"), None);
    }

    #[test]
    fn hash_depends_on_order() {
        let a = vec!["x".to_string(), "y".to_string()];
        let b = vec!["y".to_string(), "x".to_string()];
        assert_ne!(manifest_hash(&a), manifest_hash(&b));
        assert_eq!(manifest_hash(&a).len(), 64);
    }
}
