//! Experiment orchestration: traces → features → labels → protocol runs →
//! report tables.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use inputrisk_core::corpus::{build_prompt, label_errors, parse_prediction, ExampleRecord, Labeling, UnparseablePolicy};
use inputrisk_core::features::{
    baseline_manifest, build_baseline_features, build_full_features, build_sentence_features, full_manifest,
    sentence_manifest, BaselineSet, FeatureSpec,
};
use inputrisk_core::learn::{run_seed, train, ClassMetrics, EvalReport, Metrics, ModelKind, ProtocolConfig, TrainConfig};
use inputrisk_core::measures::{CwsConfig, Measure};
use inputrisk_core::synth::{make_synthetic, SyntheticSpec};
use inputrisk_core::toy_lm::BigramModel;
use inputrisk_core::trace::{TokenRange, TokenTrace};

use crate::io::{self, FeatureTable, ModelArtifact, PredictionRow};
use crate::num::{fmt_num, fmt_signed, round_sig};
use crate::remote::{fetch_remote_traces, RemoteConfig, RemotePrompt, TopKMode};
use crate::{Error, Result};

/// Which feature vector to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureSet {
    Full,
    Sentence,
    Baseline(BaselineSet),
}

impl FeatureSet {
    /// Baselines first, then the structured sets: the column order of the
    /// comparison table.
    pub const ALL: [FeatureSet; 6] = [
        FeatureSet::Baseline(BaselineSet::LogProb),
        FeatureSet::Baseline(BaselineSet::MaxProb),
        FeatureSet::Baseline(BaselineSet::Odd),
        FeatureSet::Baseline(BaselineSet::Combined),
        FeatureSet::Sentence,
        FeatureSet::Full,
    ];

    pub fn manifest(&self) -> Vec<FeatureSpec> {
        match self {
            FeatureSet::Full => full_manifest(),
            FeatureSet::Sentence => sentence_manifest(),
            FeatureSet::Baseline(b) => baseline_manifest(*b),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Full => f.write_str("full"),
            FeatureSet::Sentence => f.write_str("sentence"),
            FeatureSet::Baseline(b) => write!(f, "baseline:{}", b.as_str()),
        }
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(FeatureSet::Full),
            "sentence" => Ok(FeatureSet::Sentence),
            other => other
                .strip_prefix("baseline:")
                .and_then(BaselineSet::parse)
                .map(FeatureSet::Baseline)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown feature set `{other}` (expected full, sentence or baseline:logprob|maxprob|odd|combined)"
                    ))
                }),
        }
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.to_string()
    }
}

// ------------------------------------------------------------------ traces

/// Where traces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    File {
        path: PathBuf,
    },
    /// A bigram model from `model`, or trained on the lines of `corpus`.
    Toy {
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default)]
        corpus: Option<PathBuf>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        top_k: Option<u32>,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
        #[serde(default)]
        log: Option<PathBuf>,
    },
}

fn default_alpha() -> f64 {
    1.0
}

fn default_concurrency() -> usize {
    4
}

/// Traces a record under a char-level toy model, one token per char.
pub fn toy_trace(model: &BigramModel, rec: &ExampleRecord) -> Result<TokenTrace> {
    let prompt = build_prompt(rec)?;
    let first = prompt.sentence_start;
    let range = TokenRange::new(first, first + prompt.sentence_chars - 1);
    Ok(model.trace_prompt(&rec.id, &prompt.text, range)?)
}

pub fn toy_traces(model: &BigramModel, records: &[ExampleRecord]) -> Result<Vec<TokenTrace>> {
    records.par_iter().map(|r| toy_trace(model, r)).collect()
}

/// Builds the toy model a [`TraceSource::Toy`] names. A corpus-trained model
/// also covers every char of the prompts so nothing is out of vocabulary.
pub fn toy_model(model: Option<&Path>, corpus: Option<&Path>, alpha: f64, records: &[ExampleRecord]) -> Result<BigramModel> {
    match (model, corpus) {
        (Some(m), None) => io::read_toy_model(m),
        (None, Some(c)) => {
            let prompts = records.iter().map(|r| build_prompt(r).map(|p| p.text)).collect::<inputrisk_core::Result<Vec<_>>>()?;
            io::train_toy_model(c, alpha, prompts.iter().map(String::as_str))
        }
        _ => Err(Error::Config("toy source needs exactly one of `model` or `corpus`".into())),
    }
}

/// Traces for `records`, in record order. Remote failures are logged and
/// the example skipped; a file source must cover every record.
pub fn acquire_traces(records: &[ExampleRecord], source: &TraceSource, base: &Path) -> Result<Vec<TokenTrace>> {
    match source {
        TraceSource::File { path } => {
            let traces = io::load_traces(&base.join(path))?;
            let mut by_id: HashMap<String, TokenTrace> = traces.into_iter().map(|t| (t.example_id.clone(), t)).collect();
            records
                .iter()
                .map(|r| by_id.remove(&r.id).ok_or_else(|| Error::MissingTrace(r.id.clone())))
                .collect()
        }
        TraceSource::Toy { model, corpus, alpha } => {
            let m = toy_model(
                model.as_ref().map(|p| base.join(p)).as_deref(),
                corpus.as_ref().map(|p| base.join(p)).as_deref(),
                *alpha,
                records,
            )?;
            toy_traces(&m, records)
        }
        TraceSource::Remote {
            endpoint,
            model,
            top_k,
            concurrency,
            log,
        } => {
            let mut cfg = RemoteConfig::new(endpoint.clone(), model.clone());
            cfg.top_k = top_k.map_or(TopKMode::ObservedOnly, TopKMode::TopK);
            cfg.concurrency = *concurrency;
            cfg.log_path = log.as_ref().map(|p| base.join(p));
            remote_traces(&cfg, records)
        }
    }
}

pub fn remote_traces(cfg: &RemoteConfig, records: &[ExampleRecord]) -> Result<Vec<TokenTrace>> {
    let prompts = records
        .iter()
        .map(|r| {
            let p = build_prompt(r)?;
            Ok(RemotePrompt {
                example_id: r.id.clone(),
                sentence: p.sentence_span(),
                text: p.text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(prompts.len());
    let mut failed = 0;
    for r in fetch_remote_traces(cfg, &prompts)? {
        match r {
            Ok(t) => out.push(t),
            Err(e) => {
                failed += 1;
                log::warn!("skipping: {e}");
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("all {failed} remote requests failed")));
    }
    if failed > 0 {
        log::warn!("{failed} of {} examples have no remote trace", prompts.len());
    }
    Ok(out)
}

// ---------------------------------------------------------------- features

/// One feature row per trace, in trace order. Rows are rounded to the CSV
/// encoding so that a table read back from disk is the same table.
pub fn featurize(records: &[ExampleRecord], traces: &[TokenTrace], set: FeatureSet, cws: CwsConfig) -> Result<FeatureTable> {
    let by_id: HashMap<&str, &ExampleRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let vectors = traces
        .par_iter()
        .map(|t| {
            let rec = by_id
                .get(t.example_id.as_str())
                .ok_or_else(|| Error::Config(format!("trace `{}` has no dataset record", t.example_id)))?;
            Ok(match set {
                FeatureSet::Full => {
                    let prompt = build_prompt(rec)?;
                    let span = prompt.expression_span(rec).ok_or_else(|| {
                        Error::Config(format!("example `{}` has no expression span for the full feature set", rec.id))
                    })?;
                    build_full_features(t, span, cws)?
                }
                FeatureSet::Sentence => build_sentence_features(t, cws)?,
                FeatureSet::Baseline(b) => build_baseline_features(t, b),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable::from_vectors(set.manifest(), &vectors)?.rounded())
}

// ------------------------------------------------------------------ labels

/// Parses raw outputs and labels errors. Predictions may be in any order
/// but must cover every record.
pub fn label_predictions(records: &[ExampleRecord], predictions: &[PredictionRow], policy: UnparseablePolicy) -> Result<Labeling> {
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.example_id.as_str(), p.raw_output.as_str()))
        .collect();
    let parsed = records
        .iter()
        .map(|r| {
            let raw = by_id.get(r.id.as_str()).ok_or_else(|| Error::MissingPrediction(r.id.clone()))?;
            Ok((r.id.clone(), parse_prediction(raw, r)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(label_errors(records, &parsed, policy)?)
}

/// Keeps the rows that have a label and returns them with their targets.
pub fn join_labels(table: &FeatureTable, labels: &[inputrisk_core::corpus::ErrorLabel]) -> Result<(FeatureTable, Vec<bool>)> {
    let by_id: HashMap<&str, bool> = labels.iter().map(|l| (l.example_id.as_str(), l.error)).collect();
    let (keep, y): (Vec<usize>, Vec<bool>) = table
        .ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| by_id.get(id.as_str()).map(|&e| (i, e)))
        .unzip();
    if keep.is_empty() {
        return Err(inputrisk_core::Error::EmptyDataset.into());
    }
    if keep.len() < table.ids.len() {
        log::info!("{} of {} feature rows have no label and are left out", table.ids.len() - keep.len(), table.ids.len());
    }
    let joined = FeatureTable {
        ids: keep.iter().map(|&i| table.ids[i].clone()).collect(),
        manifest: table.manifest.clone(),
        x: table.x.select_rows(&keep),
    };
    Ok((joined, y))
}

// ---------------------------------------------------------------- protocol

/// [`inputrisk_core::learn::run_protocol`] with the seeds run in parallel.
/// Each seed is independent, so the result equals the sequential one.
pub fn run_protocol_par(table: &FeatureTable, y: &[bool], cfg: &ProtocolConfig) -> Result<EvalReport> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(&table.x, y, cfg, s))
        .collect::<inputrisk_core::Result<Vec<_>>>()?;
    Ok(EvalReport::from_runs(cfg.seeds.clone(), runs)?)
}

/// One evaluated configuration: a feature set (possibly with one measure
/// ablated) under one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub feature_set: FeatureSet,
    pub classifier: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablated: Option<Measure>,
    pub n_examples: usize,
    pub n_columns: usize,
    pub report: EvalReport,
}

impl ReportEntry {
    /// Column label, e.g. `full` or `full-spr`.
    pub fn label(&self) -> String {
        match self.ablated {
            Some(m) => format!("{}-{m}", self.feature_set),
            None => self.feature_set.to_string(),
        }
    }
}

pub fn evaluate_set(
    table: &FeatureTable,
    y: &[bool],
    set: FeatureSet,
    ablated: Option<Measure>,
    cfg: &ProtocolConfig,
) -> Result<ReportEntry> {
    Ok(ReportEntry {
        feature_set: set,
        classifier: cfg.train.model,
        ablated,
        n_examples: table.x.rows(),
        n_columns: table.x.cols(),
        report: run_protocol_par(table, y, cfg)?,
    })
}

/// One entry per measure in `measures` with that measure's features
/// removed. Measures the table has no features for are skipped.
pub fn ablation_grid(
    table: &FeatureTable,
    y: &[bool],
    set: FeatureSet,
    measures: &[Measure],
    cfg: &ProtocolConfig,
) -> Result<Vec<ReportEntry>> {
    measures
        .par_iter()
        .filter(|&&m| table.manifest.iter().any(|s| s.measure == m))
        .map(|&m| {
            let ablated = table.select(|s| s.measure != m);
            if ablated.manifest.is_empty() {
                return Err(Error::Config(format!("ablating {m} leaves no features")));
            }
            evaluate_set(&ablated, y, set, Some(m), cfg)
        })
        .collect()
}

fn round_class(c: &mut ClassMetrics) {
    c.precision = round_sig(c.precision);
    c.recall = round_sig(c.recall);
    c.f1 = round_sig(c.f1);
}

fn round_metrics(m: &mut Metrics) {
    m.accuracy = round_sig(m.accuracy);
    round_class(&mut m.error);
    round_class(&mut m.correct);
}

/// Rounds every metric to 10 significant digits, as written to disk.
pub fn rounded(mut entry: ReportEntry) -> ReportEntry {
    entry.report.runs.iter_mut().for_each(round_metrics);
    round_metrics(&mut entry.report.mean);
    entry
}

// ----------------------------------------------------------------- reports

/// A rectangular table with a header row; the first column holds row labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Columns padded to equal width; labels left-aligned, numbers right.
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let width: Vec<usize> = (0..ncol)
            .map(|c| {
                std::iter::once(&self.header)
                    .chain(&self.rows)
                    .map(|r| r.get(c).map_or(0, |s| s.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |r: &[String]| {
            let cells: Vec<String> = (0..ncol)
                .map(|c| {
                    let s = r.get(c).map_or("", String::as_str);
                    if c == 0 {
                        format!("{s:<w$}", w = width[c])
                    } else {
                        format!("{s:>w$}", w = width[c])
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.header));
        out.push('\n');
        let rule: usize = width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output of UTF-8 cells is UTF-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTables {
    /// Error-class F1 (percent) per classifier and feature set.
    pub comparison: Table,
    /// Δ = ablated − reference error-class F1 (points), when the entries
    /// include ablations.
    pub ablation: Option<Table>,
}

fn percent(x: f64) -> f64 {
    100.0 * x
}

fn unique<T: PartialEq + Clone>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Lays reports out as tables: classifiers as rows, feature sets as columns,
/// cells the mean error-class F1 in percent. Ablated entries go to a second
/// table of signed deltas against the unablated entry for the same
/// classifier and feature set.
pub fn emit_report(entries: &[ReportEntry]) -> ReportTables {
    let plain: Vec<&ReportEntry> = entries.iter().filter(|e| e.ablated.is_none()).collect();
    let mut sets: Vec<FeatureSet> = unique(plain.iter().map(|e| e.feature_set));
    sets.sort_by_key(|s| FeatureSet::ALL.iter().position(|a| a == s));
    let models = unique(entries.iter().map(|e| e.classifier));

    let mut header = vec!["model".to_string()];
    header.extend(sets.iter().map(ToString::to_string));
    let rows = models
        .iter()
        .filter(|m| plain.iter().any(|e| e.classifier == **m))
        .map(|m| {
            let mut row = vec![m.to_string()];
            row.extend(sets.iter().map(|s| {
                plain
                    .iter()
                    .find(|e| e.classifier == *m && e.feature_set == *s)
                    .map_or_else(String::new, |e| fmt_num(percent(e.report.error_f1())))
            }));
            row
        })
        .collect();
    let comparison = Table {
        title: "error-class F1 (%)".into(),
        header,
        rows,
    };

    let ablated: Vec<&ReportEntry> = entries.iter().filter(|e| e.ablated.is_some()).collect();
    let ablation = (!ablated.is_empty()).then(|| {
        let measures = unique(ablated.iter().filter_map(|e| e.ablated));
        let bases = unique(ablated.iter().map(|e| (e.classifier, e.feature_set)));
        let mut header = vec!["model".to_string(), "features".to_string(), "reference".to_string()];
        header.extend(measures.iter().map(|m| format!("-{m}")));
        let rows = bases
            .iter()
            .map(|&(model, set)| {
                let reference = plain.iter().find(|e| e.classifier == model && e.feature_set == set);
                let mut row = vec![
                    model.to_string(),
                    set.to_string(),
                    reference.map_or_else(String::new, |r| fmt_num(percent(r.report.error_f1()))),
                ];
                row.extend(measures.iter().map(|&m| {
                    let cell = ablated
                        .iter()
                        .find(|e| e.classifier == model && e.feature_set == set && e.ablated == Some(m));
                    match (cell, reference) {
                        (Some(a), Some(r)) => fmt_signed(percent(a.report.error_f1()) - percent(r.report.error_f1())),
                        _ => String::new(),
                    }
                }));
                row
            })
            .collect();
        Table {
            title: "ablation: delta = ablated - full, error-class F1 points".into(),
            header,
            rows,
        }
    });
    ReportTables { comparison, ablation }
}

/// A bundle of report entries, the unit the `report` command reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default)]
    pub name: String,
    pub entries: Vec<ReportEntry>,
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.json`, `<stem>.txt` and `<stem>.csv` (plus
/// `<stem>_deltas.csv` when there are ablations) into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &ReportFile) -> Result<Vec<PathBuf>> {
    let report = ReportFile {
        name: report.name.clone(),
        entries: report.entries.iter().cloned().map(rounded).collect(),
    };
    let tables = emit_report(&report.entries);
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    let mut text = tables.comparison.to_text();
    if let Some(a) = &tables.ablation {
        text.push('\n');
        text.push_str(&a.to_text());
    }
    let mut written = vec![
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.txt")),
        dir.join(format!("{stem}.csv")),
    ];
    write_text(&written[0], &(json + "\n"))?;
    write_text(&written[1], &text)?;
    write_text(&written[2], &tables.comparison.to_csv()?)?;
    if let Some(a) = &tables.ablation {
        let p = dir.join(format!("{stem}_deltas.csv"));
        write_text(&p, &a.to_csv()?)?;
        written.push(p);
    }
    Ok(written)
}

// ------------------------------------------------------------- experiments

/// Where the error labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Raw model outputs, parsed and compared with gold.
    Predictions(PathBuf),
    /// A labels CSV as written by the `label` command.
    Labels(PathBuf),
}

/// An experiment, usually read from TOML. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: PathBuf,
    #[serde(flatten)]
    pub labels: LabelSource,
    pub trace: TraceSource,
    #[serde(default = "default_feature_set")]
    pub feature_set: FeatureSet,
    /// Extra feature sets evaluated for the comparison table.
    #[serde(default)]
    pub compare: Vec<FeatureSet>,
    #[serde(default)]
    pub classifier: ModelKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub unparseable: UnparseablePolicy,
    /// Run the leave-one-measure-out grid on the primary feature set.
    #[serde(default)]
    pub ablate: bool,
    pub output_dir: PathBuf,
}

fn default_feature_set() -> FeatureSet {
    FeatureSet::Full
}

fn default_gamma() -> f64 {
    CwsConfig::default().gamma
}

fn default_tau() -> f64 {
    0.5
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_test_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            train: TrainConfig {
                model: self.classifier,
                threshold: self.tau,
                ..TrainConfig::default()
            },
            test_fraction: self.test_fraction,
            seeds: self.seeds.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        Ok(self.protocol().train.validate()?)
    }
}

/// Pipeline stages, named in errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Label,
    Trace,
    Featurize,
    Train,
    Eval,
    Ablate,
    Report,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Label => "label",
            Stage::Trace => "trace",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub report: ReportFile,
    pub written: Vec<PathBuf>,
}

/// Runs a whole experiment and writes, under `output_dir`: `traces.jsonl`
/// (unless traces came from a file), `labels.csv`, `features.csv` with its
/// manifest, `model.json` (trained on every labeled row with the first seed)
/// and the report files.
pub fn cli_run(cfg: &ExperimentConfig, base: &Path) -> std::result::Result<RunSummary, StageError> {
    cfg.validate().at(Stage::Config)?;
    let out = base.join(&cfg.output_dir);
    let mut written = Vec::new();

    let records = io::load_dataset(&base.join(&cfg.dataset)).at(Stage::Load)?;
    let labeling = match &cfg.labels {
        LabelSource::Predictions(p) => {
            let preds = io::read_predictions(&base.join(p)).at(Stage::Label)?;
            label_predictions(&records, &preds, cfg.unparseable).at(Stage::Label)?.labels
        }
        LabelSource::Labels(p) => io::read_labels(&base.join(p)).at(Stage::Label)?,
    };
    let labels_path = out.join("labels.csv");
    io::write_labels(&labels_path, &labeling).at(Stage::Label)?;
    written.push(labels_path);

    let traces = acquire_traces(&records, &cfg.trace, base).at(Stage::Trace)?;
    if !matches!(cfg.trace, TraceSource::File { .. }) {
        let p = out.join("traces.jsonl");
        io::write_traces(&p, &traces).at(Stage::Trace)?;
        written.push(p);
    }

    let cws = CwsConfig::new(cfg.gamma);
    let mut sets = vec![cfg.feature_set];
    sets.extend(cfg.compare.iter().copied().filter(|s| *s != cfg.feature_set));
    let sets = unique(sets);
    let tables = sets
        .iter()
        .map(|&s| featurize(&records, &traces, s, cws).and_then(|t| join_labels(&t, &labeling)))
        .collect::<Result<Vec<_>>>()
        .at(Stage::Featurize)?;
    let (primary, y) = &tables[0];
    let features_path = out.join("features.csv");
    io::write_features(&features_path, primary).at(Stage::Featurize)?;
    written.extend([features_path.clone(), io::manifest_path(&features_path)]);

    let protocol = cfg.protocol();
    let model = train(&primary.x, y, &protocol.train, cfg.seeds[0]).at(Stage::Train)?;
    let model_path = out.join("model.json");
    io::write_model(&model_path, &ModelArtifact::new(primary.columns(), model)).at(Stage::Train)?;
    written.push(model_path);

    let mut entries = sets
        .par_iter()
        .zip(&tables)
        .map(|(&s, (t, y))| evaluate_set(t, y, s, None, &protocol))
        .collect::<Result<Vec<_>>>()
        .at(Stage::Eval)?;
    if cfg.ablate {
        entries.extend(ablation_grid(primary, y, cfg.feature_set, &Measure::PHI, &protocol).at(Stage::Ablate)?);
    }

    let report = ReportFile {
        name: cfg.name.clone(),
        entries,
    };
    written.extend(write_report(&out, "report", &report).at(Stage::Report)?);
    Ok(RunSummary { report, written })
}

// --------------------------------------------------------------- synthetic

/// Writes a synthetic suite as ordinary pipeline inputs: `dataset.jsonl`,
/// `traces.jsonl`, `predictions.jsonl`, `labels.csv` and `toy_model.json`.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec, seed: u64) -> Result<Vec<PathBuf>> {
    let suite = make_synthetic(spec, seed)?;
    let paths: Vec<PathBuf> = ["dataset.jsonl", "traces.jsonl", "predictions.jsonl", "labels.csv", "toy_model.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    io::write_dataset(&paths[0], &suite.records)?;
    io::write_traces(&paths[1], &suite.traces)?;
    let preds: Vec<PredictionRow> = suite
        .records
        .iter()
        .zip(&suite.raw_outputs)
        .map(|(r, o)| PredictionRow {
            example_id: r.id.clone(),
            raw_output: o.clone(),
        })
        .collect();
    io::write_predictions(&paths[2], &preds)?;
    let labeling = label_predictions(&suite.records, &preds, UnparseablePolicy::CountAsError)?;
    io::write_labels(&paths[3], &labeling.labels)?;
    io::write_toy_model(&paths[4], &suite.model)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(set: FeatureSet, model: ModelKind, ablated: Option<Measure>, f1: f64) -> ReportEntry {
        let m = Metrics {
            accuracy: 0.5,
            error: ClassMetrics {
                precision: f1,
                recall: f1,
                f1,
                support: 10,
            },
            correct: ClassMetrics::default(),
            n: 20,
        };
        ReportEntry {
            feature_set: set,
            classifier: model,
            ablated,
            n_examples: 100,
            n_columns: 2,
            report: EvalReport::from_runs(vec![0], vec![m]).unwrap(),
        }
    }

    #[test]
    fn feature_set_names_round_trip() {
        for s in FeatureSet::ALL {
            assert_eq!(s.to_string().parse::<FeatureSet>().unwrap(), s);
        }
        assert!("baseline:median".parse::<FeatureSet>().is_err());
        assert_eq!(FeatureSet::Baseline(BaselineSet::Odd).manifest().len(), 1);
        assert_eq!(FeatureSet::Baseline(BaselineSet::Combined).manifest().len(), 3);
    }

    #[test]
    fn single_report_is_a_single_row() {
        let t = emit_report(&[entry(FeatureSet::Full, ModelKind::LogReg, None, 0.5)]);
        assert_eq!(t.comparison.header, ["model", "full"]);
        assert_eq!(t.comparison.rows, vec![vec!["logreg".to_string(), "50".to_string()]]);
        assert!(t.ablation.is_none());
    }

    #[test]
    fn five_column_comparison_orders_baselines_first() {
        let sets = [
            FeatureSet::Full,
            FeatureSet::Sentence,
            FeatureSet::Baseline(BaselineSet::Odd),
            FeatureSet::Baseline(BaselineSet::LogProb),
            FeatureSet::Baseline(BaselineSet::MaxProb),
        ];
        let entries: Vec<_> = sets.iter().map(|&s| entry(s, ModelKind::Mlp, None, 0.25)).collect();
        let t = emit_report(&entries);
        assert_eq!(
            t.comparison.header,
            ["model", "baseline:logprob", "baseline:maxprob", "baseline:odd", "sentence", "full"]
        );
        assert_eq!(t.comparison.rows[0].len(), 6);
    }

    #[test]
    fn ablation_deltas_are_signed() {
        let t = emit_report(&[
            entry(FeatureSet::Full, ModelKind::LogReg, None, 0.8),
            entry(FeatureSet::Full, ModelKind::LogReg, Some(Measure::Spr), 0.7),
            entry(FeatureSet::Full, ModelKind::LogReg, Some(Measure::H), 0.85),
        ]);
        let a = t.ablation.unwrap();
        assert_eq!(a.header, ["model", "features", "reference", "-spr", "-h"]);
        assert_eq!(a.rows[0][3], "-10");
        assert_eq!(a.rows[0][4], "+5");
    }

    #[test]
    fn text_table_is_aligned() {
        let t = Table {
            title: "t".into(),
            header: vec!["model".into(), "x".into()],
            rows: vec![vec!["logreg".into(), "1.5".into()], vec!["mlp".into(), "100".into()]],
        };
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines[0], "model     x");
        assert_eq!(lines[2], "logreg  1.5");
        assert_eq!(lines[3], "mlp     100");
    }

    #[test]
    fn config_from_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            dataset = "d.jsonl"
            predictions = "p.jsonl"
            output_dir = "out"
            feature_set = "baseline:odd"
            classifier = "mlp"
            [trace]
            source = "toy"
            corpus = "c.txt"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.feature_set, FeatureSet::Baseline(BaselineSet::Odd));
        assert_eq!(cfg.classifier, ModelKind::Mlp);
        assert_eq!(cfg.labels, LabelSource::Predictions("p.jsonl".into()));
        assert_eq!(cfg.seeds, [0, 1, 2]);
        assert_eq!(cfg.tau, 0.5);
        assert!(matches!(cfg.trace, TraceSource::Toy { alpha, .. } if alpha == 1.0));
        cfg.validate().unwrap();

        let bad = ExperimentConfig::from_toml("dataset = 'd'\nlabels = 'l'\noutput_dir = 'o'\ntau = 1.0\n[trace]\nsource='file'\npath='t'\n")
            .unwrap();
        assert!(bad.validate().is_err());
    }
}
