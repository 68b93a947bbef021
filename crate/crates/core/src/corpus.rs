//! Dataset records, zero-shot prompt assembly, answer parsing and error labels.
//!
//! Offsets are counted in Unicode scalar values (`char`s), which matches the
//! offsets produced by Python tokenizers and keeps spans valid for non-ASCII
//! text.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Half-open `[start, end)` range of char offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn shift(&self, by: usize) -> CharSpan {
        CharSpan::new(self.start + by, self.end + by)
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    Idiom,
    Metaphor,
    Metonymy,
    MultipleChoice,
}

const IDIOM_LABELS: &[&str] = &["i", "l"];
const FIGURATIVE_LABELS: &[&str] = &["m", "l"];

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Idiom,
        TaskKind::Metaphor,
        TaskKind::Metonymy,
        TaskKind::MultipleChoice,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Idiom => "idiom",
            TaskKind::Metaphor => "metaphor",
            TaskKind::Metonymy => "metonymy",
            TaskKind::MultipleChoice => "multiple_choice",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Fixed label alphabet, `None` for multiple choice (labels are the choices).
    pub fn fixed_labels(&self) -> Option<&'static [&'static str]> {
        match self {
            TaskKind::Idiom => Some(IDIOM_LABELS),
            TaskKind::Metaphor | TaskKind::Metonymy => Some(FIGURATIVE_LABELS),
            TaskKind::MultipleChoice => None,
        }
    }

    pub fn needs_expression(&self) -> bool {
        !matches!(self, TaskKind::MultipleChoice)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dataset instance: the sentence, the annotated expression inside it,
/// the task, and the gold answer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ExampleRecord {
    pub id: String,
    pub sentence: String,
    /// Expression span in char offsets into `sentence`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub expression: Option<CharSpan>,
    pub task: TaskKind,
    /// Custom instruction. For figurative tasks this replaces the default
    /// template and may use `{target_expression}`, `{target_word}` and must
    /// contain `{sentence}` once. For multiple choice it is the question.
    #[cfg_attr(feature = "serde", serde(default))]
    pub instruction: Option<String>,
    pub gold: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub choices: Option<Vec<String>>,
}

impl ExampleRecord {
    /// Checks span bounds and gold-label membership.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if let Some(span) = self.expression {
            let len = self.sentence.chars().count();
            if span.start >= span.end || span.end > len {
                return Err(invalid(format!(
                    "expression span {span} out of bounds for sentence of {len} chars"
                )));
            }
        }
        match self.task.fixed_labels() {
            Some(labels) => {
                if !labels.contains(&self.gold.as_str()) {
                    return Err(invalid(format!(
                        "gold `{}` not in {{{}}}",
                        self.gold,
                        labels.join(",")
                    )));
                }
            }
            None => {
                let choices = self
                    .choices
                    .as_deref()
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| invalid("multiple_choice record without choices".into()))?;
                if !choices.iter().any(|c| c == &self.gold) {
                    return Err(invalid(format!("gold `{}` is not one of the choices", self.gold)));
                }
            }
        }
        Ok(())
    }

    pub fn expression_text(&self) -> Option<String> {
        let span = self.expression?;
        Some(
            self.sentence
                .chars()
                .skip(span.start)
                .take(span.len())
                .collect(),
        )
    }

    /// Labels the model may answer with.
    pub fn label_alphabet(&self) -> Vec<&str> {
        match self.task.fixed_labels() {
            Some(labels) => labels.to_vec(),
            None => self
                .choices
                .iter()
                .flatten()
                .map(String::as_str)
                .collect(),
        }
    }
}

const IDIOM_TEMPLATE: &str = "Is the expression '{target_expression}' used figuratively or literally in the sentence: {sentence} Answer 'i' for figurative, 'l' for literal.  Put your answer after 'output: '.";
const METAPHOR_TEMPLATE: &str = "Is the word '{target_word}' used metaphorically or literally in the sentence: {sentence} Answer 'm' for metaphorical, 'l' for literal.  Put your answer after 'output: '.";
const METONYMY_TEMPLATE: &str = "Is the word '{target_word}' used metonymically or literally in the sentence: {sentence} Answer 'm' for metonymical, 'l' for literal.  Put your answer after 'output: '.";
const MULTIPLE_CHOICE_HEADER: &str = "The following are multiple choice questions.";

pub fn default_template(task: TaskKind) -> Option<&'static str> {
    match task {
        TaskKind::Idiom => Some(IDIOM_TEMPLATE),
        TaskKind::Metaphor => Some(METAPHOR_TEMPLATE),
        TaskKind::Metonymy => Some(METONYMY_TEMPLATE),
        TaskKind::MultipleChoice => None,
    }
}

/// An assembled prompt and where the sentence sits inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    /// Char offset of the sentence within `text`.
    pub sentence_start: usize,
    pub sentence_chars: usize,
}

impl Prompt {
    pub fn sentence_span(&self) -> CharSpan {
        CharSpan::new(self.sentence_start, self.sentence_start + self.sentence_chars)
    }

    /// Expression span of `rec` translated into prompt coordinates.
    pub fn expression_span(&self, rec: &ExampleRecord) -> Option<CharSpan> {
        rec.expression.map(|s| s.shift(self.sentence_start))
    }
}

fn choice_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

/// Fills the zero-shot template for `rec`.
pub fn build_prompt(rec: &ExampleRecord) -> Result<Prompt> {
    if rec.sentence.is_empty() {
        return Err(Error::EmptySentence { id: rec.id.clone() });
    }
    let sentence_chars = rec.sentence.chars().count();

    if rec.task == TaskKind::MultipleChoice {
        let question = match (&rec.instruction, rec.expression_text()) {
            (Some(q), _) => q.clone(),
            (None, Some(expr)) => format!("What does '{expr}' refer to?"),
            (None, None) => {
                return Err(Error::MissingExpression {
                    id: rec.id.clone(),
                    task: rec.task.as_str(),
                })
            }
        };
        let mut text = String::from(MULTIPLE_CHOICE_HEADER);
        text.push_str("\nContext: ");
        let sentence_start = text.chars().count();
        text.push_str(&rec.sentence);
        text.push_str("\nQuestion: ");
        text.push_str(&question);
        text.push_str("\nYour options are:");
        for (i, choice) in rec.choices.iter().flatten().enumerate() {
            text.push('\n');
            text.push(choice_letter(i));
            text.push_str(". ");
            text.push_str(choice);
        }
        return Ok(Prompt {
            text,
            sentence_start,
            sentence_chars,
        });
    }

    let expr = rec.expression_text().ok_or_else(|| Error::MissingExpression {
        id: rec.id.clone(),
        task: rec.task.as_str(),
    })?;
    let template = match &rec.instruction {
        Some(t) => t.as_str(),
        None => default_template(rec.task).unwrap_or_default(),
    };
    let mut parts = template.split("{sentence}");
    let (before, after) = match (parts.next(), parts.next(), parts.next()) {
        (Some(b), Some(a), None) => (b, a),
        _ => {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                reason: "instruction must contain `{sentence}` exactly once".into(),
            })
        }
    };
    let fill = |s: &str| {
        s.replace("{target_expression}", &expr)
            .replace("{target_word}", &expr)
    };
    let mut text = fill(before);
    let sentence_start = text.chars().count();
    text.push_str(&rec.sentence);
    text.push_str(&fill(after));
    Ok(Prompt {
        text,
        sentence_start,
        sentence_chars,
    })
}

/// A parsed model answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Prediction {
    Label(String),
    Unparseable,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::Unparseable => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label(l) => f.write_str(l),
            Prediction::Unparseable => f.write_str("<unparseable>"),
        }
    }
}

/// Byte offset just past the last `output:` marker (ASCII case-insensitive,
/// whitespace allowed before the colon).
fn after_last_marker(raw: &str) -> Option<usize> {
    const MARKER: &[u8] = b"output";
    let bytes = raw.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i + MARKER.len() <= bytes.len() {
        if bytes[i..i + MARKER.len()].eq_ignore_ascii_case(MARKER) {
            let mut j = i + MARKER.len();
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b':' {
                found = Some(j + 1);
            }
        }
        i += 1;
    }
    found
}

/// Lowercases and strips surrounding whitespace and punctuation.
pub fn normalize_label(s: &str) -> String {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || c == '…')
        .to_lowercase()
}

fn first_token(s: &str) -> Option<&str> {
    s.split(|c: char| !c.is_alphanumeric()).find(|t| !t.is_empty())
}

/// Whole-word, case-insensitive containment.
fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + needle.len().max(1);
        while !haystack.is_char_boundary(from) {
            from += 1;
        }
    }
    false
}

fn parse_choice(region: &str, choices: &[String]) -> Prediction {
    let line = region.trim().lines().next().unwrap_or_default();
    let norm = normalize_label(line);
    let normalized: Vec<String> = choices.iter().map(|c| normalize_label(c)).collect();

    // exact string
    if let Some(i) = normalized.iter().position(|c| !c.is_empty() && *c == norm) {
        return Prediction::Label(choices[i].clone());
    }
    // a single choice mentioned by name
    let mentioned: Vec<usize> = normalized
        .iter()
        .enumerate()
        .filter(|(_, c)| contains_word(&norm, c))
        .map(|(i, _)| i)
        .collect();
    if let [i] = mentioned[..] {
        return Prediction::Label(choices[i].clone());
    }
    // letter
    if let Some(tok) = first_token(line) {
        let mut chars = tok.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            let c = c.to_ascii_uppercase();
            if let Some(i) = (0..choices.len()).find(|&i| choice_letter(i) == c) {
                return Prediction::Label(choices[i].clone());
            }
        }
    }
    Prediction::Unparseable
}

/// Extracts the model's answer from its raw generation.
///
/// The answer is read after the last `output:` marker. Figurative tasks take
/// the first alphanumeric token, lowercased, and accept it only if it is in
/// the task's label alphabet. Multiple choice (marker optional) matches an
/// exact choice string first, then a single choice named in the answer, then
/// a choice letter.
pub fn parse_prediction(raw_output: &str, rec: &ExampleRecord) -> Prediction {
    match rec.task.fixed_labels() {
        Some(labels) => {
            let Some(at) = after_last_marker(raw_output) else {
                return Prediction::Unparseable;
            };
            match first_token(&raw_output[at..]).map(|t| t.to_lowercase()) {
                Some(tok) if labels.contains(&tok.as_str()) => Prediction::Label(tok),
                _ => Prediction::Unparseable,
            }
        }
        None => {
            let region = match after_last_marker(raw_output) {
                Some(at) => &raw_output[at..],
                None => raw_output,
            };
            parse_choice(region, rec.choices.as_deref().unwrap_or_default())
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UnparseablePolicy {
    #[default]
    CountAsError,
    Drop,
}

/// Gold-vs-predicted outcome for one example; `error` is the classifier target.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ErrorLabel {
    pub example_id: String,
    pub predicted: Prediction,
    pub error: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub labels: Vec<ErrorLabel>,
    pub accuracy: f64,
}

impl Labeling {
    pub fn error_vector(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.error).collect()
    }
}

/// Compares predictions with gold labels. `predictions[i]` must belong to
/// `records[i]`.
pub fn label_errors(
    records: &[ExampleRecord],
    predictions: &[(String, Prediction)],
    policy: UnparseablePolicy,
) -> Result<Labeling> {
    if records.len() != predictions.len() {
        let index = records.len().min(predictions.len());
        return Err(Error::IdMismatch {
            index,
            expected: records.get(index).map(|r| r.id.clone()).unwrap_or_default(),
            found: predictions
                .get(index)
                .map(|p| p.0.clone())
                .unwrap_or_default(),
        });
    }
    let mut labels = Vec::with_capacity(records.len());
    for (index, (rec, (id, pred))) in records.iter().zip(predictions).enumerate() {
        if &rec.id != id {
            return Err(Error::IdMismatch {
                index,
                expected: rec.id.clone(),
                found: id.clone(),
            });
        }
        let error = match pred {
            Prediction::Unparseable => match policy {
                UnparseablePolicy::Drop => continue,
                UnparseablePolicy::CountAsError => true,
            },
            Prediction::Label(l) => normalize_label(l) != normalize_label(&rec.gold),
        };
        labels.push(ErrorLabel {
            example_id: id.to_string(),
            predicted: pred.clone(),
            error,
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = labels.iter().filter(|l| !l.error).count();
    let accuracy = correct as f64 / labels.len() as f64;
    Ok(Labeling { labels, accuracy })
}
