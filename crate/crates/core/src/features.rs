//! Feature vectors built from a trace.
//!
//! The full vector has 89 entries in a fixed order:
//!
//! | block | count | entries |
//! |---|---|---|
//! | aggregates | 64 | {spr,h,cws,cis} × {sentence,expression,boundary,context} × {mean,max,min,std} |
//! | monotonic decrease | 4 | per measure, over the expression |
//! | spike count | 4 | per measure, local maxima inside the expression |
//! | boundary shift | 4 | per measure, `k(post) - k(end)` |
//! | peak in span | 4 | per measure, sentence argmax lies in the expression |
//! | contrast ratio | 1 | surprisal only |
//! | extreme positions | 8 | per measure, `p_min` and `p_max` |
//!
//! Every entry carries a validity flag. Invalid entries are zero-valued so
//! matrices stay rectangular; the flags are exported as extra 0/1 columns.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::CharSpan;
use crate::math;
use crate::measures::{series_from_trace, CwsConfig, Measure, MeasureSeries};
use crate::trace::{granularity_index_sets, map_span, Granularities, Granularity, TokenRange, TokenTrace};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const FULL_LEN: usize = 89;
pub const SENTENCE_LEN: usize = 8;
/// Guard added to the contrast-ratio denominator.
pub const CONTRAST_EPSILON: f64 = 1e-6;
/// Relative gap below which order-based features treat two values as tied.
/// Equal quantities reached by different float paths differ by a few ulps.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `a > b` by more than rounding noise.
fn greater(a: f64, b: f64) -> bool {
    a - b > TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Aggregator {
    Mean,
    Max,
    Min,
    Std,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [Aggregator::Mean, Aggregator::Max, Aggregator::Min, Aggregator::Std];

    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Min => "min",
            Aggregator::Std => "std",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaselineKind {
    LogProb,
    MaxTokenProb,
    Oddballness,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::LogProb => "log_prob",
            BaselineKind::MaxTokenProb => "max_token_prob",
            BaselineKind::Oddballness => "oddballness",
        }
    }

    pub fn measure(&self) -> Measure {
        match self {
            BaselineKind::LogProb => Measure::Spr,
            BaselineKind::MaxTokenProb => Measure::MaxP,
            BaselineKind::Oddballness => Measure::Odd,
        }
    }
}

/// Which baseline scalars go into a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaselineSet {
    LogProb,
    MaxProb,
    Odd,
    /// All three jointly.
    Combined,
}

impl BaselineSet {
    pub const ALL: [BaselineSet; 4] = [
        BaselineSet::LogProb,
        BaselineSet::MaxProb,
        BaselineSet::Odd,
        BaselineSet::Combined,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineSet::LogProb => "logprob",
            BaselineSet::MaxProb => "maxprob",
            BaselineSet::Odd => "odd",
            BaselineSet::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<BaselineSet> {
        BaselineSet::ALL.into_iter().find(|b| b.as_str() == s)
    }

    pub fn kinds(&self) -> &'static [BaselineKind] {
        match self {
            BaselineSet::LogProb => &[BaselineKind::LogProb],
            BaselineSet::MaxProb => &[BaselineKind::MaxTokenProb],
            BaselineSet::Odd => &[BaselineKind::Oddballness],
            BaselineSet::Combined => &[
                BaselineKind::LogProb,
                BaselineKind::MaxTokenProb,
                BaselineKind::Oddballness,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Aggregate(Granularity, Aggregator),
    MonotonicDecrease,
    SpikeCount,
    BoundaryShift,
    PeakInSpan,
    ContrastRatio,
    PositionMin,
    PositionMax,
    Baseline(BaselineKind),
}

impl FeatureKind {
    /// Short tag for non-aggregate features.
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureKind::Aggregate(..) => "aggregate",
            FeatureKind::MonotonicDecrease => "monotonic_decrease",
            FeatureKind::SpikeCount => "spike_count",
            FeatureKind::BoundaryShift => "boundary_shift",
            FeatureKind::PeakInSpan => "peak_in_span",
            FeatureKind::ContrastRatio => "contrast_ratio",
            FeatureKind::PositionMin => "p_min",
            FeatureKind::PositionMax => "p_max",
            FeatureKind::Baseline(b) => b.as_str(),
        }
    }
}

/// One manifest entry: which measure a feature derives from and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub measure: Measure,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn name(&self) -> String {
        match self.kind {
            FeatureKind::Aggregate(g, a) => {
                format!("{}.{}.{}", self.measure, g.as_str(), a.as_str())
            }
            FeatureKind::Baseline(b) => format!("baseline.{}", b.as_str()),
            other => format!("{}.{}", self.measure, other.tag()),
        }
    }

    pub fn granularity(&self) -> Option<Granularity> {
        match self.kind {
            FeatureKind::Aggregate(g, _) => Some(g),
            FeatureKind::BoundaryShift => Some(Granularity::Boundary),
            FeatureKind::MonotonicDecrease
            | FeatureKind::SpikeCount
            | FeatureKind::PeakInSpan
            | FeatureKind::ContrastRatio => Some(Granularity::Expression),
            FeatureKind::PositionMin | FeatureKind::PositionMax | FeatureKind::Baseline(_) => {
                Some(Granularity::Sentence)
            }
        }
    }

    pub fn aggregator(&self) -> Option<Aggregator> {
        match self.kind {
            FeatureKind::Aggregate(_, a) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Manifest of the 89-entry span-localized vector.
pub fn full_manifest() -> Vec<FeatureSpec> {
    let mut m = Vec::with_capacity(FULL_LEN);
    for measure in Measure::PHI {
        for g in Granularity::ALL {
            for a in Aggregator::ALL {
                m.push(FeatureSpec {
                    measure,
                    kind: FeatureKind::Aggregate(g, a),
                });
            }
        }
    }
    for kind in [
        FeatureKind::MonotonicDecrease,
        FeatureKind::SpikeCount,
        FeatureKind::BoundaryShift,
        FeatureKind::PeakInSpan,
    ] {
        for measure in Measure::PHI {
            m.push(FeatureSpec { measure, kind });
        }
    }
    m.push(FeatureSpec {
        measure: Measure::Spr,
        kind: FeatureKind::ContrastRatio,
    });
    for measure in Measure::PHI {
        m.push(FeatureSpec {
            measure,
            kind: FeatureKind::PositionMin,
        });
        m.push(FeatureSpec {
            measure,
            kind: FeatureKind::PositionMax,
        });
    }
    m
}

/// Manifest of the 8-entry sentence-level vector.
pub fn sentence_manifest() -> Vec<FeatureSpec> {
    Measure::PHI
        .into_iter()
        .flat_map(|measure| {
            [Aggregator::Mean, Aggregator::Max].map(|a| FeatureSpec {
                measure,
                kind: FeatureKind::Aggregate(Granularity::Sentence, a),
            })
        })
        .collect()
}

pub fn baseline_manifest(set: BaselineSet) -> Vec<FeatureSpec> {
    set.kinds()
        .iter()
        .map(|&b| FeatureSpec {
            measure: b.measure(),
            kind: FeatureKind::Baseline(b),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub example_id: String,
    pub manifest: Vec<FeatureSpec>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.manifest.iter().map(FeatureSpec::name).collect()
    }

    pub fn value(&self, name: &str) -> Option<(f64, bool)> {
        let i = self.manifest.iter().position(|s| s.name() == name)?;
        Some((self.values[i], self.valid[i]))
    }

    /// Values followed by validity flags as 0/1, the classifier input row.
    pub fn classifier_row(&self) -> Vec<f64> {
        let mut row = self.values.clone();
        row.extend(self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        row
    }

    /// Column names matching [`FeatureVector::classifier_row`].
    pub fn classifier_columns(manifest: &[FeatureSpec]) -> Vec<String> {
        let mut cols: Vec<String> = manifest.iter().map(FeatureSpec::name).collect();
        cols.extend(manifest.iter().map(|s| format!("{}_valid", s.name())));
        cols
    }
}

fn available(series: &MeasureSeries, indices: &[usize]) -> Vec<f64> {
    indices.iter().filter_map(|&i| series.get(i)).collect()
}

/// Aggregates the available values at `indices`. Returns `(0, false)` when
/// nothing is available. `Std` is the population standard deviation.
pub fn aggregate(series: &MeasureSeries, indices: &[usize], op: Aggregator) -> (f64, bool) {
    let xs = available(series, indices);
    if xs.is_empty() {
        return (0.0, false);
    }
    let n = xs.len() as f64;
    let v = match op {
        Aggregator::Mean => xs.iter().sum::<f64>() / n,
        Aggregator::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Std => {
            let mean = xs.iter().sum::<f64>() / n;
            math::sqrt(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
        }
    };
    (v, true)
}

/// Whether values strictly decrease along the (sorted) expression. A single
/// value counts as decreasing. Comparisons here and in the other order-based
/// features go through [`TIE_TOLERANCE`].
pub fn monotonic_decrease(series: &MeasureSeries, expression: &[usize]) -> Option<bool> {
    let xs = available(series, expression);
    if xs.is_empty() {
        return None;
    }
    Some(xs.windows(2).all(|w| greater(w[0], w[1])))
}

/// Expression positions that are strict local maxima against both sentence
/// neighbours. Positions missing a neighbour are skipped.
pub fn spike_count(series: &MeasureSeries, expression: &[usize], sentence: TokenRange) -> Option<usize> {
    if available(series, expression).is_empty() {
        return None;
    }
    let count = expression
        .iter()
        .filter(|&&i| {
            if i == 0 || !sentence.contains(i - 1) || !sentence.contains(i + 1) {
                return false;
            }
            match (series.get(i - 1), series.get(i), series.get(i + 1)) {
                (Some(prev), Some(cur), Some(next)) => greater(cur, prev) && greater(cur, next),
                _ => false,
            }
        })
        .count();
    Some(count)
}

/// `k(w_post) - k(w_end)`; invalid when the expression ends the sentence.
pub fn boundary_shift(series: &MeasureSeries, expression: &[usize], sentence: TokenRange) -> (f64, bool) {
    let Some(&end) = expression.iter().max() else {
        return (0.0, false);
    };
    let post = end + 1;
    if !sentence.contains(post) {
        return (0.0, false);
    }
    match (series.get(end), series.get(post)) {
        (Some(e), Some(p)) => (p - e, true),
        _ => (0.0, false),
    }
}

/// First-occurrence argmax over available positions.
fn arg_extreme(series: &MeasureSeries, indices: &[usize], better: impl Fn(f64, f64) -> bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (k, &i) in indices.iter().enumerate() {
        if let Some(v) = series.get(i) {
            match best {
                Some((_, _, b)) if !better(v, b) => {}
                _ => best = Some((k, i, v)),
            }
        }
    }
    best.map(|(k, i, _)| (k, i))
}

/// Whether the sentence maximum (first occurrence on ties) is in the expression.
pub fn peak_in_span(series: &MeasureSeries, expression: &[usize], sentence: &[usize]) -> Option<bool> {
    let (_, i) = arg_extreme(series, sentence, greater)?;
    Some(expression.contains(&i))
}

/// Largest surprisal in the expression over the summed surprisal of the rest
/// of the sentence (plus `epsilon`).
pub fn contrast_ratio(spr: &MeasureSeries, expression: &[usize], sentence: &[usize], epsilon: f64) -> Option<f64> {
    let peak = available(spr, expression)
        .into_iter()
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))?;
    let rest: f64 = sentence
        .iter()
        .filter(|i| !expression.contains(i))
        .filter_map(|&i| spr.get(i))
        .sum();
    Some(peak / (rest + epsilon))
}

/// 1-based positions of the sentence minimum and maximum, divided by the
/// sentence length. First occurrence wins ties.
pub fn extreme_positions(series: &MeasureSeries, sentence: &[usize]) -> Option<(f64, f64)> {
    let n = sentence.len() as f64;
    let (kmin, _) = arg_extreme(series, sentence, |v, b| greater(b, v))?;
    let (kmax, _) = arg_extreme(series, sentence, greater)?;
    Some(((kmin + 1) as f64 / n, (kmax + 1) as f64 / n))
}

fn flag(b: Option<bool>) -> (f64, bool) {
    match b {
        Some(true) => (1.0, true),
        Some(false) => (0.0, true),
        None => (0.0, false),
    }
}

struct Inputs<'a> {
    series: &'a [MeasureSeries],
    gran: &'a Granularities,
    sentence: TokenRange,
}

impl Inputs<'_> {
    fn series(&self, m: Measure) -> &MeasureSeries {
        let i = Measure::PHI.iter().position(|&p| p == m).expect("feature measure is in PHI");
        &self.series[i]
    }

    fn evaluate(&self, spec: &FeatureSpec) -> (f64, bool) {
        let s = self.series(spec.measure);
        let g = self.gran;
        match spec.kind {
            FeatureKind::Aggregate(gr, a) => aggregate(s, g.get(gr), a),
            FeatureKind::MonotonicDecrease => flag(monotonic_decrease(s, &g.expression)),
            FeatureKind::SpikeCount => match spike_count(s, &g.expression, self.sentence) {
                Some(c) => (c as f64, true),
                None => (0.0, false),
            },
            FeatureKind::BoundaryShift => boundary_shift(s, &g.expression, self.sentence),
            FeatureKind::PeakInSpan => flag(peak_in_span(s, &g.expression, &g.sentence)),
            FeatureKind::ContrastRatio => {
                match contrast_ratio(s, &g.expression, &g.sentence, CONTRAST_EPSILON) {
                    Some(v) => (v, true),
                    None => (0.0, false),
                }
            }
            FeatureKind::PositionMin | FeatureKind::PositionMax => {
                match extreme_positions(s, &g.sentence) {
                    Some((lo, _)) if spec.kind == FeatureKind::PositionMin => (lo, true),
                    Some((_, hi)) => (hi, true),
                    None => (0.0, false),
                }
            }
            FeatureKind::Baseline(_) => (0.0, false),
        }
    }
}

/// The four feature measures; a measure the trace cannot supply comes back
/// fully unavailable instead of failing the vector.
fn phi_series(trace: &TokenTrace, cws: CwsConfig) -> Result<Vec<MeasureSeries>> {
    Measure::PHI
        .into_iter()
        .map(|m| match series_from_trace(trace, m, cws) {
            Ok(s) => Ok(s),
            Err(Error::MeasureUnavailable { .. }) => Ok(MeasureSeries::unavailable(m, trace.len())),
            Err(e) => Err(e),
        })
        .collect()
}

fn assemble(example_id: &str, manifest: Vec<FeatureSpec>, inputs: &Inputs<'_>) -> FeatureVector {
    let (values, valid) = manifest.iter().map(|s| inputs.evaluate(s)).unzip();
    FeatureVector {
        example_id: String::from(example_id),
        manifest,
        values,
        valid,
    }
}

/// The 89-entry vector. `expression` is in prompt char offsets.
pub fn build_full_features(trace: &TokenTrace, expression: CharSpan, cws: CwsConfig) -> Result<FeatureVector> {
    let expr = map_span(trace, expression)?;
    let gran = granularity_index_sets(trace.sentence_token_range, &expr)?;
    let series = phi_series(trace, cws)?;
    let inputs = Inputs {
        series: &series,
        gran: &gran,
        sentence: trace.sentence_token_range,
    };
    Ok(assemble(&trace.example_id, full_manifest(), &inputs))
}

/// The 8-entry vector: mean and max of each measure over the sentence.
pub fn build_sentence_features(trace: &TokenTrace, cws: CwsConfig) -> Result<FeatureVector> {
    let range = trace.sentence_token_range;
    if range.first > range.last || range.last >= trace.len() {
        return Err(Error::IndexOutOfRange {
            index: range.last,
            len: trace.len(),
        });
    }
    let gran = Granularities {
        sentence: range.indices().collect(),
        expression: Vec::new(),
        boundary: Vec::new(),
        context: Vec::new(),
    };
    let series = phi_series(trace, cws)?;
    let inputs = Inputs {
        series: &series,
        gran: &gran,
        sentence: range,
    };
    Ok(assemble(&trace.example_id, sentence_manifest(), &inputs))
}

/// Single-scalar baselines over the sentence tokens. `None` marks a value the
/// trace could not supply.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BaselineVector {
    /// Mean `log2 P(t_i | t_<i)`.
    pub mean_log_prob: Option<f64>,
    /// Mean top-token probability of the distributions that follow each
    /// sentence token except the last.
    pub mean_max_token_prob: Option<f64>,
    pub max_oddballness: Option<f64>,
}

impl BaselineVector {
    pub fn get(&self, kind: BaselineKind) -> Option<f64> {
        match kind {
            BaselineKind::LogProb => self.mean_log_prob,
            BaselineKind::MaxTokenProb => self.mean_max_token_prob,
            BaselineKind::Oddballness => self.max_oddballness,
        }
    }
}

pub fn build_baselines(trace: &TokenTrace) -> BaselineVector {
    let range = trace.sentence_token_range;
    let sentence: &[_] = trace
        .tokens
        .get(range.first..=range.last)
        .unwrap_or_default();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);

    let mean_log_prob = mean(sentence.iter().map(|t| -t.surprisal).collect());
    // step i stores max P(. | t_<i), so the distribution that follows sentence
    // token i sits at step i + 1; the one after the last token is never scored
    let following = sentence.get(1..).unwrap_or_default();
    let mean_max_token_prob = if following.iter().all(|t| t.max_prob.is_some()) {
        mean(following.iter().filter_map(|t| t.max_prob).collect())
    } else {
        None
    };
    let max_oddballness = if sentence.iter().all(|t| t.oddball.is_some()) {
        sentence
            .iter()
            .filter_map(|t| t.oddball)
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
    } else {
        None
    };
    BaselineVector {
        mean_log_prob,
        mean_max_token_prob,
        max_oddballness,
    }
}

pub fn build_baseline_features(trace: &TokenTrace, set: BaselineSet) -> FeatureVector {
    let b = build_baselines(trace);
    let manifest = baseline_manifest(set);
    let (values, valid) = manifest
        .iter()
        .map(|s| match s.kind {
            FeatureKind::Baseline(k) => match b.get(k) {
                Some(v) => (v, true),
                None => (0.0, false),
            },
            _ => (0.0, false),
        })
        .unzip();
    FeatureVector {
        example_id: trace.example_id.clone(),
        manifest,
        values,
        valid,
    }
}

/// Removes every entry derived from `measure`. Errors if nothing matches,
/// which also catches ablating the same measure twice.
pub fn ablate(vector: &FeatureVector, measure: Measure) -> Result<FeatureVector> {
    ablate_with(vector, measure, false)
}

pub fn ablate_with(vector: &FeatureVector, measure: Measure, allow_noop: bool) -> Result<FeatureVector> {
    let keep: Vec<usize> = (0..vector.len())
        .filter(|&i| vector.manifest[i].measure != measure)
        .collect();
    if keep.len() == vector.len() && !allow_noop {
        return Err(Error::NothingToAblate(measure));
    }
    Ok(FeatureVector {
        example_id: vector.example_id.clone(),
        manifest: keep.iter().map(|&i| vector.manifest[i]).collect(),
        values: keep.iter().map(|&i| vector.values[i]).collect(),
        valid: keep.iter().map(|&i| vector.valid[i]).collect(),
    })
}

/// Manifest with `measure` removed, for building aligned matrices.
pub fn ablate_manifest(manifest: &[FeatureSpec], measure: Measure) -> Vec<FeatureSpec> {
    manifest.iter().copied().filter(|s| s.measure != measure).collect()
}
