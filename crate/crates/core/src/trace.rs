//! Per-token likelihood traces.
//!
//! A [`TokenTrace`] records, for every token of a prompt, the scalars the
//! measures need. Step `i` describes the distribution `P(· | t_<i)` that
//! predicted token `i`. All logs are base 2. Fields a producer could not
//! supply are `None`; they are never filled with zeros.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use bitflags::bitflags;

use crate::corpus::CharSpan;
use crate::math;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Slack allowed on inequality checks, to absorb float noise in producers.
pub const VALIDATION_TOLERANCE: f64 = 1e-9;

bitflags! {
    /// Which optional scalars a step carries.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Availability: u8 {
        const SURPRISAL = 1;
        const ENTROPY = 1 << 1;
        const KL = 1 << 2;
        const MAX_PROB = 1 << 3;
        const ODDBALL = 1 << 4;
        const CIS = 1 << 5;
    }
}

/// Inclusive `[first, last]` token range.
#[allow(clippy::len_without_is_empty)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenRange {
    pub first: usize,
    pub last: usize,
}

impl TokenRange {
    pub const fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn contains(&self, i: usize) -> bool {
        self.first <= i && i <= self.last
    }

    pub fn indices(&self) -> core::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TokenStep {
    #[cfg_attr(feature = "serde", serde(rename = "text"))]
    pub token_text: String,
    /// Char offsets into the prompt text.
    #[cfg_attr(feature = "serde", serde(with = "pair_span"))]
    pub span: CharSpan,
    /// `-log2 P(t_i | t_<i)`.
    pub surprisal: f64,
    pub entropy: Option<f64>,
    /// `D_KL(P || Q)` against the 0.9-peaked reference, in bits.
    pub kl_ref: Option<f64>,
    pub max_prob: Option<f64>,
    pub oddball: Option<f64>,
    /// `log2 P(t_{i+1} | t_<i)`: the next token rescored with token `i` deleted.
    pub cis_next: Option<f64>,
}

impl TokenStep {
    /// A step with only the observed-token surprisal.
    pub fn observed(token_text: impl Into<String>, span: CharSpan, surprisal: f64) -> Self {
        Self {
            token_text: token_text.into(),
            span,
            surprisal,
            entropy: None,
            kl_ref: None,
            max_prob: None,
            oddball: None,
            cis_next: None,
        }
    }

    pub fn availability(&self) -> Availability {
        let mut a = Availability::SURPRISAL;
        a.set(Availability::ENTROPY, self.entropy.is_some());
        a.set(Availability::KL, self.kl_ref.is_some());
        a.set(Availability::MAX_PROB, self.max_prob.is_some());
        a.set(Availability::ODDBALL, self.oddball.is_some());
        a.set(Availability::CIS, self.cis_next.is_some());
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TokenTrace {
    pub example_id: String,
    #[cfg_attr(feature = "serde", serde(with = "pair_range"))]
    pub sentence_token_range: TokenRange,
    pub tokens: Vec<TokenStep>,
}

impl TokenTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_indices(&self) -> Vec<usize> {
        self.sentence_token_range.indices().collect()
    }

    /// Fields present on every token (CIS judged on all but the last).
    pub fn availability(&self) -> Availability {
        let n = self.tokens.len();
        let mut all = Availability::all();
        for (i, t) in self.tokens.iter().enumerate() {
            let mut a = t.availability();
            if i + 1 == n {
                a |= Availability::CIS;
            }
            all &= a;
        }
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending token, `None` for trace-level problems.
    pub token: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.token {
            Some(i) => write!(f, "token {i}: {}", self.message),
            None => write!(f, "trace: {}", self.message),
        }
    }
}

/// Returns every invariant violation, or `Ok` for a consistent trace.
pub fn validate_trace(trace: &TokenTrace) -> core::result::Result<(), Vec<Violation>> {
    use alloc::format;

    let mut out = Vec::new();
    let mut push = |token: Option<usize>, message: String| out.push(Violation { token, message });
    let tol = VALIDATION_TOLERANCE;
    let n = trace.tokens.len();
    let range = trace.sentence_token_range;

    if n == 0 {
        push(None, "no tokens".into());
    }
    if range.first > range.last || range.last >= n {
        push(
            None,
            format!("sentence_token_range [{}, {}] outside [0, {n})", range.first, range.last),
        );
    }

    let mut prev_end = 0usize;
    for (i, t) in trace.tokens.iter().enumerate() {
        let mut check = |ok: bool, what: String| {
            if !ok {
                push(Some(i), what);
            }
        };
        let s = t.surprisal;
        check(s.is_finite() && s >= -tol, format!("surprisal {s} must be finite and >= 0"));
        if let Some(h) = t.entropy {
            check(h.is_finite() && h >= -tol, format!("entropy {h} must be finite and >= 0"));
        }
        if let Some(kl) = t.kl_ref {
            check(kl.is_finite() && kl >= -tol, format!("kl_ref {kl} must be finite and >= 0"));
        }
        if let Some(m) = t.max_prob {
            check(m > 0.0 && m <= 1.0 + tol, format!("max_prob {m} outside (0, 1]"));
            if m > 0.0 && s.is_finite() {
                let floor = -math::log2(m.min(1.0));
                check(
                    s >= floor - tol,
                    format!("surprisal {s} below -log2(max_prob) = {floor}"),
                );
            }
        }
        if let Some(o) = t.oddball {
            check((-tol..=1.0 + tol).contains(&o), format!("oddball {o} outside [0, 1]"));
        }
        if let Some(c) = t.cis_next {
            check(c.is_finite() && c <= tol, format!("cis_next {c} is not a log-probability"));
            check(i + 1 < n, "cis_next on the last token, which has no successor".into());
        }
        check(
            t.span.start <= t.span.end,
            format!("span [{}, {}) is reversed", t.span.start, t.span.end),
        );
        check(
            t.span.start >= prev_end,
            format!("span [{}, {}) overlaps the previous token", t.span.start, t.span.end),
        );
        prev_end = prev_end.max(t.span.end);
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Indices of all tokens whose char span overlaps `span`. An empty span
/// covers nothing.
pub fn map_span(trace: &TokenTrace, span: CharSpan) -> Result<Vec<usize>> {
    if span.is_empty() {
        return Err(Error::SpanNotCovered {
            start: span.start,
            end: span.end,
        });
    }
    let hits: Vec<usize> = trace
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.span.overlaps(&span))
        .map(|(i, _)| i)
        .collect();
    if hits.is_empty() {
        return Err(Error::SpanNotCovered {
            start: span.start,
            end: span.end,
        });
    }
    Ok(hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Granularity {
    Sentence,
    Expression,
    Boundary,
    Context,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Sentence,
        Granularity::Expression,
        Granularity::Boundary,
        Granularity::Context,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Sentence => "sentence",
            Granularity::Expression => "expression",
            Granularity::Boundary => "boundary",
            Granularity::Context => "context",
        }
    }
}

/// Token index sets for the four granularities, all sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Granularities {
    pub sentence: Vec<usize>,
    pub expression: Vec<usize>,
    /// One token on each side of the expression, clipped to the sentence.
    pub boundary: Vec<usize>,
    /// Sentence minus expression.
    pub context: Vec<usize>,
}

impl Granularities {
    pub fn get(&self, g: Granularity) -> &[usize] {
        match g {
            Granularity::Sentence => &self.sentence,
            Granularity::Expression => &self.expression,
            Granularity::Boundary => &self.boundary,
            Granularity::Context => &self.context,
        }
    }

    pub fn boundary_is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn context_is_empty(&self) -> bool {
        self.context.is_empty()
    }
}

pub fn granularity_index_sets(
    sentence: TokenRange,
    expression: &[usize],
) -> Result<Granularities> {
    let mut expr: Vec<usize> = expression.to_vec();
    expr.sort_unstable();
    expr.dedup();
    let (Some(&lo), Some(&hi)) = (expr.first(), expr.last()) else {
        return Err(Error::SpanOutsideSentence);
    };
    if !sentence.contains(lo) || !sentence.contains(hi) {
        return Err(Error::SpanOutsideSentence);
    }
    let mut boundary = Vec::with_capacity(2);
    if lo > sentence.first {
        boundary.push(lo - 1);
    }
    if hi < sentence.last {
        boundary.push(hi + 1);
    }
    let context = sentence
        .indices()
        .filter(|i| expr.binary_search(i).is_err())
        .collect();
    Ok(Granularities {
        sentence: sentence.indices().collect(),
        expression: expr,
        boundary,
        context,
    })
}

#[cfg(feature = "serde")]
mod pair_span {
    use super::CharSpan;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(span: &CharSpan, s: S) -> Result<S::Ok, S::Error> {
        [span.start, span.end].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CharSpan, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(CharSpan { start, end })
    }
}

#[cfg(feature = "serde")]
mod pair_range {
    use super::TokenRange;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &TokenRange, s: S) -> Result<S::Ok, S::Error> {
        [r.first, r.last].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TokenRange, D::Error> {
        let [first, last] = <[usize; 2]>::deserialize(d)?;
        Ok(TokenRange { first, last })
    }
}
