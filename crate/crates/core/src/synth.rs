//! Synthetic suites with a planted in-span surprisal spike.
//!
//! A random peaked bigram process generates a training corpus for the toy
//! model; sentences are then sampled from the trained model and wrapped in a
//! fixed instruction. Each example gets an error label `e ~ Bernoulli(q)` and a
//! spike indicator that agrees with `e` with probability `ρ`. A spiked example
//! has one token inside its expression made `magnitude` bits more surprising
//! under both the full and the deleted prefix, which leaves CIS, entropy and
//! the distribution summaries untouched. Only surprisal and the CWS built on
//! it carry the signal.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_prompt, CharSpan, ExampleRecord, TaskKind};
use crate::toy_lm::{sample_index, BigramModel};
use crate::trace::{TokenRange, TokenTrace};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticSpec {
    pub n: usize,
    /// Symbols are the first `vocab_size` lowercase letters.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub span_len: usize,
    /// Bits added to the spiked token's surprisal.
    pub magnitude: f64,
    /// Probability that the spike indicator equals the error label.
    pub rho: f64,
    /// Probability of an error label.
    pub error_rate: f64,
    /// Sequences drawn from the generating process to train the toy model.
    pub corpus_sequences: usize,
    pub alpha: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            vocab_size: 16,
            min_len: 24,
            max_len: 40,
            span_len: 3,
            magnitude: 5.0,
            rho: 0.9,
            error_rate: 0.5,
            corpus_sequences: 400,
            alpha: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive"));
        }
        if !(2..=26).contains(&self.vocab_size) {
            return Err(Error::InvalidConfig("vocab_size must be in 2..=26"));
        }
        if self.span_len == 0 || self.min_len < self.span_len || self.max_len < self.min_len {
            return Err(Error::InvalidConfig("need 1 <= span_len <= min_len <= max_len"));
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::InvalidConfig("magnitude must be finite and non-negative"));
        }
        if !(0.5..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig("rho must be in [0.5, 1]"));
        }
        if !(self.error_rate > 0.0 && self.error_rate < 1.0) {
            return Err(Error::InvalidConfig("error_rate must be in (0, 1)"));
        }
        if self.corpus_sequences == 0 || !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("need a training corpus and positive alpha"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub records: Vec<ExampleRecord>,
    pub traces: Vec<TokenTrace>,
    /// Gold error labels.
    pub errors: Vec<bool>,
    /// Whether a spike was planted.
    pub spiked: Vec<bool>,
    /// Raw answers consistent with `errors`, for exercising the labeling path.
    pub raw_outputs: Vec<String>,
    pub model: BigramModel,
}

const PREFIX_LEN: usize = 6;
const SUFFIX_LEN: usize = 4;

/// Rows with most mass on a few successors, so sampled text has structure.
fn generating_rows<R: Rng>(v: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..=v)
        .map(|_| {
            let w: Vec<f64> = (0..v)
                .map(|_| {
                    let u: f64 = rng.random();
                    u * u * u * u + 1e-3
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Builds the suite. Deterministic in `(spec, seed)`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSuite> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = spec.vocab_size;
    let vocab: Vec<char> = (0..v).map(|i| (b'a' + i as u8) as char).collect();

    // rows[v] is the start row
    let rows = generating_rows(v, &mut rng);
    let corpus: Vec<String> = (0..spec.corpus_sequences)
        .map(|_| {
            let mut prev = v;
            (0..spec.max_len)
                .map(|_| {
                    let next = sample_index(&rows[prev], &mut rng);
                    prev = next;
                    vocab[next]
                })
                .collect()
        })
        .collect();
    let mut model = BigramModel::new(vocab.clone(), spec.alpha)?;
    model.train(corpus.iter().map(String::as_str))?;

    let prefix = model.decode(&model.sample(&mut rng, PREFIX_LEN));
    let suffix = model.decode(&model.sample(&mut rng, SUFFIX_LEN));
    let template = format!("{prefix}{{sentence}}{suffix}");

    let mut suite = SyntheticSuite {
        records: Vec::with_capacity(spec.n),
        traces: Vec::with_capacity(spec.n),
        errors: Vec::with_capacity(spec.n),
        spiked: Vec::with_capacity(spec.n),
        raw_outputs: Vec::with_capacity(spec.n),
        model,
    };
    for i in 0..spec.n {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let sentence = suite.model.decode(&suite.model.sample(&mut rng, len));
        let start = rng.random_range(0..=len - spec.span_len);
        let error = rng.random_bool(spec.error_rate);
        let spiked = if rng.random_bool(spec.rho) { error } else { !error };
        let record = ExampleRecord {
            id: format!("syn-{i:05}"),
            sentence,
            expression: Some(CharSpan::new(start, start + spec.span_len)),
            task: TaskKind::Idiom,
            instruction: Some(template.clone()),
            gold: String::from("i"),
            choices: None,
        };
        let prompt = build_prompt(&record)?;
        let first = prompt.sentence_start;
        let mut trace =
            suite
                .model
                .trace_prompt(&record.id, &prompt.text, TokenRange::new(first, first + len - 1))?;
        if spiked {
            let j = first + start + rng.random_range(0..spec.span_len);
            plant_spike(&mut trace, j, spec.magnitude);
        }
        let answer = if error { "l" } else { "i" };
        suite.raw_outputs.push(format!("output: {answer}"));
        suite.records.push(record);
        suite.traces.push(trace);
        suite.errors.push(error);
        suite.spiked.push(spiked);
    }
    Ok(suite)
}

/// Lowers the log-probability of token `j` by `bits` under both the full
/// prefix (its surprisal) and the prefix with `t_{j-1}` deleted (the
/// `cis_next` stored at `j - 1`).
pub fn plant_spike(trace: &mut TokenTrace, j: usize, bits: f64) {
    trace.tokens[j].surprisal += bits;
    if j > 0 {
        if let Some(c) = trace.tokens[j - 1].cis_next.as_mut() {
            *c -= bits;
        }
    }
}

/// Fraction of examples whose spike indicator equals the error label; close
/// to `ρ` for large suites.
pub fn spike_agreement(suite: &SyntheticSuite) -> f64 {
    let agree = suite
        .errors
        .iter()
        .zip(&suite.spiked)
        .filter(|(e, s)| e == s)
        .count();
    agree as f64 / suite.errors.len().max(1) as f64
}

/// Error-class F1 of predicting the spike indicator itself, the best any
/// trace-based classifier can do in expectation.
pub fn oracle_f1(suite: &SyntheticSuite) -> f64 {
    let tp = suite.errors.iter().zip(&suite.spiked).filter(|(e, s)| **e && **s).count() as f64;
    let pp = suite.spiked.iter().filter(|s| **s).count() as f64;
    let ap = suite.errors.iter().filter(|e| **e).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / pp, tp / ap);
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{series_from_trace, CwsConfig, Measure};
    use crate::trace::validate_trace;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n: 60,
            corpus_sequences: 50,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = make_synthetic(&small(), 7).unwrap();
        let b = make_synthetic(&small(), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, make_synthetic(&small(), 8).unwrap().records);
        for (r, t) in a.records.iter().zip(&a.traces) {
            r.validate().unwrap();
            validate_trace(t).unwrap();
        }
    }

    #[test]
    fn spike_only_moves_surprisal() {
        let spec = small();
        let suite = make_synthetic(&spec, 3).unwrap();
        let i = suite.spiked.iter().position(|&s| s).unwrap();
        let spiked = &suite.traces[i];
        let clean = suite
            .model
            .trace_prompt(&spiked.example_id, &build_prompt(&suite.records[i]).unwrap().text, spiked.sentence_token_range)
            .unwrap();
        let cfg = CwsConfig::default();
        for m in [Measure::H, Measure::Cis, Measure::MaxP, Measure::Odd] {
            let a = series_from_trace(spiked, m, cfg).unwrap();
            let b = series_from_trace(&clean, m, cfg).unwrap();
            for k in 0..a.len() {
                assert!((a.values[k] - b.values[k]).abs() < 1e-12, "{m} moved at {k}");
            }
        }
        let diff: Vec<usize> = (0..clean.len())
            .filter(|&k| spiked.tokens[k].surprisal != clean.tokens[k].surprisal)
            .collect();
        assert_eq!(diff.len(), 1);
        let span = suite.records[i].expression.unwrap().shift(spiked.sentence_token_range.first);
        assert!(span.start <= diff[0] && diff[0] < span.end);
    }

    #[test]
    fn rho_one_means_spikes_are_errors() {
        let spec = SyntheticSpec { rho: 1.0, ..small() };
        let s = make_synthetic(&spec, 1).unwrap();
        assert_eq!(s.errors, s.spiked);
        assert_eq!(spike_agreement(&s), 1.0);
        assert_eq!(oracle_f1(&s), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec { rho: 0.4, ..small() }.validate().is_err());
        assert!(SyntheticSpec { magnitude: -1.0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { span_len: 50, ..small() }.validate().is_err());
        assert!(SyntheticSpec::default().validate().is_ok());
    }
}
