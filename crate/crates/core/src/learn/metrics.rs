use alloc::vec::Vec;

use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// `1[p ≥ τ]` for each probability.
pub fn decide(probabilities: &[f64], tau: f64) -> Result<Vec<bool>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    Ok(probabilities.iter().map(|&p| p >= tau).collect())
}

/// Precision, recall and F1 of one class, as fractions. Any ratio with a zero
/// denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Metrics {
    pub accuracy: f64,
    /// The positive class: the model answered wrongly.
    pub error: ClassMetrics,
    pub correct: ClassMetrics,
    pub n: usize,
}

pub fn evaluate(predicted: &[bool], truth: &[bool]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics {
        accuracy: ratio(tp + tn, truth.len()),
        error: ClassMetrics::from_counts(tp, fp, fn_),
        correct: ClassMetrics::from_counts(tn, fn_, fp),
        n: truth.len(),
    })
}

/// Per-seed metrics and their field-wise mean. The mean F1 is the mean of the
/// per-seed F1 values, not the harmonic mean of the mean precision and recall.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<Metrics>,
    pub mean: Metrics,
}

fn mean_class(cs: &[ClassMetrics]) -> ClassMetrics {
    let n = cs.len() as f64;
    ClassMetrics {
        precision: cs.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: cs.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: cs.iter().map(|c| c.f1).sum::<f64>() / n,
        support: cs.iter().map(|c| c.support).sum::<usize>() / cs.len(),
    }
}

impl EvalReport {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<Metrics>) -> Result<Self> {
        if runs.is_empty() || seeds.len() != runs.len() {
            return Err(Error::InvalidConfig("need one run per seed and at least one seed"));
        }
        let n = runs.len() as f64;
        let errors: Vec<_> = runs.iter().map(|m| m.error).collect();
        let corrects: Vec<_> = runs.iter().map(|m| m.correct).collect();
        let mean = Metrics {
            accuracy: runs.iter().map(|m| m.accuracy).sum::<f64>() / n,
            error: mean_class(&errors),
            correct: mean_class(&corrects),
            n: runs.iter().map(|m| m.n).sum::<usize>() / runs.len(),
        };
        Ok(Self { seeds, runs, mean })
    }

    /// Mean error-class F1.
    pub fn error_f1(&self) -> f64 {
        self.mean.error.f1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert_eq!(decide(&[0.5, 0.49], 0.5).unwrap(), alloc::vec![true, false]);
        assert!(decide(&[0.5], 0.0).is_err());
        assert!(decide(&[0.5], 1.0).is_err());
        assert_eq!(decide(&[0.3, 0.99], 1.0 - 1e-9).unwrap(), alloc::vec![false, false]);
    }

    #[test]
    fn perfect_and_degenerate() {
        let t = [true, false, true, false];
        assert_eq!(evaluate(&t, &t).unwrap().error.f1, 1.0);
        let m = evaluate(&[false; 4], &t).unwrap();
        assert_eq!(m.error.f1, 0.0);
        assert_eq!(m.error.precision, 0.0);
        assert_eq!(m.correct.recall, 1.0);
        assert_eq!(evaluate(&[], &[]), Err(Error::EmptyTestSet));
    }

    #[test]
    fn hand_counts() {
        // tp 2, fp 1, fn 1, tn 1
        let m = evaluate(&[true, true, true, false, false], &[true, true, false, true, false]).unwrap();
        assert!((m.error.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.error.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.error.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.correct.precision, 0.5);
        assert_eq!(m.accuracy, 0.6);
    }

    #[test]
    fn seed_mean() {
        let run = |f1| Metrics {
            error: ClassMetrics {
                f1,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = EvalReport::from_runs(alloc::vec![0, 1, 2], alloc::vec![run(0.80), run(0.85), run(0.90)]).unwrap();
        assert!((r.error_f1() - 0.85).abs() < 1e-12);
    }
}
