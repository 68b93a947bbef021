//! Tokenwise information measures.
//!
//! All quantities are in bits. The four measures used as features are
//! surprisal (SPR), entropy (H), confidence-weighted surprisal (CWS) and the
//! contextual influence score (CIS). Max probability (MAXP) and oddballness
//! (ODD) feed the baselines.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::trace::TokenTrace;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// How far a distribution may drift from summing to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Floor used by [`ZeroProbPolicy::Clamp`].
pub const CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Measure {
    Spr,
    H,
    Cws,
    Cis,
    MaxP,
    Odd,
}

impl Measure {
    /// The measures that make up the feature vectors.
    pub const PHI: [Measure; 4] = [Measure::Spr, Measure::H, Measure::Cws, Measure::Cis];

    pub const ALL: [Measure; 6] = [
        Measure::Spr,
        Measure::H,
        Measure::Cws,
        Measure::Cis,
        Measure::MaxP,
        Measure::Odd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::Spr => "spr",
            Measure::H => "h",
            Measure::Cws => "cws",
            Measure::Cis => "cis",
            Measure::MaxP => "maxp",
            Measure::Odd => "odd",
        }
    }

    pub fn parse(s: &str) -> Option<Measure> {
        let lower = s.trim();
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(lower))
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference distribution and penalty weight for CWS.
///
/// `Q` puts 0.9 on the observed token and spreads 0.1 uniformly over the rest
/// of the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CwsConfig {
    pub gamma: f64,
}

impl CwsConfig {
    pub const Q_OBSERVED: f64 = 0.9;
    pub const Q_REST: f64 = 0.1;

    pub fn new(gamma: f64) -> Self {
        Self { gamma }
    }
}

impl Default for CwsConfig {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ZeroProbPolicy {
    /// `p <= 0` is an error.
    #[default]
    Error,
    /// Raise `p` to [`CLAMP_FLOOR`], for lossy external traces.
    Clamp,
}

/// `-log2 p`.
pub fn surprisal(p_observed: f64) -> Result<f64> {
    surprisal_with(p_observed, ZeroProbPolicy::Error)
}

pub fn surprisal_with(p_observed: f64, policy: ZeroProbPolicy) -> Result<f64> {
    if p_observed.is_nan() || p_observed > 1.0 {
        return Err(Error::InvalidProbability(p_observed));
    }
    let p = if p_observed <= 0.0 {
        match policy {
            ZeroProbPolicy::Error => return Err(Error::InvalidProbability(p_observed)),
            ZeroProbPolicy::Clamp => CLAMP_FLOOR,
        }
    } else {
        p_observed
    };
    // -log2(1) is -0.0
    Ok(0.0 - math::log2(p))
}

fn check_distribution(dist: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &p in dist {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        sum += p;
    }
    if dist.is_empty() || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Shannon entropy `-Σ p log2 p`, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    check_distribution(dist)?;
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * math::log2(p))
        .sum();
    Ok(h.max(0.0))
}

/// `D_KL(P || Q)` in bits, where `Q` is the 0.9-peaked reference on `observed`.
pub fn kl_to_reference(dist: &[f64], observed: usize) -> Result<f64> {
    check_distribution(dist)?;
    let v = dist.len();
    if observed >= v {
        return Err(Error::IndexOutOfRange {
            index: observed,
            len: v,
        });
    }
    if v < 2 {
        return Err(Error::DegenerateVocabulary);
    }
    let log_q_obs = math::log2(CwsConfig::Q_OBSERVED);
    let log_q_rest = math::log2(CwsConfig::Q_REST / (v - 1) as f64);
    let kl: f64 = dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(t, &p)| {
            let log_q = if t == observed { log_q_obs } else { log_q_rest };
            p * (math::log2(p) - log_q)
        })
        .sum();
    Ok(kl.max(0.0))
}

/// `-log2 p + γ · KL`.
pub fn cws(p_observed: f64, kl_bits: f64, config: CwsConfig) -> Result<f64> {
    Ok(surprisal(p_observed)? + config.gamma * kl_bits)
}

/// `log2 P(t_{i+1} | t_<=i) - log2 P(t_{i+1} | t_<i)`.
pub fn cis(logp_next_full_prefix: f64, logp_next_deleted_prefix: f64) -> f64 {
    logp_next_full_prefix - logp_next_deleted_prefix
}

/// `Σ_v ReLU(P[v] - P[observed])`.
pub fn oddballness(dist: &[f64], observed: usize) -> Result<f64> {
    let p_obs = *dist.get(observed).ok_or(Error::IndexOutOfRange {
        index: observed,
        len: dist.len(),
    })?;
    Ok(dist.iter().map(|&p| (p - p_obs).max(0.0)).sum())
}

pub fn max_prob(dist: &[f64]) -> f64 {
    dist.iter().copied().fold(0.0, f64::max)
}

/// One measure evaluated at every token of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSeries {
    pub measure: Measure,
    pub values: Vec<f64>,
    pub available: Vec<bool>,
}

impl MeasureSeries {
    pub fn get(&self, i: usize) -> Option<f64> {
        match self.available.get(i) {
            Some(true) => Some(self.values[i]),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A series where nothing is available.
    pub fn unavailable(measure: Measure, len: usize) -> Self {
        Self {
            measure,
            values: vec![0.0; len],
            available: vec![false; len],
        }
    }

    pub fn any_available(&self) -> bool {
        self.available.iter().any(|&a| a)
    }

    /// Builds a fully available series, mainly for tests and tooling.
    pub fn from_values(measure: Measure, values: Vec<f64>) -> Self {
        let available = vec![true; values.len()];
        Self {
            measure,
            values,
            available,
        }
    }
}

fn field_name(measure: Measure) -> &'static str {
    match measure {
        Measure::Spr => "surprisal",
        Measure::H => "entropy",
        Measure::Cws => "kl_ref",
        Measure::Cis => "cis_next",
        Measure::MaxP => "max_prob",
        Measure::Odd => "oddball",
    }
}

/// Reads one measure off a trace.
///
/// CWS is recomputed from the stored surprisal and `kl_ref`, so `γ` stays a
/// consumer-side setting. CIS at `i` pairs the stored surprisal of `i + 1`
/// (first term, negated) with `cis_next` at `i`; the last token has none.
pub fn series_from_trace(
    trace: &TokenTrace,
    measure: Measure,
    cws_config: CwsConfig,
) -> Result<MeasureSeries> {
    let n = trace.tokens.len();
    let mut values = vec![0.0; n];
    let mut available = vec![false; n];
    for (i, t) in trace.tokens.iter().enumerate() {
        let v = match measure {
            Measure::Spr => Some(t.surprisal),
            Measure::H => t.entropy,
            Measure::Cws => t.kl_ref.map(|kl| t.surprisal + cws_config.gamma * kl),
            Measure::Cis => match (trace.tokens.get(i + 1), t.cis_next) {
                (Some(next), Some(deleted)) => Some(cis(-next.surprisal, deleted)),
                _ => None,
            },
            Measure::MaxP => t.max_prob,
            Measure::Odd => t.oddball,
        };
        if let Some(v) = v {
            values[i] = v;
            available[i] = true;
        }
    }
    let could_exist = match measure {
        Measure::Cis => n > 1,
        _ => n > 0,
    };
    if could_exist && !available.iter().any(|&a| a) {
        return Err(Error::MeasureUnavailable {
            measure,
            field: field_name(measure),
        });
    }
    Ok(MeasureSeries {
        measure,
        values,
        available,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CharSpan;
    use crate::trace::{TokenRange, TokenStep};

    const EPS: f64 = 1e-12;

    #[test]
    fn surprisal_closed_forms() {
        assert_eq!(surprisal(0.25).unwrap(), 2.0);
        assert_eq!(surprisal(1.0).unwrap(), 0.0);
        assert!(surprisal(1.0).unwrap().is_sign_positive());
        assert!(surprisal(0.0).is_err());
        assert!(surprisal(-0.1).is_err());
        assert!(surprisal(1.5).is_err());
        let clamped = surprisal_with(0.0, ZeroProbPolicy::Clamp).unwrap();
        assert!((clamped - 39.863_137_138_648_35).abs() < 1e-9);
    }

    #[test]
    fn entropy_closed_forms() {
        assert!((entropy(&[0.125; 8]).unwrap() - 3.0).abs() < EPS);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5).abs() < EPS);
        assert!(matches!(entropy(&[0.5, 0.4]), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn kl_closed_forms() {
        let q = [0.9, 0.05, 0.05];
        assert!(kl_to_reference(&q, 0).unwrap().abs() < EPS);
        let one_hot = [0.0, 1.0, 0.0, 0.0];
        let expected = -(0.9f64).log2();
        assert!((kl_to_reference(&one_hot, 1).unwrap() - expected).abs() < EPS);
        assert!((expected - 0.152).abs() < 1e-3);
        assert!(matches!(kl_to_reference(&[1.0], 0), Err(Error::DegenerateVocabulary)));
        assert!(kl_to_reference(&q, 3).is_err());
    }

    #[test]
    fn cws_closed_forms() {
        let cfg0 = CwsConfig::new(0.0);
        assert_eq!(cws(0.25, 7.0, cfg0).unwrap(), 2.0);
        let q = [0.9, 0.05, 0.05];
        let kl = kl_to_reference(&q, 0).unwrap();
        let v = cws(0.9, kl, CwsConfig::default()).unwrap();
        assert!((v - (-(0.9f64).log2())).abs() < EPS);
    }

    #[test]
    fn cis_closed_forms() {
        assert_eq!(cis(-2.0, -2.0), 0.0);
        assert_eq!(cis(-1.0, -3.0), 2.0);
    }

    #[test]
    fn oddballness_closed_forms() {
        assert_eq!(oddballness(&[0.1, 0.6, 0.3], 1).unwrap(), 0.0);
        assert!((oddballness(&[0.0, 0.6, 0.4], 0).unwrap() - 1.0).abs() < EPS);
        assert!((oddballness(&[0.2, 0.5, 0.3], 0).unwrap() - 0.4).abs() < EPS);
        assert_eq!(max_prob(&[0.2, 0.5, 0.3]), 0.5);
    }

    fn tiny_trace() -> TokenTrace {
        let mut tokens: Vec<TokenStep> = (0..3)
            .map(|i| TokenStep::observed("x", CharSpan::new(i, i + 1), 1.0 + i as f64))
            .collect();
        tokens[0].kl_ref = Some(0.5);
        tokens[1].kl_ref = Some(0.25);
        tokens[2].kl_ref = Some(2.0);
        tokens[0].cis_next = Some(-1.5);
        tokens[1].cis_next = Some(-4.0);
        TokenTrace {
            example_id: "t".into(),
            sentence_token_range: TokenRange::new(0, 2),
            tokens,
        }
    }

    #[test]
    fn series_cws_and_cis() {
        let t = tiny_trace();
        let spr = series_from_trace(&t, Measure::Spr, CwsConfig::default()).unwrap();
        assert_eq!(spr.values, vec![1.0, 2.0, 3.0]);
        let cws0 = series_from_trace(&t, Measure::Cws, CwsConfig::new(0.0)).unwrap();
        assert_eq!(cws0.values, spr.values);
        let cws2 = series_from_trace(&t, Measure::Cws, CwsConfig::new(2.0)).unwrap();
        assert_eq!(cws2.values, vec![2.0, 2.5, 7.0]);
        let c = series_from_trace(&t, Measure::Cis, CwsConfig::default()).unwrap();
        assert_eq!(c.get(0), Some(-2.0 + 1.5));
        assert_eq!(c.get(1), Some(-3.0 + 4.0));
        assert_eq!(c.get(2), None);
    }

    #[test]
    fn series_missing_field_is_named() {
        let t = tiny_trace();
        let err = series_from_trace(&t, Measure::H, CwsConfig::default()).unwrap_err();
        assert_eq!(
            err,
            Error::MeasureUnavailable {
                measure: Measure::H,
                field: "entropy"
            }
        );
        assert!(alloc::format!("{err}").starts_with("entropy unavailable"));
    }

    #[test]
    fn measure_names_round_trip() {
        for m in Measure::ALL {
            assert_eq!(Measure::parse(m.as_str()), Some(m));
        }
        assert_eq!(Measure::parse("SPR"), Some(Measure::Spr));
        assert_eq!(Measure::parse("foo"), None);
    }
}
