//! Error classifiers and the train/evaluate protocol.
//!
//! Features are z-scored with statistics from the training split only, then
//! fed to either an L2-regularized logistic regression or a two-hidden-layer
//! MLP. Each seed draws a fresh stratified 80/20 split and a fresh
//! initialization; reports average the per-seed metrics.

mod logreg;
mod matrix;
mod metrics;
mod mlp;
mod split;
mod standardize;

use alloc::vec::Vec;
use core::fmt;

pub use logreg::{fit_logreg, LogRegConfig, LogRegModel};
pub use matrix::Matrix;
pub use metrics::{decide, evaluate, ClassMetrics, EvalReport, Metrics};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};
pub use split::{stratified_split, Split};
pub use standardize::{Standardizer, ZERO_STD};

use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelKind {
    #[default]
    LogReg,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::LogReg, ModelKind::Mlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Classifier {
    #[cfg_attr(feature = "serde", serde(rename = "logreg"))]
    LogReg(LogRegModel),
    Mlp(MlpModel),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::LogReg(_) => ModelKind::LogReg,
            Classifier::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Probabilities for already standardized rows.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Classifier::LogReg(m) => m.predict_proba(x),
            Classifier::Mlp(m) => m.predict_proba(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub model: ModelKind,
    pub logreg: LogRegConfig,
    pub mlp: MlpConfig,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::LogReg,
            logreg: LogRegConfig::default(),
            mlp: MlpConfig::default(),
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidThreshold(self.threshold));
        }
        match self.model {
            ModelKind::LogReg => self.logreg.validate(),
            ModelKind::Mlp => self.mlp.validate(),
        }
    }
}

/// Standardizer, fitted model and decision threshold, ready to score raw rows.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainedClassifier {
    pub standardizer: Standardizer,
    pub classifier: Classifier,
    pub threshold: f64,
}

impl TrainedClassifier {
    pub fn predict_proba(&self, raw: &Matrix) -> Result<Vec<f64>> {
        raw.check_finite()?;
        self.classifier.predict_proba(&self.standardizer.transform(raw)?)
    }

    pub fn predict(&self, raw: &Matrix) -> Result<Vec<bool>> {
        decide(&self.predict_proba(raw)?, self.threshold)
    }
}

/// Fits the standardizer on `x`, then the configured model.
pub fn train(x: &Matrix, y: &[bool], config: &TrainConfig, seed: u64) -> Result<TrainedClassifier> {
    config.validate()?;
    x.check_finite()?;
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.transform(x)?;
    let classifier = match config.model {
        ModelKind::LogReg => Classifier::LogReg(fit_logreg(&z, y, &config.logreg)?),
        ModelKind::Mlp => Classifier::Mlp(fit_mlp(&z, y, &config.mlp, seed)?),
    };
    Ok(TrainedClassifier {
        standardizer,
        classifier,
        threshold: config.threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            test_fraction: 0.2,
            seeds: alloc::vec![0, 1, 2],
        }
    }
}

/// One seed of the protocol: split, fit on train, score the test side.
pub fn run_seed(x: &Matrix, y: &[bool], config: &ProtocolConfig, seed: u64) -> Result<Metrics> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    let split = stratified_split(y, config.test_fraction, seed)?;
    if split.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<bool>>();
    let model = train(&x.select_rows(&split.train), &pick(&split.train), &config.train, seed)?;
    let predicted = model.predict(&x.select_rows(&split.test))?;
    evaluate(&predicted, &pick(&split.test))
}

/// Runs every seed in order and averages.
pub fn run_protocol(x: &Matrix, y: &[bool], config: &ProtocolConfig) -> Result<EvalReport> {
    let runs = config
        .seeds
        .iter()
        .map(|&s| run_seed(x, y, config, s))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_runs(config.seeds.clone(), runs)
}
