use alloc::vec::Vec;

use super::Matrix;
use crate::math;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Columns whose fitted std is below this are mapped to 0.
pub const ZERO_STD: f64 = 1e-12;

/// Per-column z-scoring with population statistics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = alloc::vec![0.0; d];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; d];
        for r in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| math::sqrt(s / n)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s < ZERO_STD { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_maps_to_zero() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        assert_eq!(z.get(0, 1), 0.0);
        assert_eq!(s.mean[0], 3.0);
        let expected = -2.0 / (8.0f64 / 3.0).sqrt();
        assert!((z.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_checked() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let y = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(s.transform(&y).is_err());
    }
}
