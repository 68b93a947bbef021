use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Sorted row indices.
    pub train: Vec<usize>,
    /// Sorted row indices.
    pub test: Vec<usize>,
}

/// Stratified split: each class sends `round(test_fraction · n_class)` of its
/// rows to the test side, chosen by a seeded shuffle.
pub fn stratified_split(labels: &[bool], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig("test fraction must be in (0, 1)"));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for mut class in [neg, pos] {
        class.shuffle(&mut rng);
        let n_test = libm::round(test_fraction * class.len() as f64) as usize;
        test.extend_from_slice(&class[..n_test]);
        train.extend_from_slice(&class[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, pos: usize) -> Vec<bool> {
        (0..n).map(|i| i < pos).collect()
    }

    #[test]
    fn exact_proportion() {
        let y = labels(100, 30);
        let s = stratified_split(&y, 0.2, 1).unwrap();
        assert_eq!(s.train.iter().filter(|&&i| y[i]).count(), 24);
        assert_eq!(s.test.iter().filter(|&&i| y[i]).count(), 6);
        assert_eq!(s.train.len() + s.test.len(), 100);
    }

    #[test]
    fn seven_of_fifty() {
        let y = labels(50, 7);
        let s = stratified_split(&y, 0.2, 9).unwrap();
        let tr = s.train.iter().filter(|&&i| y[i]).count();
        assert!(tr == 5 || tr == 6);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let y = labels(200, 40);
        assert_eq!(stratified_split(&y, 0.2, 5).unwrap(), stratified_split(&y, 0.2, 5).unwrap());
        assert_ne!(stratified_split(&y, 0.2, 5).unwrap(), stratified_split(&y, 0.2, 6).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        assert_eq!(stratified_split(&[true; 10], 0.2, 0), Err(Error::SingleClass));
        assert!(stratified_split(&labels(10, 3), 1.0, 0).is_err());
    }
}
