//! Add-α smoothed character bigram model.
//!
//! Small enough that every next-token distribution is exactly computable,
//! yet context-dependent so CIS is non-trivial. A reserved start row
//! conditions the first token.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::CharSpan;
use crate::math;
use crate::measures;
use crate::trace::{TokenRange, TokenStep, TokenTrace};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const MAX_VOCAB: usize = 256;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BigramModel {
    vocab: Vec<char>,
    /// Row-major `|V| x |V|`; `counts[u * |V| + v]` counts `u` followed by `v`.
    counts: Vec<u64>,
    /// Sequence-initial counts (the start row).
    #[cfg_attr(feature = "serde", serde(default))]
    start_counts: Vec<u64>,
    alpha: f64,
}

impl BigramModel {
    /// An untrained model over `vocab`.
    pub fn new(vocab: Vec<char>, alpha: f64) -> Result<Self> {
        let v = vocab.len();
        Self::from_parts(vocab, vec![0; v * v], vec![0; v], alpha)
    }

    pub fn from_parts(
        vocab: Vec<char>,
        counts: Vec<u64>,
        start_counts: Vec<u64>,
        alpha: f64,
    ) -> Result<Self> {
        let model = Self {
            vocab,
            counts,
            start_counts,
            alpha,
        };
        model.check()?;
        Ok(model)
    }

    /// Re-checks invariants, e.g. after deserializing.
    pub fn check(&self) -> Result<()> {
        let v = self.vocab.len();
        if v == 0 || v > MAX_VOCAB {
            return Err(Error::InvalidVocabulary("size must be in 1..=256"));
        }
        let mut sorted = self.vocab.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != v {
            return Err(Error::InvalidVocabulary("duplicate symbol"));
        }
        if self.counts.len() != v * v {
            return Err(Error::InvalidVocabulary("counts must be |V| x |V|"));
        }
        if !self.start_counts.is_empty() && self.start_counts.len() != v {
            return Err(Error::InvalidVocabulary("start_counts must have |V| entries"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("smoothing alpha must be positive"));
        }
        Ok(())
    }

    /// Vocabulary made of the distinct chars of `texts`, in sorted order.
    pub fn vocab_from<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<char> {
        let mut v: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn start_counts(&self) -> &[u64] {
        &self.start_counts
    }

    /// Count of `next` following `prev` (`None` is the start row).
    pub fn count(&self, prev: Option<usize>, next: usize) -> u64 {
        match prev {
            Some(u) => self.counts[u * self.vocab.len() + next],
            None => self.start_counts.get(next).copied().unwrap_or(0),
        }
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.vocab
            .iter()
            .position(|&v| v == c)
            .ok_or(Error::UnknownSymbol(c))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index_of(c)).collect()
    }

    /// Adds the bigrams of each sequence, including its start transition.
    pub fn train<'a>(&mut self, sequences: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let v = self.vocab.len();
        if self.start_counts.is_empty() {
            self.start_counts = vec![0; v];
        }
        for seq in sequences {
            let ids = self.encode(seq)?;
            let mut prev = None;
            for id in ids {
                match prev {
                    None => self.start_counts[id] += 1,
                    Some(u) => self.counts[u * v + id] += 1,
                }
                prev = Some(id);
            }
        }
        Ok(())
    }

    /// `P(· | prev)` with add-α smoothing.
    pub fn row(&self, prev: Option<usize>) -> Vec<f64> {
        let v = self.vocab.len();
        let counts: Vec<u64> = (0..v).map(|w| self.count(prev, w)).collect();
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + self.alpha * v as f64;
        counts
            .into_iter()
            .map(|c| (c as f64 + self.alpha) / denom)
            .collect()
    }

    /// Next-symbol distribution after `prefix`; only its last symbol matters.
    pub fn next_distribution(&self, prefix: &[char]) -> Result<Vec<f64>> {
        for &c in prefix {
            self.index_of(c)?;
        }
        let prev = match prefix.last() {
            Some(&c) => Some(self.index_of(c)?),
            None => None,
        };
        Ok(self.row(prev))
    }

    /// Scores `text` one char per token and fills every trace field.
    ///
    /// `cis_next` at `i` rescores `t_{i+1}` after deleting `t_i` from the
    /// prefix, so it conditions on `t_{i-1}` (or the start row).
    pub fn trace_prompt(
        &self,
        example_id: &str,
        text: &str,
        sentence: TokenRange,
    ) -> Result<TokenTrace> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(Error::InvalidConfig("cannot trace an empty prompt"));
        }
        if sentence.first > sentence.last || sentence.last >= chars.len() {
            return Err(Error::IndexOutOfRange {
                index: sentence.last,
                len: chars.len(),
            });
        }
        let ids = self.encode(text)?;
        let n = chars.len();
        let mut tokens = Vec::with_capacity(n);
        for i in 0..n {
            let dist = self.next_distribution(&chars[..i])?;
            let obs = ids[i];
            let kl_ref = if self.vocab.len() >= 2 {
                Some(measures::kl_to_reference(&dist, obs)?)
            } else {
                None
            };
            let cis_next = if i + 1 < n {
                // t_<i: the prefix up to t_i with t_i itself removed
                let rescored = self.next_distribution(&chars[..i])?;
                Some(math::log2(rescored[ids[i + 1]]))
            } else {
                None
            };
            tokens.push(TokenStep {
                token_text: chars[i].to_string(),
                span: CharSpan::new(i, i + 1),
                surprisal: measures::surprisal(dist[obs])?,
                entropy: Some(measures::entropy(&dist)?),
                kl_ref,
                max_prob: Some(measures::max_prob(&dist)),
                oddball: Some(measures::oddballness(&dist, obs)?),
                cis_next,
            });
        }
        Ok(TokenTrace {
            example_id: example_id.to_string(),
            sentence_token_range: sentence,
            tokens,
        })
    }

    /// Draws `len` symbol ids by ancestral sampling from the start row.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut prev = None;
        for _ in 0..len {
            let next = sample_index(&self.row(prev), rng);
            out.push(next);
            prev = Some(next);
        }
        out
    }

    pub fn decode(&self, ids: &[usize]) -> alloc::string::String {
        ids.iter().map(|&i| self.vocab[i]).collect()
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}
