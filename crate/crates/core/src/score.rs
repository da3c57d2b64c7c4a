//! Concrete-score tables and the trait every score source implements.

use crate::error::{Error, Result};
use crate::seq::TokenSequence;

/// `d x n` table of ratios `p_t(x with position i set to y) / p_t(x)`.
///
/// Entries at the current token are exactly 1. Network outputs are
/// strictly positive; exact oracle scores may contain zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    len: usize,
    vocab: usize,
    values: Vec<f64>,
}

impl ScoreTable {
    /// Build from row-major values, forcing the current-token entries to 1.
    pub fn new(values: Vec<f64>, vocab: usize, current: &TokenSequence) -> Result<Self> {
        let len = current.len();
        if values.len() != len * vocab {
            return Err(Error::LengthMismatch {
                context: "score table entries vs d x n",
                left: values.len(),
                right: len * vocab,
            });
        }
        if let Some(p) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "score entry {p} is {} (must be finite and non-negative)",
                values[p]
            )));
        }
        let mut table = Self { len, vocab, values };
        for (i, &x) in current.ids().iter().enumerate() {
            table.values[i * vocab + x] = 1.0;
        }
        Ok(table)
    }

    pub fn constant(value: f64, vocab: usize, current: &TokenSequence) -> Result<Self> {
        Self::new(vec![value; current.len() * vocab], vocab, current)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn get(&self, position: usize, token: usize) -> f64 {
        self.values[position * self.vocab + token]
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.values[position * self.vocab..(position + 1) * self.vocab]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Anything that produces a concrete score for a noised sequence at time `t`.
pub trait ScoreModel {
    fn vocab(&self) -> usize;

    fn score(&self, x_t: &TokenSequence, t: f64) -> Result<ScoreTable>;

    fn score_batch(&self, xs: &[TokenSequence], ts: &[f64]) -> Result<Vec<ScoreTable>> {
        xs.iter().zip(ts).map(|(x, &t)| self.score(x, t)).collect()
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn vocab(&self) -> usize {
        (**self).vocab()
    }

    fn score(&self, x_t: &TokenSequence, t: f64) -> Result<ScoreTable> {
        (**self).score(x_t, t)
    }

    fn score_batch(&self, xs: &[TokenSequence], ts: &[f64]) -> Result<Vec<ScoreTable>> {
        (**self).score_batch(xs, ts)
    }
}

/// Every off-current entry equals one fixed value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScore {
    pub value: f64,
    pub vocab: usize,
}

impl ScoreModel for ConstantScore {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn score(&self, x_t: &TokenSequence, _t: f64) -> Result<ScoreTable> {
        ScoreTable::constant(self.value, self.vocab, x_t)
    }
}
