//! Alphabets, token sequences, aligned germline/observed pairs and the
//! string metrics built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 20 standard amino acids in one-letter alphabetical order.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const MASK_SYMBOL: char = '#';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    tokens: Vec<char>,
    mask_index: Option<usize>,
}

impl Alphabet {
    pub fn new(symbols: &str, mask_index: Option<usize>) -> Result<Self> {
        let tokens: Vec<char> = symbols.chars().collect();
        if tokens.len() < 2 {
            return Err(Error::InvalidAlphabet(format!(
                "need at least 2 symbols, got {}",
                tokens.len()
            )));
        }
        for (i, c) in tokens.iter().enumerate() {
            if c.is_control() || c.is_whitespace() {
                return Err(Error::InvalidAlphabet(format!(
                    "symbol {c:?} at index {i} is not printable"
                )));
            }
            if tokens[..i].contains(c) {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol {c:?}")));
            }
        }
        if let Some(m) = mask_index {
            if m >= tokens.len() {
                return Err(Error::InvalidAlphabet(format!(
                    "mask index {m} out of range for {} symbols",
                    tokens.len()
                )));
            }
        }
        Ok(Self { tokens, mask_index })
    }

    /// 20 amino acids followed by the mask symbol `#` (n = 21).
    pub fn protein() -> Self {
        let symbols = format!("{AMINO_ACIDS}{MASK_SYMBOL}");
        Self::new(&symbols, Some(AMINO_ACIDS.len())).expect("canonical alphabet is valid")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn mask_index(&self) -> Option<usize> {
        self.mask_index
    }

    pub fn is_mask(&self, id: usize) -> bool {
        self.mask_index == Some(id)
    }

    pub fn symbols(&self) -> &[char] {
        &self.tokens
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.tokens.get(id).copied()
    }

    pub fn index_of(&self, symbol: char) -> Option<usize> {
        self.tokens.iter().position(|&c| c == symbol)
    }

    /// Ids of every non-mask token, in alphabet order.
    pub fn residues(&self) -> Vec<usize> {
        (0..self.size()).filter(|&i| !self.is_mask(i)).collect()
    }

    pub fn residue_count(&self) -> usize {
        self.size() - usize::from(self.mask_index.is_some())
    }
}

/// A non-empty list of token ids. Range checking against a particular
/// alphabet happens at construction through [`TokenSequence::new`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= alphabet_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                position,
                size: alphabet_size,
            });
        }
        Ok(Self(ids))
    }

    pub(crate) fn from_ids_unchecked(ids: Vec<usize>) -> Self {
        debug_assert!(!ids.is_empty());
        Self(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    /// Copy with position `i` replaced by `token`.
    pub fn with_token(&self, i: usize, token: usize) -> Self {
        let mut ids = self.0.clone();
        ids[i] = token;
        Self(ids)
    }

    pub(crate) fn set(&mut self, i: usize, token: usize) {
        self.0[i] = token;
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.0
    }
}

pub fn encode(text: &str, alphabet: &Alphabet) -> Result<TokenSequence> {
    let ids = text
        .chars()
        .enumerate()
        .map(|(position, symbol)| {
            alphabet
                .index_of(symbol)
                .ok_or(Error::UnknownSymbol { symbol, position })
        })
        .collect::<Result<Vec<_>>>()?;
    TokenSequence::new(ids, alphabet.size())
}

pub fn decode(tokens: &TokenSequence, alphabet: &Alphabet) -> Result<String> {
    tokens
        .ids()
        .iter()
        .enumerate()
        .map(|(position, &id)| {
            alphabet.symbol(id).ok_or(Error::TokenOutOfRange {
                id,
                position,
                size: alphabet.size(),
            })
        })
        .collect()
}

/// A substitution-aligned (germline, observed) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GermlinePair {
    pub id: String,
    germline: TokenSequence,
    observed: TokenSequence,
}

impl GermlinePair {
    pub fn new(
        id: impl Into<String>,
        germline: TokenSequence,
        observed: TokenSequence,
        alphabet: &Alphabet,
    ) -> Result<Self> {
        let id = id.into();
        if germline.len() != observed.len() {
            return Err(Error::InvalidPair {
                id,
                reason: format!(
                    "germline length {} differs from observed length {}",
                    germline.len(),
                    observed.len()
                ),
            });
        }
        for (name, seq) in [("germline", &germline), ("observed", &observed)] {
            if let Some(p) = seq.ids().iter().position(|&t| t >= alphabet.size()) {
                return Err(Error::InvalidPair {
                    id,
                    reason: format!("{name} token at position {p} is out of range"),
                });
            }
            if let Some(p) = seq.ids().iter().position(|&t| alphabet.is_mask(t)) {
                return Err(Error::InvalidPair {
                    id,
                    reason: format!("{name} contains the mask symbol at position {p}"),
                });
            }
        }
        Ok(Self {
            id,
            germline,
            observed,
        })
    }

    pub fn from_strings(
        id: impl Into<String>,
        germline: &str,
        observed: &str,
        alphabet: &Alphabet,
    ) -> Result<Self> {
        Self::new(id, encode(germline, alphabet)?, encode(observed, alphabet)?, alphabet)
    }

    pub fn germline(&self) -> &TokenSequence {
        &self.germline
    }

    pub fn observed(&self) -> &TokenSequence {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.germline.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Sorted positions where the observed residue differs from the germline.
pub fn non_germline_positions(pair: &GermlinePair) -> Vec<usize> {
    pair.germline
        .ids()
        .iter()
        .zip(pair.observed.ids())
        .enumerate()
        .filter_map(|(i, (g, o))| (g != o).then_some(i))
        .collect()
}

/// Unit-cost edit distance over symbol strings.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

pub fn token_levenshtein(a: &TokenSequence, b: &TokenSequence) -> usize {
    strsim::generic_levenshtein(&a.0, &b.0)
}

pub fn percent_identity(a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            context: "percent identity",
            left: a.len(),
            right: b.len(),
        });
    }
    let same = a.ids().iter().zip(b.ids()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Percent identity for equal lengths, `1 - levenshtein / max_len` otherwise.
pub fn sequence_identity(a: &TokenSequence, b: &TokenSequence) -> f64 {
    if a.len() == b.len() {
        percent_identity(a, b).expect("lengths are equal")
    } else {
        let longest = a.len().max(b.len());
        1.0 - token_levenshtein(a, b) as f64 / longest as f64
    }
}
