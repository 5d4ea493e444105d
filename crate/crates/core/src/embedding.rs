//! Token vocabulary and the trainable lookup-table embedder.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Contiguous token ids with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Assigns ids to every token seen at least `min_freq` times, most
    /// frequent first, ties broken lexicographically.
    pub fn build<I, S>(corpus: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq == 0 {
            return Err(Error::Argument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut sentences = 0;
        for sentence in corpus {
            sentences += 1;
            for tok in sentence {
                *counts.entry(tok.as_ref().to_owned()).or_default() += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::Argument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::Argument(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids, truncated to `max_len`. An empty sequence becomes
    /// a single `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<usize> {
        let ids: Vec<usize> = tokens
            .iter()
            .take(max_len)
            .map(|t| self.id(t.as_ref()))
            .collect();
        if ids.is_empty() {
            vec![UNK_ID]
        } else {
            ids
        }
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Maps a token-id sequence of length `m` to an `m × dim` matrix.
///
/// The shipped implementation is [`EmbeddingTable`]; a contextual encoder can
/// stand in for it as long as it honours the same shape contract.
pub trait Embedder<T: Real> {
    fn dim(&self) -> usize;

    fn embed(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ids: &[usize]) -> Result<Var>;
}

/// A `|V| × dim` trainable table. Row 0 (`<pad>`) is zero and never updated.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub weight: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let limit = (3.0 / dim as f64).sqrt();
        let weight = store.add_uniform(name, &[vocab_size, dim], limit, rng)?;
        store.get_mut(weight).value.data_mut()[..dim].fill(T::zero());
        Ok(EmbeddingTable {
            weight,
            vocab_size,
            dim,
        })
    }

    /// Clears the `<pad>` row of the gradient so optimizer steps leave it at zero.
    pub fn mask_pad_grad<T: Real>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).grad.data_mut()[..self.dim].fill(T::zero());
    }

    pub fn embed_tokens<T: Real, S: AsRef<str>>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vocab: &Vocabulary,
        tokens: &[S],
        max_len: usize,
    ) -> Result<Var> {
        self.embed(tape, store, &vocab.encode(tokens, max_len))
    }
}

impl<T: Real> Embedder<T> for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ids: &[usize]) -> Result<Var> {
        let table = tape.param(store, self.weight);
        tape.gather_rows(table, ids)
    }
}
