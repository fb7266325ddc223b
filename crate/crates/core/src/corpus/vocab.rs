use std::collections::HashMap;

use super::TaggedCorpus;
use crate::error::{Error, Result};

/// Frequency rank of a word; 1 is the most frequent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rank {
    Known(u64),
    Oov,
}

/// Token ranks by descending count, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    /// Tokens in rank order.
    tokens: Vec<String>,
    /// Counts in rank order; absent when ranks came from a rank file.
    counts: Option<Vec<u64>>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I>(sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<String> = entries.iter().map(|(t, _)| t.to_string()).collect();
        let counts = entries.iter().map(|(_, c)| *c).collect();
        Ok(Self::from_parts(tokens, Some(counts)))
    }

    pub fn from_corpus(corpus: &TaggedCorpus) -> Result<Self> {
        Self::build(corpus.token_lists())
    }

    /// One token per line; line number is the rank. Later duplicates are ignored.
    pub fn from_rank_file(text: &str, source_name: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim();
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::parse(source_name, i + 1, "expected exactly one token"));
            }
            if seen.insert(tok.to_string()) {
                tokens.push(tok.to_string());
            }
        }
        if tokens.is_empty() {
            return Err(Error::parse(source_name, 0, "rank file is empty"));
        }
        Ok(Self::from_parts(tokens, None))
    }

    pub(crate) fn from_parts(tokens: Vec<String>, counts: Option<Vec<u64>>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn rank(&self, token: &str) -> Rank {
        match self.index.get(token) {
            Some(&i) => Rank::Known(i as u64 + 1),
            None => Rank::Oov,
        }
    }

    pub fn ranks(&self, tokens: &[String]) -> Vec<Rank> {
        tokens.iter().map(|t| self.rank(t)).collect()
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        let i = *self.index.get(token)?;
        self.counts.as_ref().map(|c| c[i])
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }
}
