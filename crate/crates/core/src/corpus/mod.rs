//! Corpus ingestion, label schemes, vocabulary ranks and synthetic data.

mod conll;
mod pairs;
mod scheme;
mod synth;
mod vocab;

pub use conll::{parse_conll, write_conll, write_conll_with_predictions};
pub use pairs::{parse_pairs, write_pairs, NliLabel, PairCorpus, PairItem};
pub use scheme::{spans_from_labels, to_biose, Span};
pub use synth::{synth_corpus, SynthLexicon, SynthScheme, SynthSpec, WordType};
pub use vocab::{Rank, Vocabulary};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Option<Vec<String>>) -> Result<Self> {
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!("invalid token {bad:?}")));
        }
        if let Some(l) = &labels {
            if l.len() != tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} tokens",
                    l.len(),
                    tokens.len()
                )));
            }
        }
        Ok(Sentence { tokens, labels })
    }

    pub fn unlabeled(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens, None)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaggedCorpus {
    pub sentences: Vec<Sentence>,
    pub tagset: BTreeSet<String>,
}

impl TaggedCorpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let tagset = sentences
            .iter()
            .filter_map(|s| s.labels.as_ref())
            .flatten()
            .cloned()
            .collect();
        TaggedCorpus { sentences, tagset }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Rewrites every label sequence into BIOSE; returns the repair count.
    pub fn to_biose(&mut self) -> usize {
        let mut repairs = 0;
        for s in &mut self.sentences {
            if let Some(l) = &s.labels {
                let (converted, r) = to_biose(l);
                repairs += r;
                s.labels = Some(converted);
            }
        }
        *self = TaggedCorpus::new(std::mem::take(&mut self.sentences));
        repairs
    }

    pub fn token_lists(&self) -> impl Iterator<Item = &[String]> {
        self.sentences.iter().map(|s| s.tokens.as_slice())
    }
}
