//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! A lexicon of word types is drawn from the seed: a small set of frequent
//! general-domain words and a large set of rare words, a fraction of which
//! are in-domain (capitalised, digit-bearing surfaces). Sentences sample
//! frequent words with probability `frequent_prob`, so rare words mostly
//! occur once or never in a split.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{to_biose, Sentence, TaggedCorpus};
use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthScheme {
    /// Every word type carries one tag from `tags` (POS-like).
    Pos,
    /// In-domain words form entities typed by `tags`; everything else is `O`.
    Bio,
    /// As `Bio`, converted to BIOSE.
    Biose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub tags: Vec<String>,
    pub scheme: SynthScheme,
    pub frequent_words: usize,
    pub rare_words: usize,
    pub frequent_prob: f64,
    pub in_domain_fraction: f64,
    pub entity_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tags: vec!["PER".into(), "LOC".into()],
            scheme: SynthScheme::Bio,
            frequent_words: 40,
            rare_words: 2000,
            frequent_prob: 0.6,
            in_domain_fraction: 0.5,
            entity_prob: 0.3,
            min_len: 4,
            max_len: 10,
        }
    }
}

const MAX_FREQUENT: usize = 25 * 25;
const MAX_RARE: usize = 25 * 25 * 25 * 25;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic corpus spec: {m}")));
        if self.tags.is_empty() {
            return bad("at least one tag is required".into());
        }
        let mut sorted = self.tags.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.tags.len() || self.tags.iter().any(|t| t.is_empty() || t == "O") {
            return bad("tags must be unique, non-empty and not \"O\"".into());
        }
        if self.frequent_words + self.rare_words == 0 {
            return bad("the lexicon is empty".into());
        }
        if self.frequent_words > MAX_FREQUENT || self.rare_words > MAX_RARE {
            return bad(format!(
                "at most {MAX_FREQUENT} frequent and {MAX_RARE} rare words"
            ));
        }
        for (name, p) in [
            ("frequent_prob", self.frequent_prob),
            ("in_domain_fraction", self.in_domain_fraction),
            ("entity_prob", self.entity_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if (self.frequent_words == 0 && self.frequent_prob > 0.0)
            || (self.rare_words == 0 && self.frequent_prob < 1.0 && self.scheme == SynthScheme::Pos)
        {
            return bad("sampling probability points at an empty word set".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            ));
        }
        if self.scheme != SynthScheme::Pos {
            let in_domain = (self.rare_words as f64 * self.in_domain_fraction).round() as usize;
            if self.entity_prob > 0.0 && in_domain < self.tags.len() {
                return bad("each entity type needs at least one in-domain word".into());
            }
            if self.entity_prob < 1.0 && self.frequent_words + self.rare_words - in_domain == 0 {
                return bad("no general-domain words for O tokens".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordType {
    pub surface: String,
    /// Index into the spec's tags; `None` for words tagged `O`.
    pub tag: Option<usize>,
    pub frequent: bool,
    pub in_domain: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthLexicon {
    pub spec: SynthSpec,
    pub words: Vec<WordType>,
}

const ONSETS: [char; 5] = ['b', 'd', 'k', 'm', 't'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Fixed-width syllable spelling of `idx`, unique per `(idx, width)`.
fn syllables(mut idx: usize, width: usize) -> String {
    let mut out = String::with_capacity(width * 2);
    for _ in 0..width {
        let s = idx % 25;
        idx /= 25;
        out.push(ONSETS[s / 5]);
        out.push(VOWELS[s % 5]);
    }
    out
}

impl SynthLexicon {
    pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(seed);
        let n_tags = spec.tags.len();
        let n_in_domain = (spec.rare_words as f64 * spec.in_domain_fraction).round() as usize;
        let mut words = Vec::with_capacity(spec.frequent_words + spec.rare_words);
        for i in 0..spec.frequent_words {
            let tag = match spec.scheme {
                SynthScheme::Pos => Some(rng.random_range(0..n_tags)),
                _ => None,
            };
            words.push(WordType {
                surface: syllables(i, 2),
                tag,
                frequent: true,
                in_domain: false,
            });
        }
        for i in 0..spec.rare_words {
            let in_domain = i < n_in_domain;
            let tag = match spec.scheme {
                SynthScheme::Pos => Some(rng.random_range(0..n_tags)),
                // Round-robin so every entity type has in-domain words.
                _ if in_domain => Some(i % n_tags),
                _ => None,
            };
            let surface = if in_domain {
                let mut s = syllables(i, 3);
                s[..1].make_ascii_uppercase();
                format!("{s}{}", i % 10)
            } else {
                syllables(i, 4)
            };
            words.push(WordType {
                surface,
                tag,
                frequent: false,
                in_domain,
            });
        }
        Ok(SynthLexicon {
            spec: spec.clone(),
            words,
        })
    }

    pub fn tag_name(&self, w: &WordType) -> String {
        match w.tag {
            Some(t) => self.spec.tags[t].clone(),
            None => "O".to_string(),
        }
    }

    pub fn lookup(&self, surface: &str) -> Option<&WordType> {
        self.words.iter().find(|w| w.surface == surface)
    }

    fn frequent(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.words.len()).filter(|&i| self.words[i].frequent)
    }

    /// Samples `n_sentences` sentences with `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, n_sentences: usize, rng: &mut R) -> TaggedCorpus {
        let spec = &self.spec;
        let frequent: Vec<usize> = self.frequent().collect();
        let rare_general: Vec<usize> = (0..self.words.len())
            .filter(|&i| !self.words[i].frequent && !self.words[i].in_domain)
            .collect();
        let rare_all: Vec<usize> = (0..self.words.len())
            .filter(|&i| !self.words[i].frequent)
            .collect();
        let by_type: Vec<Vec<usize>> = (0..spec.tags.len())
            .map(|t| {
                (0..self.words.len())
                    .filter(|&i| self.words[i].in_domain && self.words[i].tag == Some(t))
                    .collect()
            })
            .collect();

        let pick = |pool: &[usize], rng: &mut R| -> usize { *pool.choose(rng).expect("non-empty pool") };

        let mut sentences = Vec::with_capacity(n_sentences);
        for _ in 0..n_sentences {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut tokens = Vec::with_capacity(len);
            let mut labels = Vec::with_capacity(len);
            match spec.scheme {
                SynthScheme::Pos => {
                    for _ in 0..len {
                        let use_freq = !frequent.is_empty() && rng.random::<f64>() < spec.frequent_prob;
                        let w = if use_freq || rare_all.is_empty() {
                            &self.words[pick(&frequent, rng)]
                        } else {
                            &self.words[pick(&rare_all, rng)]
                        };
                        tokens.push(w.surface.clone());
                        labels.push(self.tag_name(w));
                    }
                }
                SynthScheme::Bio | SynthScheme::Biose => {
                    while tokens.len() < len {
                        if rng.random::<f64>() < spec.entity_prob {
                            let t = rng.random_range(0..spec.tags.len());
                            let span = rng.random_range(1..=3usize).min(len - tokens.len());
                            for k in 0..span {
                                let w = &self.words[pick(&by_type[t], rng)];
                                tokens.push(w.surface.clone());
                                let prefix = if k == 0 { "B" } else { "I" };
                                labels.push(format!("{prefix}-{}", spec.tags[t]));
                            }
                        } else {
                            let use_freq = !frequent.is_empty()
                                && (rare_general.is_empty() || rng.random::<f64>() < spec.frequent_prob);
                            let w = if use_freq {
                                &self.words[pick(&frequent, rng)]
                            } else {
                                &self.words[pick(&rare_general, rng)]
                            };
                            tokens.push(w.surface.clone());
                            labels.push("O".to_string());
                        }
                    }
                    if spec.scheme == SynthScheme::Biose {
                        labels = to_biose(&labels).0;
                    }
                }
            }
            sentences.push(Sentence { tokens, labels: Some(labels) });
        }
        TaggedCorpus::new(sentences)
    }
}

/// Generates a corpus of `n_sentences` from `spec`, fully determined by `seed`.
pub fn synth_corpus(seed: u64, n_sentences: usize, spec: &SynthSpec) -> Result<TaggedCorpus> {
    let lexicon = SynthLexicon::generate(spec, seed)?;
    let mut rng = seeded_rng(seed.wrapping_add(1));
    Ok(lexicon.sample(n_sentences, &mut rng))
}
