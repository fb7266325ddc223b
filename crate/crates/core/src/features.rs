//! Word-characteristics features for the attention function.
//!
//! Four families are concatenated into a 77-dimensional vector: a dense
//! projection of the length one-hot (20), of the frequency-bin one-hot (20),
//! of 12 shape flags (12) and a 25-dimensional word-shape embedding.

use std::collections::HashMap;

use rand::Rng;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::Rank;
use crate::error::{Error, Result};
use crate::nn::Linear;

pub const LENGTH_DIM: usize = 20;
pub const FREQ_BINS: usize = 20;
pub const FLAG_DIM: usize = 12;
pub const SHAPE_EMB_DIM: usize = 25;
/// `F`, the feature-vector width.
pub const FEATURE_DIM: usize = LENGTH_DIM + FREQ_BINS + FLAG_DIM + SHAPE_EMB_DIM;

const _: () = assert!(FEATURE_DIM == 77);

/// Constant of the Zipfian frequency estimate `k / r`.
pub const ZIPF_K: f64 = 0.1;

fn one_hot(dim: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

/// Index into the length one-hot; words of 20 or more characters share the
/// last slot.
pub fn length_index(token: &str) -> usize {
    token.chars().count().clamp(1, LENGTH_DIM) - 1
}

pub fn length_onehot(token: &str) -> Vec<f64> {
    one_hot(LENGTH_DIM, length_index(token))
}

/// Estimated relative frequency `k / r` of the word with rank `r`.
pub fn frequency(rank: u64) -> Result<f64> {
    if rank < 1 {
        return Err(Error::InvalidArgument(format!("rank must be >= 1, got {rank}")));
    }
    Ok(ZIPF_K / rank as f64)
}

/// `min(19, floor(log2 r))`; out-of-vocabulary words go to the rarest bin.
pub fn frequency_bin(rank: Rank) -> usize {
    match rank {
        Rank::Known(r) => (r.max(1).ilog2() as usize).min(FREQ_BINS - 1),
        Rank::Oov => FREQ_BINS - 1,
    }
}

pub fn frequency_onehot(rank: Rank) -> Vec<f64> {
    one_hot(FREQ_BINS, frequency_bin(rank))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CharClass {
    Uppercase,
    Digit,
    Punctuation,
    Alphanumeric,
}

pub const CHAR_CLASSES: [CharClass; 4] = [
    CharClass::Uppercase,
    CharClass::Digit,
    CharClass::Punctuation,
    CharClass::Alphanumeric,
];

fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn is_digit(c: char) -> bool {
    get_general_category(c) == GeneralCategory::DecimalNumber
}

fn is_letter(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        UppercaseLetter | LowercaseLetter | TitlecaseLetter | ModifierLetter | OtherLetter
    )
}

impl CharClass {
    pub fn contains(&self, c: char) -> bool {
        match self {
            CharClass::Uppercase => matches!(
                get_general_category(c),
                GeneralCategory::UppercaseLetter | GeneralCategory::TitlecaseLetter
            ),
            CharClass::Digit => is_digit(c),
            CharClass::Punctuation => is_punctuation(c),
            CharClass::Alphanumeric => is_letter(c) || is_digit(c),
        }
    }
}

/// Twelve binary shape flags: for each of uppercase, digit, punctuation and
/// alphanumeric, whether the first, any, and all characters belong to it.
pub fn shape_flags(token: &str) -> [f64; FLAG_DIM] {
    let mut out = [0.0; FLAG_DIM];
    let first = token.chars().next();
    for (k, class) in CHAR_CLASSES.iter().enumerate() {
        let bit = |b: bool| if b { 1.0 } else { 0.0 };
        out[3 * k] = bit(first.is_some_and(|c| class.contains(c)));
        out[3 * k + 1] = bit(token.chars().any(|c| class.contains(c)));
        out[3 * k + 2] = bit(first.is_some() && token.chars().all(|c| class.contains(c)));
    }
    out
}

/// Maps each character to `C` (uppercase), `c` (other letters), `n` (digit)
/// or `p` (anything else).
pub fn shape_string(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if CharClass::Uppercase.contains(c) {
                'C'
            } else if is_letter(c) {
                'c'
            } else if is_digit(c) {
                'n'
            } else {
                'p'
            }
        })
        .collect()
}

/// Shape-string vocabulary; id 0 is the unknown shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeVocab {
    shapes: Vec<String>,
    index: HashMap<String, usize>,
}

impl ShapeVocab {
    pub const UNK: usize = 0;

    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = ShapeVocab {
            shapes: vec!["<unk>".to_string()],
            index: HashMap::new(),
        };
        let mut seen: Vec<String> = tokens.into_iter().map(shape_string).collect();
        seen.sort();
        seen.dedup();
        for s in seen {
            v.index.insert(s.clone(), v.shapes.len());
            v.shapes.push(s);
        }
        v
    }

    pub fn from_shapes(shapes: Vec<String>) -> Self {
        let index = shapes
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, s)| (s.clone(), i))
            .collect();
        ShapeVocab { shapes, index }
    }

    pub fn shapes(&self) -> &[String] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(&shape_string(token))
            .copied()
            .unwrap_or(Self::UNK)
    }
}

/// Trainable part of the feature vector: three dense layers preserving the
/// sparse widths and the shape-embedding table.
#[derive(Clone, Debug)]
pub struct FeatureParams {
    length: Linear,
    frequency: Linear,
    flags: Linear,
    shape_table: ParamId,
    shape_bias: ParamId,
    pub shapes: ShapeVocab,
}

impl FeatureParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, shapes: ShapeVocab, rng: &mut R) -> Self {
        let length = Linear::new(store, "features.length", ParamGroup::Classifier, LENGTH_DIM, LENGTH_DIM, rng);
        let frequency = Linear::new(store, "features.frequency", ParamGroup::Classifier, FREQ_BINS, FREQ_BINS, rng);
        let flags = Linear::new(store, "features.flags", ParamGroup::Classifier, FLAG_DIM, FLAG_DIM, rng);
        let fan_in = shapes.len();
        let shape_table = store.add_uniform(
            "features.shape.weight",
            ParamGroup::Classifier,
            &[shapes.len(), SHAPE_EMB_DIM],
            fan_in,
            rng,
        );
        let shape_bias = store.add_uniform(
            "features.shape.bias",
            ParamGroup::Classifier,
            &[SHAPE_EMB_DIM],
            fan_in,
            rng,
        );
        FeatureParams {
            length,
            frequency,
            flags,
            shape_table,
            shape_bias,
            shapes,
        }
    }

    /// `[T, 77]` feature matrix for a sentence.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[String],
        ranks: &[Rank],
    ) -> Result<Var> {
        if tokens.len() != ranks.len() || tokens.is_empty() {
            return Err(Error::shape("feature_vector", &[&[tokens.len()], &[ranks.len()]]));
        }
        let t = tokens.len();
        let mut len_rows = Vec::with_capacity(t * LENGTH_DIM);
        let mut freq_rows = Vec::with_capacity(t * FREQ_BINS);
        let mut flag_rows = Vec::with_capacity(t * FLAG_DIM);
        let mut shape_ids = Vec::with_capacity(t);
        for (tok, &rank) in tokens.iter().zip(ranks) {
            len_rows.extend(length_onehot(tok));
            freq_rows.extend(frequency_onehot(rank));
            flag_rows.extend(shape_flags(tok));
            shape_ids.push(self.shapes.id(tok));
        }
        let len_in = tape.constant(Tensor::matrix(t, LENGTH_DIM, len_rows)?);
        let freq_in = tape.constant(Tensor::matrix(t, FREQ_BINS, freq_rows)?);
        let flag_in = tape.constant(Tensor::matrix(t, FLAG_DIM, flag_rows)?);
        let len_d = self.length.forward(tape, store, len_in)?;
        let freq_d = self.frequency.forward(tape, store, freq_in)?;
        let flag_d = self.flags.forward(tape, store, flag_in)?;
        // A linear layer on a one-hot shape is a row lookup plus bias.
        let table = tape.param(store, self.shape_table);
        let bias = tape.param(store, self.shape_bias);
        let rows = tape.gather(table, &shape_ids)?;
        let shape_d = tape.add_row(rows, bias)?;
        tape.concat(&[len_d, freq_d, flag_d, shape_d], 1)
    }

    /// Feature vector of a single token.
    pub fn feature_vector(&self, store: &ParamStore, token: &str, rank: Rank) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, &[token.to_string()], &[rank])?;
        Ok(tape.value(v).data().to_vec())
    }
}
