//! Embedding sources: file-loaded static tables, pre-computed contextual
//! vectors, and the trainable character-BiLSTM and word-shape embedders.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::TaggedCorpus;
use crate::error::{read_to_string, Error, Result};
use crate::features::{ShapeVocab, SHAPE_EMB_DIM};
use crate::nn::BiLstm;

pub const CHAR_EMB_DIM: usize = 16;
pub const CHAR_HIDDEN: usize = 25;
pub const CHAR_OUTPUT_DIM: usize = 2 * CHAR_HIDDEN;
/// Initialisation range of the character table.
pub const CHAR_INIT_RANGE: f64 = 0.1;

/// Fixed word vectors; out-of-vocabulary words map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticTable {
    index: HashMap<String, usize>,
    matrix: Tensor,
    /// Rows dropped because the word was already present.
    pub duplicates: usize,
}

impl StaticTable {
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut data = Vec::new();
        let mut dim = None;
        let mut duplicates = 0;
        for (word, vec) in rows {
            if *dim.get_or_insert(vec.len()) != vec.len() || vec.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "row {word:?} has dimension {}",
                    vec.len()
                )));
            }
            if index.contains_key(&word) {
                duplicates += 1;
                continue;
            }
            index.insert(word, index.len());
            data.extend(vec);
        }
        let dim = dim.ok_or_else(|| Error::InvalidArgument("empty embedding table".into()))?;
        Ok(StaticTable {
            matrix: Tensor::new(vec![index.len(), dim], data)?,
            index,
            duplicates,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.matrix.row(i))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        self.get(token)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.dim()])
    }

    /// `[T, d]` rows for a sentence.
    pub fn lookup(&self, tokens: &[String]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(tokens.len() * d);
        for t in tokens {
            match self.get(t) {
                Some(row) => data.extend_from_slice(row),
                None => data.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        Tensor::from_parts(vec![tokens.len(), d], data)
    }
}

fn parse_floats(fields: &[&str], source_name: &str, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source_name, line, format!("invalid number {f:?}")))
        })
        .collect()
}

/// Text format: optional `count dim` header, then `word v1 … vd` per line.
pub fn parse_table(text: &str, source_name: &str, expected_dim: Option<usize>) -> Result<StaticTable> {
    let mut dim = expected_dim;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let header_dim: usize = fields[1].parse().unwrap();
            if let Some(d) = dim {
                if d != header_dim {
                    return Err(Error::parse(
                        source_name,
                        line_no,
                        format!("header dimension {header_dim} but expected {d}"),
                    ));
                }
            }
            dim = Some(header_dim);
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::parse(source_name, line_no, "row has no vector"));
        }
        let values = parse_floats(&fields[1..], source_name, line_no)?;
        match dim {
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            _ => dim = Some(values.len()),
        }
        rows.push((fields[0].to_string(), values));
    }
    if rows.is_empty() {
        return Err(Error::parse(source_name, 0, "no embedding rows"));
    }
    StaticTable::from_rows(rows)
}

pub fn load_table(path: &Path, expected_dim: Option<usize>) -> Result<StaticTable> {
    parse_table(&read_to_string(path)?, &path.display().to_string(), expected_dim)
}

/// Pre-computed per-position vectors (e.g. dumped contextual models), keyed
/// by the sentence's token sequence. Unknown sentences embed to zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextualTable {
    dim: usize,
    sentences: HashMap<Vec<String>, Tensor>,
}

impl ContextualTable {
    pub fn new(dim: usize) -> Self {
        ContextualTable {
            dim,
            sentences: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Adds vectors aligned with `corpus`: one `v1 … vd` line per token, a
    /// blank line after each sentence.
    pub fn add_dump(&mut self, text: &str, source_name: &str, corpus: &TaggedCorpus) -> Result<()> {
        let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
        let mut line_of_block = vec![1];
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                if !blocks.last().unwrap().is_empty() {
                    blocks.push(Vec::new());
                    line_of_block.push(i + 2);
                }
                continue;
            }
            let v = parse_floats(&fields, source_name, i + 1)?;
            if v.len() != self.dim {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("expected {} values, found {}", self.dim, v.len()),
                ));
            }
            blocks.last_mut().unwrap().push(v);
        }
        if blocks.last().is_some_and(Vec::is_empty) {
            blocks.pop();
        }
        if blocks.len() != corpus.len() {
            return Err(Error::parse(
                source_name,
                0,
                format!("{} vector blocks for {} sentences", blocks.len(), corpus.len()),
            ));
        }
        for ((block, sent), line) in blocks.into_iter().zip(&corpus.sentences).zip(line_of_block) {
            if block.len() != sent.len() {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("{} vectors for a {}-token sentence", block.len(), sent.len()),
                ));
            }
            self.sentences
                .insert(sent.tokens.clone(), Tensor::from_rows(&block)?);
        }
        Ok(())
    }

    pub fn lookup(&self, tokens: &[String]) -> Tensor {
        self.sentences
            .get(tokens)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&[tokens.len(), self.dim]))
    }
}

/// Character vocabulary; id 0 is the unknown character.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub const UNK: usize = 0;

    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<char> = tokens
            .into_iter()
            .flat_map(str::chars)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort_unstable();
        Self::from_chars(set)
    }

    /// Builds from the known characters (excluding the unknown slot).
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        CharVocab { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Rows in the embedding table, including the unknown slot.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }
}

/// Character embeddings read by a BiLSTM; the token vector is the final
/// forward state concatenated with the final backward state.
#[derive(Clone, Debug)]
pub struct CharEmbedder {
    pub vocab: CharVocab,
    table: ParamId,
    lstm: BiLstm,
}

impl CharEmbedder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, vocab: CharVocab, rng: &mut R) -> Self {
        let table = store.add(
            format!("{name}.chars"),
            ParamGroup::Generator,
            Tensor::uniform(&[vocab.size(), CHAR_EMB_DIM], CHAR_INIT_RANGE, rng),
        );
        let lstm = BiLstm::new(store, &format!("{name}.lstm"), ParamGroup::Generator, CHAR_EMB_DIM, CHAR_HIDDEN, rng);
        CharEmbedder { vocab, table, lstm }
    }

    pub fn embed_token(&self, tape: &mut Tape, store: &ParamStore, token: &str) -> Result<Var> {
        let ids: Vec<usize> = token.chars().map(|c| self.vocab.id(c)).collect();
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token".into()));
        }
        let table = tape.param(store, self.table);
        let chars = tape.gather(table, &ids)?;
        let out = self.lstm.forward(tape, store, chars)?;
        tape.concat(&[out.last_forward, out.last_backward], 0)
    }

    pub fn embed_sentence(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Var> {
        let rows = tokens
            .iter()
            .map(|t| self.embed_token(tape, store, t))
            .collect::<Result<Vec<_>>>()?;
        tape.stack(&rows)
    }
}

/// One-hot word shape through a trainable linear layer to 25 dimensions.
#[derive(Clone, Debug)]
pub struct ShapeSourceEmbedder {
    pub vocab: ShapeVocab,
    table: ParamId,
    bias: ParamId,
}

impl ShapeSourceEmbedder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, vocab: ShapeVocab, rng: &mut R) -> Self {
        let n = vocab.len();
        let table = store.add_uniform(format!("{name}.weight"), ParamGroup::Generator, &[n, SHAPE_EMB_DIM], n, rng);
        let bias = store.add_uniform(format!("{name}.bias"), ParamGroup::Generator, &[SHAPE_EMB_DIM], n, rng);
        ShapeSourceEmbedder { vocab, table, bias }
    }

    pub fn embed_sentence(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Var> {
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.id(t)).collect();
        let table = tape.param(store, self.table);
        let bias = tape.param(store, self.bias);
        let rows = tape.gather(table, &ids)?;
        tape.add_row(rows, bias)
    }
}

#[derive(Clone, Debug)]
pub enum SourceKind {
    Static(Arc<StaticTable>),
    Contextual(Arc<ContextualTable>),
    Char(CharEmbedder),
    Shape(ShapeSourceEmbedder),
}

#[derive(Clone, Debug)]
pub struct EmbeddingSource {
    pub name: String,
    pub kind: SourceKind,
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match &self.kind {
            SourceKind::Static(t) => t.dim(),
            SourceKind::Contextual(t) => t.dim(),
            SourceKind::Char(_) => CHAR_OUTPUT_DIM,
            SourceKind::Shape(_) => SHAPE_EMB_DIM,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.kind, SourceKind::Char(_) | SourceKind::Shape(_))
    }

    /// `[T, d_i]` vectors for a sentence.
    pub fn embed_sentence(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty sentence".into()));
        }
        match &self.kind {
            SourceKind::Static(t) => Ok(tape.constant(t.lookup(tokens))),
            SourceKind::Contextual(t) => Ok(tape.constant(t.lookup(tokens))),
            SourceKind::Char(c) => c.embed_sentence(tape, store, tokens),
            SourceKind::Shape(s) => s.embed_sentence(tape, store, tokens),
        }
    }

    /// Vector of one token (out of context for contextual sources).
    pub fn embed(&self, store: &ParamStore, token: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.embed_sentence(&mut tape, store, &[token.to_string()])?;
        Ok(tape.value(v).data().to_vec())
    }
}

/// Ordered, uniquely named sources; index `i` is stable for a run.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    sources: Vec<EmbeddingSource>,
}

impl EmbeddingSet {
    pub fn new(sources: Vec<EmbeddingSource>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("at least one embedding source is required".into()));
        }
        let mut names = HashSet::new();
        for s in &sources {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate embedding source name {:?}", s.name)));
            }
        }
        Ok(EmbeddingSet { sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.sources.iter().map(EmbeddingSource::dim).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn sources(&self) -> &[EmbeddingSource] {
        &self.sources
    }

    pub fn get(&self, i: usize) -> &EmbeddingSource {
        &self.sources[i]
    }

    /// One `[T, d_i]` node per source.
    pub fn embed_sentence(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Vec<Var>> {
        self.sources
            .iter()
            .map(|s| s.embed_sentence(tape, store, tokens))
            .collect()
    }
}
