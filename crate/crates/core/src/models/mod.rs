//! Downstream classifiers: a BiLSTM-CRF tagger and a BiLSTM max-pool
//! sentence-pair classifier, both fed by the meta-embedding layer.

mod checkpoint;
pub mod crf;

use rand::Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TensorEntry};
pub use crf::{crf_loss, viterbi, CrfLayer};

use crate::autodiff::{ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::corpus::{NliLabel, Rank, Vocabulary};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::meta::{MetaEmbedder, MetaOutput};
use crate::nn::{BiLstm, Linear};

/// BiLSTM whose position-`t` output is `[forward_t ; backward_t]`.
#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    pub lstm: BiLstm,
}

impl BiLstmEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim_in: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstmEncoder {
            lstm: BiLstm::new(store, name, ParamGroup::Classifier, dim_in, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.output_dim()
    }

    /// `x: [T, in]` to `[T, 2h]`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).rank() != 2 || tape.value(x).rows() == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        Ok(self.lstm.forward(tape, store, x)?.states)
    }
}

/// Embedding sources, frequency ranks and the combiner: tokens in,
/// meta-embeddings out.
#[derive(Clone, Debug)]
pub struct Frontend {
    pub sources: EmbeddingSet,
    pub meta: MetaEmbedder,
    pub vocab: Vocabulary,
}

impl Frontend {
    pub fn ranks(&self, tokens: &[String]) -> Vec<Rank> {
        self.vocab.ranks(tokens)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<MetaOutput> {
        let embedded = self.sources.embed_sentence(tape, store, tokens)?;
        let ranks = self.ranks(tokens);
        self.meta.forward(tape, store, &embedded, tokens, &ranks)
    }

    /// Projected source vectors `x_i: [T, E]` (the discriminator's view).
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Vec<Var>> {
        let embedded = self.sources.embed_sentence(tape, store, tokens)?;
        self.meta.project_all(tape, store, &embedded)
    }

    /// Attention weights `[T, n]` for a sentence, if the combiner has them.
    pub fn attention(&self, store: &ParamStore, tokens: &[String]) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, tokens)?;
        Ok(out.alphas.map(|a| tape.value(a).clone()))
    }
}

fn maybe_dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) => tape.dropout(x, p, rng),
        None => Ok(x),
    }
}

/// Meta-embeddings, dropout, BiLSTM, CRF.
#[derive(Clone, Debug)]
pub struct Tagger {
    pub frontend: Frontend,
    pub encoder: BiLstmEncoder,
    pub crf: CrfLayer,
    pub tags: Vec<String>,
    pub dropout: f64,
}

impl Tagger {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        frontend: Frontend,
        tags: Vec<String>,
        hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let encoder = BiLstmEncoder::new(store, "tagger.encoder", frontend.meta.output_dim(), hidden, rng);
        let crf = CrfLayer::new(store, encoder.output_dim(), tags.len(), rng)?;
        Ok(Tagger {
            frontend,
            encoder,
            crf,
            tags,
            dropout,
        })
    }

    pub fn tag_index(&self, label: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == label)
    }

    fn states<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[String],
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let meta = self.frontend.forward(tape, store, tokens)?;
        let x = maybe_dropout(tape, meta.combined, self.dropout, rng)?;
        self.encoder.encode(tape, store, x)
    }

    /// CRF negative log-likelihood of the gold tag indices, with dropout.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[String],
        gold: &[usize],
        rng: &mut R,
    ) -> Result<Var> {
        let states = self.states(tape, store, tokens, Some(rng))?;
        self.crf.loss(tape, store, states, gold)
    }

    /// Same loss without dropout.
    pub fn eval_loss(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String], gold: &[usize]) -> Result<Var> {
        let states = self.states::<crate::RunRng>(tape, store, tokens, None)?;
        self.crf.loss(tape, store, states, gold)
    }

    pub fn predict_indices(&self, store: &ParamStore, tokens: &[String]) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let states = self.states::<crate::RunRng>(&mut tape, store, tokens, None)?;
        self.crf.decode(&mut tape, store, states)
    }

    pub fn predict(&self, store: &ParamStore, tokens: &[String]) -> Result<Vec<String>> {
        Ok(self
            .predict_indices(store, tokens)?
            .into_iter()
            .map(|i| self.tags[i].clone())
            .collect())
    }
}

/// `[u, v, u*v, |u-v|]`, one tanh hidden layer, three-way output.
#[derive(Clone, Debug)]
pub struct NliHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl NliHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, pooled_dim: usize, hidden: usize, rng: &mut R) -> Self {
        NliHead {
            hidden: Linear::new(store, "nli.hidden", ParamGroup::Classifier, 4 * pooled_dim, hidden, rng),
            output: Linear::new(store, "nli.output", ParamGroup::Classifier, hidden, NliLabel::ALL.len(), rng),
        }
    }

    pub fn features(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
        let prod = tape.mul(u, v)?;
        let diff = tape.sub(u, v)?;
        let diff = tape.abs(diff);
        tape.concat(&[u, v, prod, diff], 0)
    }

    /// Log-probabilities `[3]` from pooled sentence vectors.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, u: Var, v: Var) -> Result<Var> {
        let z = Self::features(tape, u, v)?;
        let h = self.hidden.forward(tape, store, z)?;
        let h = tape.tanh(h);
        let logits = self.output.forward(tape, store, h)?;
        Ok(tape.log_softmax(logits))
    }
}

/// Premise and hypothesis are encoded separately by a shared BiLSTM and
/// max-pooled over time.
#[derive(Clone, Debug)]
pub struct NliModel {
    pub frontend: Frontend,
    pub encoder: BiLstmEncoder,
    pub head: NliHead,
    pub dropout: f64,
}

impl NliModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        frontend: Frontend,
        encoder_hidden: usize,
        mlp_hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let encoder = BiLstmEncoder::new(store, "nli.encoder", frontend.meta.output_dim(), encoder_hidden, rng);
        let head = NliHead::new(store, encoder.output_dim(), mlp_hidden, rng);
        Ok(NliModel {
            frontend,
            encoder,
            head,
            dropout,
        })
    }

    fn pooled<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[String],
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let meta = self.frontend.forward(tape, store, tokens)?;
        let x = maybe_dropout(tape, meta.combined, self.dropout, rng.as_deref_mut())?;
        let states = self.encoder.encode(tape, store, x)?;
        let states = maybe_dropout(tape, states, self.dropout, rng)?;
        tape.max_over_time(states)
    }

    /// Log-probabilities `[3]` for one pair.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        premise: &[String],
        hypothesis: &[String],
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let u = self.pooled(tape, store, premise, rng.as_deref_mut())?;
        let v = self.pooled(tape, store, hypothesis, rng)?;
        self.head.forward(tape, store, u, v)
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        premise: &[String],
        hypothesis: &[String],
        label: NliLabel,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let logp = self.forward(tape, store, premise, hypothesis, rng)?;
        let logp = tape.reshape(logp, &[1, 3])?;
        tape.nll(logp, &[label.index()])
    }

    /// Class distribution for one pair, without dropout.
    pub fn probabilities(&self, store: &ParamStore, premise: &[String], hypothesis: &[String]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logp = self.forward::<crate::RunRng>(&mut tape, store, premise, hypothesis, None)?;
        Ok(tape.value(logp).data().iter().map(|v| v.exp()).collect())
    }

    /// Most probable label; ties go to the lower class index.
    pub fn predict(&self, store: &ParamStore, premise: &[String], hypothesis: &[String]) -> Result<NliLabel> {
        let p = self.probabilities(store, premise, hypothesis)?;
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        Ok(NliLabel::from_index(best).expect("three classes"))
    }
}

#[cfg(test)]
mod tests;
