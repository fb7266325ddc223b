//! Meta-embedding combiners.
//!
//! Every source `e_i` is projected into a shared `E`-dimensional space,
//! `x_i = tanh(Q_i e_i + b_i)`, and the projected vectors are combined. The
//! attention combiners weight each source by
//! `α_i = softmax_i(V · tanh(W x_i [+ U f]))`, where `f` is the word-feature
//! vector of [`crate::features`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::Rank;
use crate::error::{Error, Result};
use crate::features::{FeatureParams, ShapeVocab, FEATURE_DIM};

/// Hidden size of the attention scorer.
pub const DEFAULT_ATTENTION_HIDDEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Concat,
    Sum,
    NormSum,
    Att,
    AttFeat,
}

impl CombinerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CombinerKind::Concat => "concat",
            CombinerKind::Sum => "sum",
            CombinerKind::NormSum => "norm_sum",
            CombinerKind::Att => "att",
            CombinerKind::AttFeat => "att_feat",
        }
    }

    pub fn uses_attention(&self) -> bool {
        matches!(self, CombinerKind::Att | CombinerKind::AttFeat)
    }

    pub fn projects(&self) -> bool {
        !matches!(self, CombinerKind::Concat)
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown combiner {s:?}")))
    }
}

/// `Q_i: [E, d_i]` and `b_i: [E]` per source.
#[derive(Clone, Debug)]
pub struct ProjectionSet {
    pub common_dim: usize,
    pub source_dims: Vec<usize>,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl ProjectionSet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: &[usize], common_dim: usize, rng: &mut R) -> Result<Self> {
        if common_dim == 0 {
            return Err(Error::Config("common dimension must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            weights.push(store.add_uniform(format!("meta.proj{i}.weight"), ParamGroup::Generator, &[common_dim, d], d, rng));
            biases.push(store.add_uniform(format!("meta.proj{i}.bias"), ParamGroup::Generator, &[common_dim], d, rng));
        }
        Ok(ProjectionSet {
            common_dim,
            source_dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `x_i = tanh(e_i Q_iᵀ + b_i)` for `e_i: [T, d_i]` (or a `[d_i]` vector).
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, e: Var, i: usize) -> Result<Var> {
        let d = *self
            .source_dims
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no projection for source {i}")))?;
        if tape.value(e).cols() != d {
            return Err(Error::shape("project", &[tape.value(e).shape(), &[d]]));
        }
        let q = tape.param(store, self.weights[i]);
        let qt = tape.transpose(q)?;
        let b = tape.param(store, self.biases[i]);
        let lin = tape.matmul(e, qt)?;
        let lin = tape.add_row(lin, b)?;
        Ok(tape.tanh(lin))
    }
}

/// `W: [H, E]`, `V: [H]`, and `U: [H, F]` in feature mode.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub hidden: usize,
    pub w: ParamId,
    pub v: ParamId,
    pub u: Option<ParamId>,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        common_dim: usize,
        hidden: usize,
        with_features: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("attention hidden size must be positive".into()));
        }
        let w = store.add_uniform("meta.att.w", ParamGroup::Classifier, &[hidden, common_dim], common_dim, rng);
        let v = store.add_uniform("meta.att.v", ParamGroup::Classifier, &[hidden], hidden, rng);
        let u = with_features
            .then(|| store.add_uniform("meta.att.u", ParamGroup::Classifier, &[hidden, FEATURE_DIM], FEATURE_DIM, rng));
        Ok(AttentionParams { hidden, w, v, u })
    }

    /// Unnormalised scores `[T, n]` from projected sources `xs[i]: [T, E]`
    /// and, in feature mode, `f: [T, F]`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var], f: Option<Var>) -> Result<Var> {
        let w = tape.param(store, self.w);
        let wt = tape.transpose(w)?;
        let v = tape.param(store, self.v);
        let feat_term = match (self.u, f) {
            (Some(u), Some(f)) => {
                let u = tape.param(store, u);
                let ut = tape.transpose(u)?;
                Some(tape.matmul(f, ut)?)
            }
            (None, None) => None,
            (Some(_), None) => return Err(Error::InvalidArgument("feature attention needs a feature vector".into())),
            (None, Some(_)) => return Err(Error::InvalidArgument("plain attention takes no feature vector".into())),
        };
        let mut columns = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut pre = tape.matmul(x, wt)?;
            if let Some(ft) = feat_term {
                pre = tape.add(pre, ft)?;
            }
            let act = tape.tanh(pre);
            let score = tape.matmul(act, v)?;
            let rows = tape.value(score).numel();
            columns.push(tape.reshape(score, &[rows, 1])?);
        }
        tape.concat(&columns, 1)
    }

    /// Attention weights `α: [T, n]`, each row on the probability simplex.
    pub fn weights(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var], f: Option<Var>) -> Result<Var> {
        let logits = self.logits(tape, store, xs, f)?;
        Ok(tape.softmax(logits))
    }

    /// Weights for a single token given its projected vectors.
    pub fn weights_for(&self, store: &ParamStore, xs: &[Vec<f64>], f: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| Ok(tape.constant(Tensor::new(vec![1, x.len()], x.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let fv = match f {
            Some(f) => Some(tape.constant(Tensor::new(vec![1, f.len()], f.to_vec())?)),
            None => None,
        };
        let a = self.weights(&mut tape, store, &vars, fv)?;
        Ok(tape.value(a).data().to_vec())
    }
}

/// Divides every row by its L2 norm; zero rows pass through unchanged.
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Var {
    let t = tape.value(x).clone();
    let cols = t.cols();
    let norms: Vec<f64> = t.data().chunks(cols).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out = t.data().to_vec();
    for (row, &n) in out.chunks_mut(cols).zip(&norms) {
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let value = Tensor::from_parts(t.shape().to_vec(), out.clone());
    tape.custom(
        &[x],
        value,
        Box::new(move |g, _| {
            let mut d = g.data().to_vec();
            for ((drow, yrow), &n) in d.chunks_mut(cols).zip(out.chunks(cols)).zip(&norms) {
                if n > 0.0 {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dv, yv) in drow.iter_mut().zip(yrow) {
                        *dv = (*dv - yv * dot) / n;
                    }
                }
            }
            vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
        }),
    )
}

/// Result of combining a sentence's sources.
pub struct MetaOutput {
    /// `[T, output_dim]`.
    pub combined: Var,
    /// Projected `x_i: [T, E]`, one per source (empty for concatenation).
    pub projected: Vec<Var>,
    /// `α: [T, n]` for the attention combiners.
    pub alphas: Option<Var>,
}

/// The full meta-embedding layer for one combiner kind.
#[derive(Clone, Debug)]
pub struct MetaEmbedder {
    pub kind: CombinerKind,
    pub source_dims: Vec<usize>,
    pub projections: Option<ProjectionSet>,
    pub attention: Option<AttentionParams>,
    pub features: Option<FeatureParams>,
}

impl MetaEmbedder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: CombinerKind,
        source_dims: &[usize],
        common_dim: Option<usize>,
        attention_hidden: usize,
        shapes: ShapeVocab,
        rng: &mut R,
    ) -> Result<Self> {
        if source_dims.is_empty() {
            return Err(Error::Config("at least one embedding source is required".into()));
        }
        let e = common_dim.unwrap_or_else(|| *source_dims.iter().max().unwrap());
        let projections = kind
            .projects()
            .then(|| ProjectionSet::new(store, source_dims, e, rng))
            .transpose()?;
        let attention = kind
            .uses_attention()
            .then(|| AttentionParams::new(store, e, attention_hidden, kind == CombinerKind::AttFeat, rng))
            .transpose()?;
        let features = (kind == CombinerKind::AttFeat).then(|| FeatureParams::new(store, shapes, rng));
        Ok(MetaEmbedder {
            kind,
            source_dims: source_dims.to_vec(),
            projections,
            attention,
            features,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.source_dims.len()
    }

    pub fn common_dim(&self) -> Option<usize> {
        self.projections.as_ref().map(|p| p.common_dim)
    }

    pub fn output_dim(&self) -> usize {
        match &self.projections {
            Some(p) => p.common_dim,
            None => self.source_dims.iter().sum(),
        }
    }

    /// Projects every source (pre-dropout); these are the discriminator's inputs.
    pub fn project_all(&self, tape: &mut Tape, store: &ParamStore, embedded: &[Var]) -> Result<Vec<Var>> {
        let p = self
            .projections
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("concatenation has no common space".into()))?;
        embedded
            .iter()
            .enumerate()
            .map(|(i, &e)| p.project(tape, store, e, i))
            .collect()
    }

    /// Combines `embedded[i]: [T, d_i]` for a sentence with the given tokens
    /// and frequency ranks.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        embedded: &[Var],
        tokens: &[String],
        ranks: &[Rank],
    ) -> Result<MetaOutput> {
        if embedded.len() != self.num_sources() {
            return Err(Error::InvalidArgument(format!(
                "{} embedded sources for a {}-source combiner",
                embedded.len(),
                self.num_sources()
            )));
        }
        if self.kind == CombinerKind::Concat {
            let combined = tape.concat(embedded, 1)?;
            return Ok(MetaOutput {
                combined,
                projected: Vec::new(),
                alphas: None,
            });
        }
        let xs = self.project_all(tape, store, embedded)?;
        let (combined, alphas) = match self.kind {
            CombinerKind::Sum => (sum_all(tape, &xs)?, None),
            CombinerKind::NormSum => {
                let normed: Vec<Var> = xs.iter().map(|&x| normalize_rows(tape, x)).collect();
                (sum_all(tape, &normed)?, None)
            }
            CombinerKind::Att | CombinerKind::AttFeat => {
                let f = match &self.features {
                    Some(fp) => Some(fp.forward(tape, store, tokens, ranks)?),
                    None => None,
                };
                let att = self.attention.as_ref().expect("attention combiner has parameters");
                let alpha = att.weights(tape, store, &xs, f)?;
                (weighted_sum(tape, &xs, alpha)?, Some(alpha))
            }
            CombinerKind::Concat => unreachable!(),
        };
        Ok(MetaOutput {
            combined,
            projected: xs,
            alphas,
        })
    }
}

fn sum_all(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

/// `Σ_i α[:, i] · x_i`.
pub fn weighted_sum(tape: &mut Tape, xs: &[Var], alpha: Var) -> Result<Var> {
    let rows = tape.value(alpha).rows();
    let mut terms = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let col = tape.slice(alpha, 1, i, 1)?;
        let col = tape.reshape(col, &[rows])?;
        terms.push(tape.scale_rows(x, col)?);
    }
    sum_all(tape, &terms)
}

fn single_rows(tape: &mut Tape, xs: &[Vec<f64>]) -> Result<Vec<Var>> {
    xs.iter()
        .map(|x| Ok(tape.constant(Tensor::new(vec![1, x.len()], x.clone())?)))
        .collect()
}

/// `[e_1, …, e_n]` on raw (unprojected) vectors.
pub fn combine_concat(es: &[Vec<f64>]) -> Result<Vec<f64>> {
    if es.is_empty() {
        return Err(Error::InvalidArgument("no sources".into()));
    }
    Ok(es.concat())
}

/// Elementwise sum of projected vectors.
pub fn combine_sum(xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no sources".into()));
    }
    let mut tape = Tape::new();
    let vars = single_rows(&mut tape, xs)?;
    let s = sum_all(&mut tape, &vars)?;
    Ok(tape.value(s).data().to_vec())
}

/// Sum of unit-normalised projected vectors (zero vectors contribute zero).
pub fn combine_norm_sum(xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no sources".into()));
    }
    let mut tape = Tape::new();
    let vars = single_rows(&mut tape, xs)?;
    let normed: Vec<Var> = vars.iter().map(|&v| normalize_rows(&mut tape, v)).collect();
    let s = sum_all(&mut tape, &normed)?;
    Ok(tape.value(s).data().to_vec())
}

/// `Σ α_i x_i` for one token.
pub fn combine_weighted(xs: &[Vec<f64>], alpha: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != alpha.len() {
        return Err(Error::InvalidArgument("need one weight per source".into()));
    }
    let mut tape = Tape::new();
    let vars = single_rows(&mut tape, xs)?;
    let a = tape.constant(Tensor::new(vec![1, alpha.len()], alpha.to_vec())?);
    let s = weighted_sum(&mut tape, &vars, a)?;
    Ok(tape.value(s).data().to_vec())
}

#[cfg(test)]
mod tests;
