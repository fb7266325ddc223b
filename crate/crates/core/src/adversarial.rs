//! Source discriminator and the gradient-reversal update.
//!
//! One adversarial step computes `L_D` on reversed copies of the projected
//! vectors, so a single backward pass gives `∂L_D/∂θ_D` on the
//! discriminator and `-λ ∂L_D/∂θ_F` on the generator. The discriminator
//! gradient is then scaled by `λ`, giving
//! `θ_D ← θ_D - ηλ ∂L_D/∂θ_D` and `θ_F ← θ_F + ηλ ∂L_D/∂θ_F`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::Frontend;
use crate::nn::Linear;
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub enabled: bool,
    pub lambda: f64,
    /// An adversarial step follows every `period`-th downstream batch.
    pub period: usize,
    pub disc_hidden: usize,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            enabled: false,
            lambda: 1e-4,
            period: 10,
            disc_hidden: 128,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("adversarial.lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.period == 0 {
            return Err(Error::Config("adversarial.period must be >= 1".into()));
        }
        if self.disc_hidden == 0 {
            return Err(Error::Config("adversarial.disc_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// `E -> h_D` (tanh) `-> n` softmax classifier over embedding sources.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub hidden: Linear,
    pub output: Linear,
    pub num_sources: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        common_dim: usize,
        hidden: usize,
        num_sources: usize,
        rng: &mut R,
    ) -> Self {
        Discriminator {
            hidden: Linear::new(store, "disc.hidden", ParamGroup::Discriminator, common_dim, hidden, rng),
            output: Linear::new(store, "disc.output", ParamGroup::Discriminator, hidden, num_sources, rng),
            num_sources,
        }
    }

    /// Log-probabilities `[N, n]` for `x: [N, E]`.
    pub fn log_probs(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.tanh(h);
        let logits = self.output.forward(tape, store, h)?;
        Ok(tape.log_softmax(logits))
    }

    pub fn probabilities(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let lp = self.log_probs(&mut tape, store, v)?;
        Ok(tape.value(lp).data().iter().map(|v| v.exp()).collect())
    }
}

/// Mean cross-entropy of the discriminator on `xs[i]: [N_i, E]` (all from
/// source `i`), taken through a gradient-reversal node with factor `lambda`.
pub fn discriminator_loss(
    tape: &mut Tape,
    store: &ParamStore,
    disc: &Discriminator,
    xs: &[Var],
    lambda: f64,
) -> Result<Var> {
    if xs.len() != disc.num_sources {
        return Err(Error::InvalidArgument(format!(
            "{} sources for a {}-way discriminator",
            xs.len(),
            disc.num_sources
        )));
    }
    let mut rows = Vec::with_capacity(xs.len());
    let mut labels = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let n = tape.value(x).rows();
        labels.extend(std::iter::repeat_n(i, n));
        rows.push(tape.grad_reverse(x, lambda)?);
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty discriminator batch".into()));
    }
    let all = tape.concat(&rows, 0)?;
    let lp = disc.log_probs(tape, store, all)?;
    tape.nll(lp, &labels)
}

/// Applies one adversarial update. `build` returns one `[N_i, E]` node of
/// projected vectors per source. Only generator and discriminator
/// parameters move. Returns `L_D`.
pub fn adversarial_update<F>(
    store: &mut ParamStore,
    optimizer: &mut Optimizer,
    disc: &Discriminator,
    lambda: f64,
    build: F,
) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Vec<Var>>,
{
    let mut tape = Tape::new();
    let xs = build(&mut tape, store)?;
    let loss = discriminator_loss(&mut tape, store, disc, &xs, lambda)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss is {value}")));
    }
    tape.backward(loss)?;
    let mut grads = tape.param_grads();
    grads.retain_groups(store, &[ParamGroup::Generator, ParamGroup::Discriminator]);
    grads.scale_group(store, ParamGroup::Discriminator, lambda);
    optimizer.step(store, &grads)?;
    Ok(value)
}

/// Adversarial step on the tokens of a batch: every (token, source) pair is
/// one sample.
pub fn adversarial_step(
    store: &mut ParamStore,
    optimizer: &mut Optimizer,
    frontend: &Frontend,
    disc: &Discriminator,
    lambda: f64,
    batch: &[&[String]],
) -> Result<f64> {
    adversarial_update(store, optimizer, disc, lambda, |tape, store| {
        let n = frontend.sources.len();
        let mut per_source: Vec<Vec<Var>> = vec![Vec::new(); n];
        for tokens in batch {
            for (i, x) in frontend.project(tape, store, tokens)?.into_iter().enumerate() {
                per_source[i].push(x);
            }
        }
        per_source.iter().map(|xs| tape.concat(xs, 0)).collect()
    })
}

/// Probe settings: full-batch Adam on a multinomial logistic regression.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.5,
            epochs: 300,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Held-out accuracy of a fresh linear probe predicting the source of each
/// frozen vector. The split is stratified by source.
pub fn probe_accuracy(samples: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig) -> Result<f64> {
    if samples.len() != labels.len() {
        return Err(Error::InvalidArgument("one label per sample required".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::InvalidArgument("probe needs at least two sources".into()));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(Error::InvalidArgument("probe samples must share a positive dimension".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train fraction must be in (0, 1)".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!("source {c} has fewer than two samples")));
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    let gather = |idx: &[usize]| -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].clone()).collect();
        Tensor::from_rows(&rows)
    };
    let xtr = gather(&train)?;
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();

    let mut store = ParamStore::new();
    let w = store.add("probe.w", ParamGroup::Classifier, Tensor::zeros(&[dim, classes]));
    let b = store.add("probe.b", ParamGroup::Classifier, Tensor::zeros(&[classes]));
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(xtr.clone());
        let (wv, bv) = (tape.param(&store, w), tape.param(&store, b));
        let z = tape.matmul(x, wv)?;
        let z = tape.add_row(z, bv)?;
        let lp = tape.log_softmax(z);
        let loss = tape.nll(lp, &ytr)?;
        tape.backward(loss)?;
        opt.step(&mut store, &tape.param_grads())?;
    }
    let (wt, bt) = (store.value(w), store.value(b));
    let mut correct = 0usize;
    for &i in &test {
        let scores: Vec<f64> = (0..classes)
            .map(|c| bt.data()[c] + (0..dim).map(|d| samples[i][d] * wt.at(d, c)).sum::<f64>())
            .collect();
        let pred = (0..classes).fold(0, |best, c| if scores[c] > scores[best] { c } else { best });
        correct += usize::from(pred == labels[i]);
    }
    Ok(correct as f64 / test.len() as f64)
}
