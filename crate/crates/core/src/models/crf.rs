//! Linear-chain CRF over `K` tags.
//!
//! Transitions live in a `(K+2) x (K+2)` matrix where index `K` is the start
//! state and `K+1` the stop state. Only `start -> k`, `j -> k` and
//! `k -> stop` are read; the remaining entries are structurally impossible,
//! never scored, and always receive a zero gradient.
//!
//! `score(y) = Σ_t emit[t, y_t] + trans[start, y_1] + Σ_t trans[y_t, y_{t+1}] + trans[y_T, stop]`.

use rand::Rng;

use crate::autodiff::{logsumexp, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;

fn check_shapes(emissions: &Tensor, transitions: &Tensor) -> Result<(usize, usize)> {
    if emissions.rank() != 2 || emissions.rows() == 0 {
        return Err(Error::shape("crf", &[emissions.shape()]));
    }
    let (t, k) = (emissions.rows(), emissions.cols());
    if transitions.shape() != [k + 2, k + 2] {
        return Err(Error::shape("crf", &[emissions.shape(), transitions.shape()]));
    }
    Ok((t, k))
}

fn check_tags(tags: &[usize], t: usize, k: usize) -> Result<()> {
    if tags.len() != t {
        return Err(Error::InvalidArgument(format!("{} tags for {t} positions", tags.len())));
    }
    if let Some(bad) = tags.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("tag index {bad} out of range for {k} tags")));
    }
    Ok(())
}

/// Unnormalised score of one tag sequence.
pub fn sequence_score(emissions: &Tensor, transitions: &Tensor, tags: &[usize]) -> Result<f64> {
    let (t, k) = check_shapes(emissions, transitions)?;
    check_tags(tags, t, k)?;
    let (start, stop) = (k, k + 1);
    let mut s = transitions.at(start, tags[0]) + transitions.at(tags[t - 1], stop);
    for (i, &y) in tags.iter().enumerate() {
        s += emissions.at(i, y);
        if i > 0 {
            s += transitions.at(tags[i - 1], y);
        }
    }
    Ok(s)
}

/// Forward log-potentials `alpha[t][k]`.
fn forward_table(emissions: &Tensor, transitions: &Tensor, t: usize, k: usize) -> Vec<Vec<f64>> {
    let mut alpha = Vec::with_capacity(t);
    alpha.push((0..k).map(|y| transitions.at(k, y) + emissions.at(0, y)).collect::<Vec<f64>>());
    let mut buf = vec![0.0; k];
    for i in 1..t {
        let prev: &Vec<f64> = &alpha[i - 1];
        let row: Vec<f64> = (0..k)
            .map(|y| {
                for j in 0..k {
                    buf[j] = prev[j] + transitions.at(j, y);
                }
                logsumexp(&buf) + emissions.at(i, y)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-potentials `beta[t][k]` (including the stop transition).
fn backward_table(emissions: &Tensor, transitions: &Tensor, t: usize, k: usize) -> Vec<Vec<f64>> {
    let mut beta = vec![vec![0.0; k]; t];
    for y in 0..k {
        beta[t - 1][y] = transitions.at(y, k + 1);
    }
    let mut buf = vec![0.0; k];
    for i in (0..t - 1).rev() {
        for j in 0..k {
            for y in 0..k {
                buf[y] = transitions.at(j, y) + emissions.at(i + 1, y) + beta[i + 1][y];
            }
            beta[i][j] = logsumexp(&buf);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` by the forward algorithm.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (t, k) = check_shapes(emissions, transitions)?;
    let alpha = forward_table(emissions, transitions, t, k);
    let last: Vec<f64> = (0..k).map(|y| alpha[t - 1][y] + transitions.at(y, k + 1)).collect();
    Ok(logsumexp(&last))
}

/// Negative log-likelihood `logZ - score(gold)`.
pub fn nll(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<f64> {
    Ok(log_partition(emissions, transitions)? - sequence_score(emissions, transitions, gold)?)
}

/// Gradients of [`nll`] with respect to emissions and transitions.
pub fn nll_gradients(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<(Tensor, Tensor)> {
    let (t, k) = check_shapes(emissions, transitions)?;
    check_tags(gold, t, k)?;
    let (start, stop) = (k, k + 1);
    let alpha = forward_table(emissions, transitions, t, k);
    let beta = backward_table(emissions, transitions, t, k);
    let log_z = logsumexp(&(0..k).map(|y| alpha[t - 1][y] + transitions.at(y, stop)).collect::<Vec<_>>());

    let mut de = vec![0.0; t * k];
    let mut dt = vec![0.0; (k + 2) * (k + 2)];
    let n = k + 2;
    for i in 0..t {
        for y in 0..k {
            de[i * k + y] = (alpha[i][y] + beta[i][y] - log_z).exp();
        }
        de[i * k + gold[i]] -= 1.0;
    }
    for y in 0..k {
        dt[start * n + y] = (alpha[0][y] + beta[0][y] - log_z).exp();
        dt[y * n + stop] = (alpha[t - 1][y] + beta[t - 1][y] - log_z).exp();
    }
    dt[start * n + gold[0]] -= 1.0;
    dt[gold[t - 1] * n + stop] -= 1.0;
    for i in 0..t - 1 {
        for j in 0..k {
            for y in 0..k {
                let p = alpha[i][j] + transitions.at(j, y) + emissions.at(i + 1, y) + beta[i + 1][y] - log_z;
                dt[j * n + y] += p.exp();
            }
        }
        dt[gold[i] * n + gold[i + 1]] -= 1.0;
    }
    Ok((
        Tensor::from_parts(vec![t, k], de),
        Tensor::from_parts(vec![n, n], dt),
    ))
}

/// Highest-scoring tag sequence; ties go to the lowest tag index.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<Vec<usize>> {
    let (t, k) = check_shapes(emissions, transitions)?;
    let mut delta: Vec<f64> = (0..k).map(|y| transitions.at(k, y) + emissions.at(0, y)).collect();
    let mut back = vec![vec![0usize; k]; t];
    for i in 1..t {
        let mut next = vec![0.0; k];
        for y in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + transitions.at(0, y);
            for j in 1..k {
                let s = delta[j] + transitions.at(j, y);
                if s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            back[i][y] = best;
            next[y] = best_score + emissions.at(i, y);
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = delta[0] + transitions.at(0, k + 1);
    for y in 1..k {
        let s = delta[y] + transitions.at(y, k + 1);
        if s > best_score {
            last = y;
            best_score = s;
        }
    }
    let mut path = vec![last; t];
    for i in (1..t).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok(path)
}

/// CRF negative log-likelihood as a tape node over `emissions: [T, K]` and
/// `transitions: [K+2, K+2]`.
pub fn crf_loss(tape: &mut Tape, emissions: Var, transitions: Var, gold: &[usize]) -> Result<Var> {
    let e = tape.value(emissions).clone();
    let tr = tape.value(transitions).clone();
    let loss = nll(&e, &tr, gold)?;
    let (de, dt) = nll_gradients(&e, &tr, gold)?;
    Ok(tape.custom(
        &[emissions, transitions],
        Tensor::scalar(loss),
        Box::new(move |g, _| {
            let s = g.item();
            vec![Some(de.scale(s)), Some(dt.scale(s))]
        }),
    ))
}

/// Emission projection plus transition scores.
#[derive(Clone, Debug)]
pub struct CrfLayer {
    pub num_tags: usize,
    pub emission: Linear,
    pub transitions: ParamId,
}

impl CrfLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dim_in: usize, num_tags: usize, rng: &mut R) -> Result<Self> {
        if num_tags == 0 {
            return Err(Error::Config("tag set is empty".into()));
        }
        let emission = Linear::new(store, "crf.emission", ParamGroup::Classifier, dim_in, num_tags, rng);
        let transitions = store.add("crf.transitions", ParamGroup::Classifier, Tensor::zeros(&[num_tags + 2, num_tags + 2]));
        Ok(CrfLayer {
            num_tags,
            emission,
            transitions,
        })
    }

    pub fn emissions(&self, tape: &mut Tape, store: &ParamStore, states: Var) -> Result<Var> {
        self.emission.forward(tape, store, states)
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, states: Var, gold: &[usize]) -> Result<Var> {
        let e = self.emissions(tape, store, states)?;
        let tr = tape.param(store, self.transitions);
        crf_loss(tape, e, tr, gold)
    }

    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, states: Var) -> Result<Vec<usize>> {
        let e = self.emissions(tape, store, states)?;
        viterbi(tape.value(e), store.value(self.transitions))
    }
}
