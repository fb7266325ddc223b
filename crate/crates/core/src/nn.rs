//! Layers shared by the embedders and the downstream models.

use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim_in: usize,
    pub dim_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim_in: usize,
        dim_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), group, &[dim_in, dim_out], dim_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), group, &[dim_out], dim_in, rng);
        Linear {
            weight,
            bias,
            dim_in,
            dim_out,
        }
    }

    /// Works on a `[in]` vector or a `[T, in]` matrix.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Single-direction LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub dim_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = store.add_uniform(format!("{name}.w_input"), group, &[dim_in, 4 * hidden], hidden, rng);
        let w_hidden = store.add_uniform(format!("{name}.w_hidden"), group, &[hidden, 4 * hidden], hidden, rng);
        let bias = store.add_uniform(format!("{name}.bias"), group, &[4 * hidden], hidden, rng);
        Lstm {
            w_input,
            w_hidden,
            bias,
            dim_in,
            hidden,
        }
    }

    /// Runs over the rows of `x: [T, in]` in the given order and returns the
    /// hidden state after each visited row, in visiting order.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, x: Var, order: &[usize]) -> Result<Vec<Var>> {
        let h = self.hidden;
        let wi = tape.param(store, self.w_input);
        let wh = tape.param(store, self.w_hidden);
        let b = tape.param(store, self.bias);
        let projected = tape.matmul(x, wi)?;
        let projected = tape.add_row(projected, b)?;
        let mut hidden = tape.constant(Tensor::zeros(&[h]));
        let mut cell = tape.constant(Tensor::zeros(&[h]));
        let mut states = Vec::with_capacity(order.len());
        for &t in order {
            let xt = tape.row(projected, t)?;
            let rec = tape.matmul(hidden, wh)?;
            let gates = tape.add(xt, rec)?;
            let i = tape.slice(gates, 0, 0, h)?;
            let f = tape.slice(gates, 0, h, h)?;
            let g = tape.slice(gates, 0, 2 * h, h)?;
            let o = tape.slice(gates, 0, 3 * h, h)?;
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let g = tape.tanh(g);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, cell)?;
            let write = tape.mul(i, g)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell);
            hidden = tape.mul(o, squashed)?;
            states.push(hidden);
        }
        Ok(states)
    }
}

/// Forward and backward LSTMs over the same sequence.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

pub struct BiLstmOutput {
    /// `[T, 2h]`: row t is `[forward_t ; backward_t]`.
    pub states: Var,
    /// Forward state after the last token.
    pub last_forward: Var,
    /// Backward state after reading back to the first token.
    pub last_backward: Var,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), group, dim_in, hidden, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), group, dim_in, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<BiLstmOutput> {
        let len = tape.value(x).rows();
        let order: Vec<usize> = (0..len).collect();
        let rev: Vec<usize> = (0..len).rev().collect();
        let fwd = self.forward.run(tape, store, x, &order)?;
        let mut bwd = self.backward.run(tape, store, x, &rev)?;
        let last_backward = *bwd.last().expect("non-empty sequence");
        bwd.reverse();
        let f = tape.stack(&fwd)?;
        let b = tape.stack(&bwd)?;
        let states = tape.concat(&[f, b], 1)?;
        Ok(BiLstmOutput {
            states,
            last_forward: *fwd.last().expect("non-empty sequence"),
            last_backward,
        })
    }
}
