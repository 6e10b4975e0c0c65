//! Single-layer LSTM label encoder (prediction network).
//!
//! Gates are packed as `[input, forget, candidate, output]` along the last
//! axis of the `[E, 4H]` / `[H, 4H]` weight matrices.

use crate::error::{ensure_eq, Result};
use crate::kernels::{matmul, sigmoid};
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct LstmWeights<F: Float> {
    /// `[E, 4H]`
    pub w_ih: Tensor<F>,
    /// `[H, 4H]`
    pub w_hh: Tensor<F>,
    /// `[4H]`
    pub bias: Tensor<F>,
}

impl<F: Float> LstmWeights<F> {
    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F: Float> {
    /// `[H]`
    pub h: Vec<F>,
    /// `[H]`
    pub c: Vec<F>,
}

impl<F: Float> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![F::zero(); hidden],
            c: vec![F::zero(); hidden],
        }
    }
}

/// One LSTM step on an `[E]` input; returns the new state (whose `h` is the
/// step output).
pub fn lstm_step<F: Float>(x: &[F], state: &LstmState<F>, w: &LstmWeights<F>) -> Result<LstmState<F>> {
    let hdim = w.hidden();
    ensure_eq("LSTM input width", x.len(), w.w_ih.rows())?;
    ensure_eq("LSTM hidden state", state.h.len(), hdim)?;
    ensure_eq("LSTM cell state", state.c.len(), hdim)?;
    ensure_eq("LSTM gate width", w.w_ih.cols(), 4 * hdim)?;
    let xi = matmul(&Tensor::new(&[1, x.len()], x.to_vec())?, &w.w_ih)?;
    let hh = matmul(&Tensor::new(&[1, hdim], state.h.clone())?, &w.w_hh)?;
    let gates: Vec<F> = (0..4 * hdim)
        .map(|j| xi.data()[j] + hh.data()[j] + w.bias.data()[j])
        .collect();
    let mut next = LstmState::zeros(hdim);
    for k in 0..hdim {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hdim + k]);
        let g = gates[2 * hdim + k].tanh();
        let o = sigmoid(gates[3 * hdim + k]);
        next.c[k] = f * state.c[k] + i * g;
        next.h[k] = o * next.c[k].tanh();
    }
    Ok(next)
}

/// Records one LSTM step. `gates_x` is the precomputed `[1, 4H]` input
/// contribution (`x W_ih + b`); `h` and `c` are `[1, H]`.
pub fn lstm_step_on_tape<F: Float>(
    tape: &mut GradTape<F>,
    gates_x: Var,
    h: Var,
    c: Var,
    w_hh: Var,
) -> Result<(Var, Var)> {
    let hdim = tape.value(h).cols();
    let hh = tape.linear(h, w_hh, None)?;
    let gates = tape.add(gates_x, hh)?;
    let i = tape.slice_cols(gates, 0, hdim)?;
    let f = tape.slice_cols(gates, hdim, hdim)?;
    let g = tape.slice_cols(gates, 2 * hdim, hdim)?;
    let o = tape.slice_cols(gates, 3 * hdim, hdim)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs the LSTM over the rows of `inputs[U, E]` from a zero state, returning
/// the stacked outputs `[U, H]`.
pub fn lstm_sequence_on_tape<F: Float>(
    tape: &mut GradTape<F>,
    inputs: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
) -> Result<Var> {
    let steps = tape.value(inputs).rows();
    let hdim = tape.value(w_hh).rows();
    let gates_x = tape.linear(inputs, w_ih, Some(bias))?;
    let mut h = tape.leaf(Tensor::zeros(&[1, hdim]));
    let mut c = tape.leaf(Tensor::zeros(&[1, hdim]));
    let mut outputs = Vec::with_capacity(steps);
    for u in 0..steps {
        let gx = tape.gather(gates_x, &[u])?;
        (h, c) = lstm_step_on_tape(tape, gx, h, c, w_hh)?;
        outputs.push(h);
    }
    tape.stack_rows(&outputs)
}
