//! Squeeze-and-excitation: pool the sequence, squeeze it through a bottleneck
//! and gate every frame with the resulting per-channel weights in (0, 1).

use super::config::Activation;
use crate::error::{ensure_eq, Result};
use crate::params::{Init, ParamId, ParamSource, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

/// Pooling extent of an SE module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeWindow {
    Global,
    /// Centred window of this many frames, clipped at the edges.
    Frames(usize),
}

impl From<Option<usize>> for SeWindow {
    fn from(w: Option<usize>) -> Self {
        w.map_or(SeWindow::Global, SeWindow::Frames)
    }
}

/// Standalone SE weights.
#[derive(Clone, Debug)]
pub struct SeParams<F: Float> {
    /// `[D, Db]`
    pub w1: Tensor<F>,
    /// `[Db]`
    pub b1: Tensor<F>,
    /// `[Db, D]`
    pub w2: Tensor<F>,
    /// `[D]`
    pub b2: Tensor<F>,
    pub window: SeWindow,
}

impl<F: Float> SeParams<F> {
    pub fn zeros(d: usize, bottleneck: usize, window: SeWindow) -> Self {
        Self {
            w1: Tensor::zeros(&[d, bottleneck]),
            b1: Tensor::zeros(&[bottleneck]),
            w2: Tensor::zeros(&[bottleneck, d]),
            b2: Tensor::zeros(&[d]),
            window,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SeParamIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl SeParamIds {
    pub fn build<F: Float>(src: &mut impl ParamSource<F>, prefix: &str, d: usize, bottleneck: usize) -> Result<Self> {
        Ok(Self {
            w1: src.tensor(&format!("{prefix}.w1"), &[d, bottleneck], Init::glorot(d, bottleneck), true)?,
            b1: src.tensor(&format!("{prefix}.b1"), &[bottleneck], Init::Zeros, true)?,
            w2: src.tensor(&format!("{prefix}.w2"), &[bottleneck, d], Init::glorot(bottleneck, d), true)?,
            b2: src.tensor(&format!("{prefix}.b2"), &[d], Init::Zeros, true)?,
        })
    }

    pub fn to_vars<F: Float>(&self, tape: &mut GradTape<F>, store: &ParamStore<F>) -> [Var; 4] {
        [
            tape.param(store, self.w1),
            tape.param(store, self.b1),
            tape.param(store, self.w2),
            tape.param(store, self.b2),
        ]
    }
}

pub(crate) fn activate<F: Float>(tape: &mut GradTape<F>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Swish => tape.swish(x),
        Activation::Relu => tape.unary(x, crate::tape::Unary::Relu),
        Activation::Identity => x,
    }
}

/// Records `theta(x) * x` on the tape. `[w1, b1, w2, b2]` are tape values.
pub fn se_on_tape<F: Float>(
    tape: &mut GradTape<F>,
    x: Var,
    weights: [Var; 4],
    window: SeWindow,
    act: Activation,
) -> Result<Var> {
    let [w1, b1, w2, b2] = weights;
    ensure_eq("SE input channels", tape.value(x).cols(), tape.value(w1).rows())?;
    let pooled = match window {
        SeWindow::Global => tape.mean_time(x)?,
        SeWindow::Frames(w) => tape.window_mean(x, w)?,
    };
    let h = tape.linear(pooled, w1, Some(b1))?;
    let h = activate(tape, h, act);
    let z = tape.linear(h, w2, Some(b2))?;
    let theta = tape.sigmoid(z);
    match window {
        SeWindow::Global => tape.mul_rows(x, theta),
        SeWindow::Frames(_) => tape.mul(x, theta),
    }
}

/// SE module applied to a `[T, D]` sequence with swish in the bottleneck.
pub fn se_module<F: Float>(x: &Tensor<F>, p: &SeParams<F>) -> Result<Tensor<F>> {
    let mut tape = GradTape::new();
    let xv = tape.leaf(x.clone());
    let d = p.b2.len();
    let db = p.b1.len();
    let weights = [
        tape.leaf(p.w1.clone().reshape(&[d, db])?),
        tape.leaf(p.b1.clone()),
        tape.leaf(p.w2.clone().reshape(&[db, d])?),
        tape.leaf(p.b2.clone()),
    ];
    let y = se_on_tape(&mut tape, xv, weights, p.window, Activation::Swish)?;
    Ok(tape.value(y).clone())
}
