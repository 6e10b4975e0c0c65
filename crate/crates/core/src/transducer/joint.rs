//! Additive joint network: `W_o tanh(W_e enc + W_p pred + b) + b_o`.

use crate::error::{ensure_eq, Result};
use crate::kernels::conv1d_pointwise;
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct JointWeights<F: Float> {
    /// `[Denc, J]`
    pub enc_proj: Tensor<F>,
    /// `[H, J]`
    pub pred_proj: Tensor<F>,
    /// `[J]`
    pub bias: Tensor<F>,
    /// `[J, V]`
    pub out_proj: Tensor<F>,
    /// `[V]`
    pub out_bias: Tensor<F>,
}

impl<F: Float> JointWeights<F> {
    pub fn zeros(enc: usize, hidden: usize, joint: usize, vocab: usize) -> Self {
        Self {
            enc_proj: Tensor::zeros(&[enc, joint]),
            pred_proj: Tensor::zeros(&[hidden, joint]),
            bias: Tensor::zeros(&[joint]),
            out_proj: Tensor::zeros(&[joint, vocab]),
            out_bias: Tensor::zeros(&[vocab]),
        }
    }
}

/// Logits `[V]` for one encoder frame and one label-encoder output.
pub fn joint<F: Float>(enc_t: &[F], pred_u: &[F], w: &JointWeights<F>) -> Result<Vec<F>> {
    let e = conv1d_pointwise(&Tensor::new(&[1, enc_t.len()], enc_t.to_vec())?, &w.enc_proj, None)?;
    let p = conv1d_pointwise(&Tensor::new(&[1, pred_u.len()], pred_u.to_vec())?, &w.pred_proj, Some(&w.bias))?;
    ensure_eq("joint width", w.out_proj.rows(), e.cols())?;
    let h: Vec<F> = e.data().iter().zip(p.data()).map(|(&a, &b)| (a + b).tanh()).collect();
    let h = Tensor::new(&[1, h.len()], h)?;
    Ok(conv1d_pointwise(&h, &w.out_proj, Some(&w.out_bias))?.into_data())
}

/// Records the joint over every `(t, u)` pair: `enc[T, Denc]` and
/// `pred[U+1, H]` give logits `[T * (U+1), V]` with row `t * (U+1) + u`.
/// `weights` is `[enc_proj, pred_proj, bias, out_proj, out_bias]`.
pub fn joint_on_tape<F: Float>(tape: &mut GradTape<F>, enc: Var, pred: Var, weights: [Var; 5]) -> Result<Var> {
    let [enc_proj, pred_proj, bias, out_proj, out_bias] = weights;
    let e = tape.linear(enc, enc_proj, None)?;
    let p = tape.linear(pred, pred_proj, Some(bias))?;
    let s = tape.outer_add(e, p)?;
    let h = tape.tanh(s);
    tape.linear(h, out_proj, Some(out_bias))
}
