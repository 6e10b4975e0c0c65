//! Exact transducer loss over the `(T, U+1)` alignment lattice.
//!
//! All lattice arithmetic is done in `f64` whatever the logit type.

use crate::error::{config_err, Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Checks `labels` against the blank id and vocabulary size.
pub fn validate_labels(labels: &[usize], blank: usize, vocab: usize) -> Result<()> {
    for (position, &label) in labels.iter().enumerate() {
        if label == blank {
            return Err(Error::InvalidLabel { label, position });
        }
        if label >= vocab {
            return Err(config_err(format!(
                "label {label} at position {position} is outside a vocabulary of {vocab}"
            )));
        }
    }
    Ok(())
}

/// `-log P(labels | logits)` and its gradient with respect to the logits.
///
/// `logits` is `[T, U+1, V]`; the result gradient has the same shape.
pub fn rnnt_loss<F: Float>(logits: &Tensor<F>, labels: &[usize], blank: usize) -> Result<(f64, Tensor<F>)> {
    let &[t_len, u1, v] = logits.shape() else {
        return Err(config_err(format!("transducer logits must be [T, U+1, V], got {:?}", logits.shape())));
    };
    if t_len == 0 {
        return Err(Error::EmptyInput("transducer loss needs at least one frame".into()));
    }
    if u1 != labels.len() + 1 {
        return Err(config_err(format!(
            "logits cover {} label positions but there are {} labels",
            u1,
            labels.len()
        )));
    }
    if blank >= v {
        return Err(config_err(format!("blank id {blank} outside a vocabulary of {v}")));
    }
    validate_labels(labels, blank, v)?;
    let u_len = labels.len();
    let idx = |t: usize, u: usize| t * u1 + u;

    let lp: Vec<Vec<f64>> = (0..t_len * u1)
        .map(|r| log_softmax(&logits.data()[r * v..(r + 1) * v].iter().map(|x| x.as_f64()).collect::<Vec<_>>()))
        .collect();
    let blank_lp = |t: usize, u: usize| lp[idx(t, u)][blank];
    let label_lp = |t: usize, u: usize| lp[idx(t, u)][labels[u]];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * u1];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..u1 {
            if t == 0 && u == 0 {
                continue;
            }
            let from_t = if t > 0 { alpha[idx(t - 1, u)] + blank_lp(t - 1, u) } else { ninf };
            let from_u = if u > 0 { alpha[idx(t, u - 1)] + label_lp(t, u - 1) } else { ninf };
            alpha[idx(t, u)] = logaddexp(from_t, from_u);
        }
    }
    let mut beta = vec![ninf; t_len * u1];
    for t in (0..t_len).rev() {
        for u in (0..u1).rev() {
            let via_blank = if t + 1 < t_len {
                beta[idx(t + 1, u)] + blank_lp(t, u)
            } else if u == u_len {
                blank_lp(t, u)
            } else {
                ninf
            };
            let via_label = if u < u_len { beta[idx(t, u + 1)] + label_lp(t, u) } else { ninf };
            beta[idx(t, u)] = logaddexp(via_blank, via_label);
        }
    }
    let log_p = alpha[idx(t_len - 1, u_len)] + blank_lp(t_len - 1, u_len);
    if !log_p.is_finite() {
        return Err(Error::Numeric(format!("transducer log-likelihood is {log_p}")));
    }

    let mut grad = vec![F::zero(); t_len * u1 * v];
    for t in 0..t_len {
        for u in 0..u1 {
            let a = alpha[idx(t, u)];
            let occupancy = (a + beta[idx(t, u)] - log_p).exp();
            let row = &lp[idx(t, u)];
            let mut g: Vec<f64> = row.iter().map(|&l| l.exp() * occupancy).collect();
            let next_blank = if t + 1 < t_len {
                beta[idx(t + 1, u)]
            } else if u == u_len {
                0.0
            } else {
                ninf
            };
            g[blank] -= (a + row[blank] + next_blank - log_p).exp();
            if u < u_len {
                g[labels[u]] -= (a + row[labels[u]] + beta[idx(t, u + 1)] - log_p).exp();
            }
            let out = &mut grad[idx(t, u) * v..(idx(t, u) + 1) * v];
            for (o, gv) in out.iter_mut().zip(g) {
                *o = F::of(gv);
            }
        }
    }
    Ok((-log_p, Tensor::new(&[t_len, u1, v], grad)?))
}

/// Records the transducer loss of `logits[T * (U+1), V]` (as produced by the
/// joint) on the tape; returns the scalar loss node.
pub fn rnnt_loss_on_tape<F: Float>(
    tape: &mut GradTape<F>,
    logits: Var,
    frames: usize,
    labels: &[usize],
    blank: usize,
) -> Result<Var> {
    let value = tape.value(logits);
    let (rows, v) = value.expect_matrix("transducer logits")?;
    if rows != frames * (labels.len() + 1) {
        return Err(config_err(format!(
            "{rows} logit rows do not cover {frames} frames x {} label positions",
            labels.len() + 1
        )));
    }
    let cube = value.clone().reshape(&[frames, labels.len() + 1, v])?;
    let (loss, grad) = rnnt_loss(&cube, labels, blank)?;
    let grad = grad.reshape(&[rows, v])?;
    tape.scalar_fn(logits, F::of(loss), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(t: usize, u1: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(&[t, u1, v], (0..t * u1 * v).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn single_frame_no_labels_is_blank_nll() {
        let l = Tensor::<f64>::new(&[1, 1, 3], vec![0.2, 1.0, -0.5]).unwrap();
        let (loss, _) = rnnt_loss(&l, &[], 0).unwrap();
        let z: f64 = l.data().iter().map(|v| v.exp()).sum();
        assert!((loss - (-(0.2f64.exp() / z).ln())).abs() < 1e-12);
    }

    #[test]
    fn two_path_case_by_hand() {
        // T=2, U=1: emit y at t=0 then blank, blank; or blank then y at t=1, blank.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_logits(2, 2, 3, &mut rng);
        let p = |t: usize, u: usize, k: usize| {
            let row = &l.data()[(t * 2 + u) * 3..(t * 2 + u + 1) * 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row[k].exp() / z
        };
        let y = 2;
        let path_a = p(0, 0, y) * p(0, 1, 0) * p(1, 1, 0);
        let path_b = p(0, 0, 0) * p(1, 0, y) * p(1, 1, 0);
        let (loss, _) = rnnt_loss(&l, &[y], 0).unwrap();
        assert!((loss + (path_a + path_b).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random_logits(4, 3, 5, &mut rng);
        let (loss, g) = rnnt_loss(&l, &[1, 4], 0).unwrap();
        assert!(loss > 0.0);
        for r in 0..12 {
            let s: f64 = g.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn blank_label_rejected() {
        let l = Tensor::<f64>::zeros(&[2, 3, 4]);
        assert!(matches!(
            rnnt_loss(&l, &[1, 0], 0),
            Err(Error::InvalidLabel { label: 0, position: 1 })
        ));
        assert!(rnnt_loss(&l, &[1, 9], 0).is_err());
        assert!(rnnt_loss(&Tensor::<f64>::zeros(&[0, 1, 4]), &[], 0).is_err());
        assert!(rnnt_loss(&l, &[1], 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_logits(3, 3, 4, &mut rng);
        let labels = [2, 3];
        let (_, g) = rnnt_loss(&l, &labels, 0).unwrap();
        let h = 1e-6;
        for i in 0..l.len() {
            let mut plus = l.clone();
            plus.data_mut()[i] += h;
            let mut minus = l.clone();
            minus.data_mut()[i] -= h;
            let fd = (rnnt_loss(&plus, &labels, 0).unwrap().0 - rnnt_loss(&minus, &labels, 0).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-7, "{i}: {fd} vs {}", g.data()[i]);
        }
    }
}
