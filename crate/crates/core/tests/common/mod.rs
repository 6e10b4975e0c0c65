//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use contextnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// `-ln P(labels)` by enumerating every alignment path through the
/// `[T, U+1, V]` lattice in probability space.
pub fn brute_force_transducer_loss(logits: &Tensor<f64>, labels: &[usize], blank: usize) -> f64 {
    let (t_len, u1, v) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let prob = |t: usize, u: usize, k: usize| {
        let row = &logits.data()[(t * u1 + u) * v..(t * u1 + u + 1) * v];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        row[k].exp() / z
    };
    fn walk(t: usize, u: usize, t_len: usize, labels: &[usize], blank: usize, p: &dyn Fn(usize, usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        if u < labels.len() {
            total += p(t, u, labels[u]) * walk(t, u + 1, t_len, labels, blank, p);
        }
        if t + 1 < t_len {
            total += p(t, u, blank) * walk(t + 1, u, t_len, labels, blank, p);
        } else if u == labels.len() {
            total += p(t, u, blank);
        }
        total
    }
    -walk(0, 0, t_len, labels, blank, &prob).ln()
}

/// Number of alignment paths for `t` frames and `u` labels.
pub fn path_count(t: usize, u: usize) -> f64 {
    // choose where the u labels go among the t - 1 + u non-final moves
    let n = t - 1 + u;
    (0..u).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Worst relative error between analytic gradients and central differences.
///
/// `eval` returns the objective and the analytic gradient of every input.
/// `per_input` coordinates of each input are probed.
pub fn finite_difference_error(
    inputs: &[Tensor<f64>],
    per_input: usize,
    rng: &mut ChaCha8Rng,
    eval: impl Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
) -> f64 {
    let h = 1e-5;
    let (_, analytic) = eval(inputs);
    assert_eq!(analytic.len(), inputs.len());
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        assert_eq!(analytic[i].shape(), x.shape(), "gradient shape for input {i}");
        for _ in 0..per_input.min(x.len()) {
            let j = rng.random_range(0..x.len());
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}
