//! Forward (and matching backward) kernels on `[T, D]` tensors.
//!
//! These are pure functions; the tape in [`crate::tape`] records calls to them
//! and uses the `*_backward` companions during the reverse pass.

use crate::error::{config_err, ensure_eq, Error, Result};
use crate::tensor::{Float, Tensor};

/// Default batch-norm epsilon.
pub const BN_EPS: f64 = 1e-3;
/// Default momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.99;

/// Output length of a same-ceil padded convolution.
pub fn conv_output_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

/// Zero frames inserted before the first input frame for kernel size `k`.
pub fn left_padding(k: usize) -> usize {
    (k - 1) / 2
}

fn check_depthwise<F: Float>(x: &Tensor<F>, kernel: &Tensor<F>, stride: usize) -> Result<(usize, usize, usize)> {
    let (t, d) = x.expect_matrix("depthwise input")?;
    let (k, kd) = kernel.expect_matrix("depthwise kernel")?;
    ensure_eq("depthwise kernel channels", kd, d)?;
    if stride < 1 {
        return Err(config_err("stride must be >= 1"));
    }
    if k % 2 == 0 {
        return Err(config_err(format!("depthwise kernel size must be odd, got {k}")));
    }
    Ok((t, d, k))
}

/// Per-channel temporal convolution with same-ceil zero padding.
///
/// Output frame `i` is centred on input frame `i * stride`, so the output has
/// `ceil(T / stride)` frames.
pub fn depthwise_conv1d<F: Float>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
) -> Result<Tensor<F>> {
    let (t, d, k) = check_depthwise(x, kernel, stride)?;
    if let Some(b) = bias {
        ensure_eq("depthwise bias length", b.len(), d)?;
    }
    let t_out = conv_output_len(t, stride);
    let pad = left_padding(k) as isize;
    let xs = x.data();
    let ks = kernel.data();
    let mut out = match bias {
        Some(b) => {
            let mut v = Vec::with_capacity(t_out * d);
            for _ in 0..t_out {
                v.extend_from_slice(b.data());
            }
            v
        }
        None => vec![F::zero(); t_out * d],
    };
    for i in 0..t_out {
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..k {
            let src = (i * stride) as isize + j as isize - pad;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            let xrow = &xs[src * d..(src + 1) * d];
            let krow = &ks[j * d..(j + 1) * d];
            for c in 0..d {
                orow[c] += krow[c] * xrow[c];
            }
        }
    }
    Tensor::new(&[t_out, d], out)
}

/// Gradients of [`depthwise_conv1d`] with respect to input, kernel and bias.
pub fn depthwise_conv1d_backward<F: Float>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    dy: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (t, d, k) = check_depthwise(x, kernel, stride)?;
    let t_out = conv_output_len(t, stride);
    ensure_eq("depthwise output gradient shape", dy.shape(), &[t_out, d][..])?;
    let pad = left_padding(k) as isize;
    let xs = x.data();
    let ks = kernel.data();
    let gs = dy.data();
    let mut dx = vec![F::zero(); t * d];
    let mut dk = vec![F::zero(); k * d];
    let mut db = vec![F::zero(); d];
    for i in 0..t_out {
        let grow = &gs[i * d..(i + 1) * d];
        for c in 0..d {
            db[c] += grow[c];
        }
        for j in 0..k {
            let src = (i * stride) as isize + j as isize - pad;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            for c in 0..d {
                dx[src * d + c] += ks[j * d + c] * grow[c];
                dk[j * d + c] += xs[src * d + c] * grow[c];
            }
        }
    }
    Ok((
        Tensor::new(&[t, d], dx)?,
        Tensor::new(&[k, d], dk)?,
        Tensor::vector(db),
    ))
}

/// `a[M, K] * b[K, N]`. Each output row depends only on the matching input
/// row, accumulated in a fixed order.
pub fn matmul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, ka) = a.expect_matrix("matmul lhs")?;
    let (kb, n) = b.expect_matrix("matmul rhs")?;
    ensure_eq("matmul inner dimension", ka, kb)?;
    let mut out = vec![F::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ad[i * ka..(i + 1) * ka].iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a^T * b` for `a[M, K]`, `b[M, N]`, giving `[K, N]`.
pub fn matmul_tn<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = a.expect_matrix("matmul_tn lhs")?;
    let (mb, n) = b.expect_matrix("matmul_tn rhs")?;
    ensure_eq("matmul_tn shared dimension", m, mb)?;
    let mut out = vec![F::zero(); k * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let brow = &bd[i * n..(i + 1) * n];
        for (p, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[k, n], out)
}

/// `a * b^T` for `a[M, N]`, `b[K, N]`, giving `[M, K]`.
pub fn matmul_nt<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = a.expect_matrix("matmul_nt lhs")?;
    let (k, nb) = b.expect_matrix("matmul_nt rhs")?;
    ensure_eq("matmul_nt shared dimension", n, nb)?;
    let mut out = vec![F::zero(); m * k];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    Tensor::new(&[m, k], out)
}

/// Per-frame affine map `x W + b` (a kernel-size-one convolution).
pub fn conv1d_pointwise<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let mut y = matmul(x, weight)?;
    if let Some(b) = bias {
        add_row_bias(&mut y, b)?;
    }
    Ok(y)
}

pub(crate) fn add_row_bias<F: Float>(y: &mut Tensor<F>, b: &Tensor<F>) -> Result<()> {
    let n = y.cols();
    ensure_eq("bias length", b.len(), n)?;
    let bd = b.data().to_vec();
    for row in y.data_mut().chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(&bd) {
            *o += bv;
        }
    }
    Ok(())
}

/// Column sums of a `[M, N]` tensor, as an `[N]` vector.
pub fn sum_rows<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let n = x.cols();
    let mut out = vec![F::zero(); n];
    if n > 0 {
        for row in x.data().chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Tensor::vector(out)
}

#[inline]
pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `x * sigmoid(x)`, the swish activation with unit slope parameter.
#[inline]
pub fn swish_scalar<F: Float>(x: F) -> F {
    x * sigmoid(x)
}

/// d swish / dx.
#[inline]
pub fn swish_grad<F: Float>(x: F) -> F {
    let s = sigmoid(x);
    s + x * s * (F::one() - s)
}

pub fn swish<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    x.map(swish_scalar)
}

/// Mean and (biased) variance of every channel over the frames of `x`.
pub fn batch_statistics<F: Float>(x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let (t, d) = x.expect_matrix("batch norm input")?;
    if t == 0 {
        return Err(Error::EmptyInput("batch statistics over zero frames".into()));
    }
    let n = F::of(t as f64);
    let mut mean = sum_rows(x);
    for m in mean.data_mut() {
        *m /= n;
    }
    let mut var = vec![F::zero(); d];
    for row in x.data().chunks(d) {
        for c in 0..d {
            let dv = row[c] - mean.data()[c];
            var[c] += dv * dv;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    Ok((mean, Tensor::vector(var)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise by the statistics of the current input and update the
    /// running averages.
    Train,
    /// Normalise by the running statistics.
    Infer,
}

/// Batch-norm state for one layer.
#[derive(Clone, Debug)]
pub struct BatchNorm<F: Float = f32> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub eps: f64,
    pub momentum: f64,
}

impl<F: Float> BatchNorm<F> {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[d]),
            beta: Tensor::zeros(&[d]),
            running_mean: Tensor::zeros(&[d]),
            running_var: Tensor::ones(&[d]),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Blends batch statistics into the running averages.
    pub fn update_running(&mut self, mean: &Tensor<F>, var: &Tensor<F>) {
        let m = F::of(self.momentum);
        let one_m = F::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean.data()) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var.data()) {
            *r = m * *r + one_m * b;
        }
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, returning the output, the
/// normalised input and the per-channel inverse standard deviation.
pub fn normalize<F: Float>(
    x: &Tensor<F>,
    mean: &Tensor<F>,
    var: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let (t, d) = x.expect_matrix("batch norm input")?;
    for (name, v) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        ensure_eq(&format!("batch norm {name} length"), v.len(), d)?;
    }
    let inv_std: Vec<F> = var
        .data()
        .iter()
        .map(|&v| F::one() / (v + F::of(eps)).sqrt())
        .collect();
    let mut xhat = vec![F::zero(); t * d];
    let mut y = vec![F::zero(); t * d];
    for (i, row) in x.data().chunks(d.max(1)).enumerate() {
        for c in 0..d {
            let h = (row[c] - mean.data()[c]) * inv_std[c];
            xhat[i * d + c] = h;
            y[i * d + c] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    Ok((Tensor::new(&[t, d], y)?, Tensor::new(&[t, d], xhat)?, inv_std))
}

/// Batch normalisation of a `[T, D]` sequence over its frames.
pub fn batch_norm<F: Float>(x: &Tensor<F>, bn: &mut BatchNorm<F>, mode: BnMode) -> Result<Tensor<F>> {
    if bn.eps <= 0.0 {
        return Err(config_err("batch norm epsilon must be positive"));
    }
    match mode {
        BnMode::Train => {
            let (mean, var) = batch_statistics(x)?;
            let (y, _, _) = normalize(x, &mean, &var, &bn.gamma, &bn.beta, bn.eps)?;
            bn.update_running(&mean, &var);
            Ok(y)
        }
        BnMode::Infer => {
            check_running_var(&bn.running_var)?;
            let (y, _, _) = normalize(x, &bn.running_mean, &bn.running_var, &bn.gamma, &bn.beta, bn.eps)?;
            Ok(y)
        }
    }
}

pub(crate) fn check_running_var<F: Float>(var: &Tensor<F>) -> Result<()> {
    match var.data().iter().position(|&v| !(v > F::zero())) {
        Some(c) => Err(Error::Numeric(format!(
            "running variance of channel {c} is {} (must be positive)",
            var.data()[c]
        ))),
        None => Ok(()),
    }
}
