//! Define-by-run reverse-mode differentiation.
//!
//! A [`GradTape`] records every operation applied to its [`Var`]s together
//! with the forward value. [`GradTape::backward`] walks the record from the
//! newest node to the oldest (creation order is a topological order), visiting
//! each node once. One tape belongs to one utterance; tapes are never shared
//! between threads.

use std::collections::BTreeMap;

use crate::error::{config_err, ensure_eq, Error, Result};
use crate::kernels::{self, sigmoid, swish_grad, swish_scalar};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Swish,
    Sigmoid,
    Tanh,
    Relu,
}

enum Op<F: Float> {
    Leaf { param: Option<ParamId> },
    DepthwiseConv { x: Var, kernel: Var, bias: Option<Var>, stride: usize },
    Linear { x: Var, weight: Var, bias: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<F>, inv_std: Vec<F>, batch_stats: bool },
    Unary { x: Var, kind: Unary },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulRows { x: Var, gate: Var },
    Scale { x: Var, factor: F },
    Sum { x: Var },
    MeanTime { x: Var },
    WindowMean { x: Var, window: usize },
    OuterAdd { a: Var, b: Var },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    StackRows { parts: Vec<Var> },
    Reshape { x: Var },
    Subsample { x: Var, stride: usize },
    ScalarFn { x: Var, grad: Tensor<F> },
}

struct Node<F: Float> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<F: Float> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

pub struct GradTape<F: Float = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for GradTape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Centred window `[lo, hi]` of `window` frames around `t`, clipped to the
/// sequence.
pub fn window_bounds(t: usize, window: usize, len: usize) -> (usize, usize) {
    let back = (window - 1) / 2;
    let ahead = window - 1 - back;
    (t.saturating_sub(back), (t + ahead).min(len - 1))
}

impl<F: Float> GradTape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Records an input that gradients may be requested for.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// Records a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn depthwise_conv(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let y = kernels::depthwise_conv1d(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        Ok(self.push(y, Op::DepthwiseConv { x, kernel, bias, stride }))
    }

    /// `x W + b` over the rows of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = kernels::conv1d_pointwise(self.value(x), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Linear { x, weight, bias }))
    }

    /// Batch norm over the frames of `x` using the batch's own statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<F>)> {
        let (mean, var) = kernels::batch_statistics(self.value(x))?;
        let (y, xhat, inv_std) =
            kernels::normalize(self.value(x), &mean, &var, self.value(gamma), self.value(beta), eps)?;
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<F>,
        running_var: &Tensor<F>,
        eps: f64,
    ) -> Result<Var> {
        kernels::check_running_var(running_var)?;
        let (y, xhat, inv_std) =
            kernels::normalize(self.value(x), running_mean, running_var, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(F) -> F = match kind {
            Unary::Swish => swish_scalar,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => F::tanh,
            Unary::Relu => |v: F| v.max(F::zero()),
        };
        let y = self.value(x).map(f);
        self.push(y, Op::Unary { x, kind })
    }

    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Swish)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure_eq("mul shapes", va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
        let y = Tensor::new(va.shape(), data)?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    /// Multiplies every row of `x[T, D]` by the single row `gate[1, D]`.
    pub fn mul_rows(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (vx, vg) = (self.value(x), self.value(gate));
        let d = vx.cols();
        ensure_eq("row gate length", vg.len(), d)?;
        let g = vg.data();
        let mut y = vx.clone();
        for row in y.data_mut().chunks_mut(d.max(1)) {
            for (o, &gv) in row.iter_mut().zip(g) {
                *o *= gv;
            }
        }
        Ok(self.push(y, Op::MulRows { x, gate }))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x })
    }

    /// Mean over frames: `[T, D] -> [1, D]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (t, d) = vx.expect_matrix("mean over time")?;
        if t == 0 {
            return Err(Error::EmptyInput("mean over zero frames".into()));
        }
        let n = F::of(t as f64);
        let mut m = kernels::sum_rows(vx).reshape(&[1, d])?;
        for v in m.data_mut() {
            *v /= n;
        }
        Ok(self.push(m, Op::MeanTime { x }))
    }

    /// Mean over a centred window of `window` frames around every frame,
    /// clipped at the sequence edges: `[T, D] -> [T, D]`.
    ///
    /// Each window is summed in increasing frame order and divided by its
    /// frame count, so a window spanning the whole sequence reproduces
    /// [`GradTape::mean_time`] exactly.
    pub fn window_mean(&mut self, x: Var, window: usize) -> Result<Var> {
        if window < 1 {
            return Err(config_err("pooling window must be >= 1"));
        }
        let vx = self.value(x);
        let (t, d) = vx.expect_matrix("windowed mean")?;
        if t == 0 {
            return Err(Error::EmptyInput("windowed mean over zero frames".into()));
        }
        let xs = vx.data();
        let mut out = vec![F::zero(); t * d];
        for i in 0..t {
            let (lo, hi) = window_bounds(i, window, t);
            let orow = &mut out[i * d..(i + 1) * d];
            for s in lo..=hi {
                for (o, &v) in orow.iter_mut().zip(&xs[s * d..(s + 1) * d]) {
                    *o += v;
                }
            }
            let n = F::of((hi - lo + 1) as f64);
            for o in orow.iter_mut() {
                *o /= n;
            }
        }
        let y = Tensor::new(&[t, d], out)?;
        Ok(self.push(y, Op::WindowMean { x, window }))
    }

    /// Broadcast sum of `a[T, J]` and `b[U, J]` into `[T * U, J]`, row
    /// `t * U + u` holding `a[t] + b[u]`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (t, j) = va.expect_matrix("outer add lhs")?;
        let (u, jb) = vb.expect_matrix("outer add rhs")?;
        ensure_eq("outer add width", j, jb)?;
        let mut out = Vec::with_capacity(t * u * j);
        for ti in 0..t {
            let ar = va.row(ti);
            for ui in 0..u {
                out.extend(ar.iter().zip(vb.row(ui)).map(|(&p, &q)| p + q));
            }
        }
        let y = Tensor::new(&[t * u, j], out)?;
        Ok(self.push(y, Op::OuterAdd { a, b }))
    }

    /// Row lookup: `table[V, E]` indexed by `ids` gives `[ids.len(), E]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, e) = vt.expect_matrix("embedding table")?;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(config_err(format!("embedding index {id} out of range for {v} rows")));
            }
            out.extend_from_slice(vt.row(id));
        }
        let y = Tensor::new(&[ids.len(), e], out)?;
        Ok(self.push(
            y,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.expect_matrix("column slice")?;
        if start + len > n {
            return Err(config_err(format!("column slice {start}..{} out of {n}", start + len)));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let y = Tensor::new(&[m, len], out)?;
        Ok(self.push(y, Op::SliceCols { x, start }))
    }

    /// Concatenates matrices along the row axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| config_err("stack of zero tensors"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let vp = self.value(p);
            let (r, c) = vp.expect_matrix("stacked part")?;
            ensure_eq("stacked width", c, n)?;
            rows += r;
            out.extend_from_slice(vp.data());
        }
        let y = Tensor::new(&[rows, n], out)?;
        Ok(self.push(
            y,
            Op::StackRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Keeps frames `0, stride, 2 * stride, ...`; the frame grid of a strided
    /// convolution.
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(config_err("stride must be >= 1"));
        }
        let vx = self.value(x);
        let (t, d) = vx.expect_matrix("subsample")?;
        let t_out = kernels::conv_output_len(t, stride);
        let mut out = Vec::with_capacity(t_out * d);
        for i in 0..t_out {
            out.extend_from_slice(vx.row(i * stride));
        }
        let y = Tensor::new(&[t_out, d], out)?;
        Ok(self.push(y, Op::Subsample { x, stride }))
    }

    /// Records a scalar function of `x` whose gradient was computed
    /// alongside its value (the transducer loss uses this).
    pub fn scalar_fn(&mut self, x: Var, value: F, grad: Tensor<F>) -> Result<Var> {
        ensure_eq("scalar function gradient shape", grad.shape(), self.value(x).shape())?;
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, grad }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params: BTreeMap<ParamId, Tensor<F>> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                let g = grads[idx].clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        params.insert(id, g);
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            nodes: grads,
            shapes,
            params,
        })
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor<F>>], v: Var, delta: Tensor<F>| -> Result<()> {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::DepthwiseConv { x, kernel, bias, stride } => {
                let (dx, dk, db) =
                    kernels::depthwise_conv1d_backward(self.value(*x), self.value(*kernel), *stride, g)?;
                acc(grads, *x, dx)?;
                acc(grads, *kernel, dk)?;
                if let Some(b) = bias {
                    acc(grads, *b, db.reshape(self.value(*b).shape())?)?;
                }
            }
            Op::Linear { x, weight, bias } => {
                acc(grads, *x, kernels::matmul_nt(g, self.value(*weight))?)?;
                acc(grads, *weight, kernels::matmul_tn(self.value(*x), g)?)?;
                if let Some(b) = bias {
                    acc(grads, *b, kernels::sum_rows(g).reshape(self.value(*b).shape())?)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (t, d) = g.expect_matrix("batch norm gradient")?;
                let gd = g.data();
                let hd = xhat.data();
                let mut dgamma = vec![F::zero(); d];
                let mut dbeta = vec![F::zero(); d];
                for i in 0..t {
                    for c in 0..d {
                        dgamma[c] += gd[i * d + c] * hd[i * d + c];
                        dbeta[c] += gd[i * d + c];
                    }
                }
                let gam = self.value(*gamma).data();
                let mut dx = vec![F::zero(); t * d];
                if *batch_stats {
                    let n = F::of(t as f64);
                    for i in 0..t {
                        for c in 0..d {
                            let k = gam[c] * inv_std[c] / n;
                            dx[i * d + c] = k * (n * gd[i * d + c] - dbeta[c] - hd[i * d + c] * dgamma[c]);
                        }
                    }
                } else {
                    for i in 0..t {
                        for c in 0..d {
                            dx[i * d + c] = gd[i * d + c] * gam[c] * inv_std[c];
                        }
                    }
                }
                acc(grads, *x, Tensor::new(&[t, d], dx)?)?;
                acc(grads, *gamma, Tensor::new(self.value(*gamma).shape(), dgamma)?)?;
                acc(grads, *beta, Tensor::new(self.value(*beta).shape(), dbeta)?)?;
            }
            Op::Unary { x, kind } => {
                let xs = self.value(*x).data();
                let ys = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| {
                        let local = match kind {
                            Unary::Swish => swish_grad(xs[i]),
                            Unary::Sigmoid => ys[i] * (F::one() - ys[i]),
                            Unary::Tanh => F::one() - ys[i] * ys[i],
                            Unary::Relu => {
                                if xs[i] > F::zero() {
                                    F::one()
                                } else {
                                    F::zero()
                                }
                            }
                        };
                        gv * local
                    })
                    .collect();
                acc(grads, *x, Tensor::new(g.shape(), data)?)?;
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
                let db = g.data().iter().zip(va.data()).map(|(&p, &q)| p * q).collect();
                acc(grads, *a, Tensor::new(g.shape(), da)?)?;
                acc(grads, *b, Tensor::new(g.shape(), db)?)?;
            }
            Op::MulRows { x, gate } => {
                let (vx, vg) = (self.value(*x), self.value(*gate));
                let d = vx.cols().max(1);
                let gate_v = vg.data();
                let mut dx = g.clone();
                let mut dgate = vec![F::zero(); gate_v.len()];
                for (row, xrow) in dx.data_mut().chunks_mut(d).zip(vx.data().chunks(d)) {
                    for c in 0..row.len() {
                        dgate[c] += row[c] * xrow[c];
                        row[c] *= gate_v[c];
                    }
                }
                acc(grads, *x, dx)?;
                acc(grads, *gate, Tensor::new(vg.shape(), dgate)?)?;
            }
            Op::Scale { x, factor } => {
                acc(grads, *x, g.map(|v| v * *factor))?;
            }
            Op::Sum { x } => {
                let s = g.data()[0];
                acc(grads, *x, Tensor::full(self.value(*x).shape(), s))?;
            }
            Op::MeanTime { x } => {
                let vx = self.value(*x);
                let t = vx.rows();
                let n = F::of(t as f64);
                let row: Vec<F> = g.data().iter().map(|&v| v / n).collect();
                let mut dx = Vec::with_capacity(vx.len());
                for _ in 0..t {
                    dx.extend_from_slice(&row);
                }
                acc(grads, *x, Tensor::new(vx.shape(), dx)?)?;
            }
            Op::WindowMean { x, window } => {
                let vx = self.value(*x);
                let (t, d) = vx.expect_matrix("windowed mean")?;
                let mut dx = vec![F::zero(); t * d];
                for i in 0..t {
                    let (lo, hi) = window_bounds(i, *window, t);
                    let n = F::of((hi - lo + 1) as f64);
                    let grow = g.row(i);
                    for s in lo..=hi {
                        for c in 0..d {
                            dx[s * d + c] += grow[c] / n;
                        }
                    }
                }
                acc(grads, *x, Tensor::new(&[t, d], dx)?)?;
            }
            Op::OuterAdd { a, b } => {
                let (t, j) = self.value(*a).expect_matrix("outer add")?;
                let u = self.value(*b).rows();
                let mut da = vec![F::zero(); t * j];
                let mut db = vec![F::zero(); u * j];
                for ti in 0..t {
                    for ui in 0..u {
                        let grow = g.row(ti * u + ui);
                        for c in 0..j {
                            da[ti * j + c] += grow[c];
                            db[ui * j + c] += grow[c];
                        }
                    }
                }
                acc(grads, *a, Tensor::new(&[t, j], da)?)?;
                acc(grads, *b, Tensor::new(&[u, j], db)?)?;
            }
            Op::Gather { table, ids } => {
                let vt = self.value(*table);
                let e = vt.cols();
                let mut dt = Tensor::zeros(vt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let src = g.row(r);
                    for (o, &v) in dt.row_mut(id).iter_mut().zip(src) {
                        *o += v;
                    }
                }
                debug_assert_eq!(dt.cols(), e);
                acc(grads, *table, dt)?;
            }
            Op::SliceCols { x, start } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.shape());
                let len = g.cols();
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + len].copy_from_slice(g.row(r));
                }
                acc(grads, *x, dx)?;
            }
            Op::StackRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let n = vp.len();
                    acc(grads, p, Tensor::new(vp.shape(), g.data()[offset..offset + n].to_vec())?)?;
                    offset += n;
                }
            }
            Op::Reshape { x } => {
                acc(grads, *x, g.clone().reshape(self.value(*x).shape())?)?;
            }
            Op::Subsample { x, stride } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for i in 0..g.rows() {
                    dx.row_mut(i * stride).copy_from_slice(g.row(i));
                }
                acc(grads, *x, dx)?;
            }
            Op::ScalarFn { x, grad } => {
                let s = g.data()[0];
                acc(grads, *x, grad.map(|v| v * s))?;
            }
        }
        Ok(())
    }
}

/// Result of a reverse pass.
pub struct Gradients<F: Float> {
    nodes: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<ParamId, Tensor<F>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient with respect to any recorded value; zeros if the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<F> {
        self.nodes[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Accumulated gradient of a stored parameter, `None` if the parameter
    /// was never placed on the tape.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<F>> {
        self.params
    }
}
