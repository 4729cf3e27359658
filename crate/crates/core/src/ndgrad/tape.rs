//! Operation tape and the primitive differentiable ops.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes in reverse and accumulates adjoints, so the node list is always in
//! topological order by construction.
//!
//! Batched layouts: `conv1d` takes `[R, L]` or `[B, R, L]`, `dense` takes
//! `[n]` or `[B, n]`. Pooling and upsampling act on the last axis.

use std::f64::consts::PI;

use super::{GradError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        padding: usize,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    LeakyRelu {
        input: Var,
        alpha: f64,
    },
    AvgPool {
        input: Var,
        factor: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Reshape {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    BceLogit {
        input: Var,
        target_real: bool,
    },
    GaussianNll {
        mean: Var,
        code: Tensor,
        sigma: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for one reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`]. Only leaf gradients are kept.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Input, constant or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, GradError> {
        self.push(value, Op::Leaf, "leaf")
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, GradError> {
        if !value.is_finite() {
            return Err(GradError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Stride-1 1D convolution with symmetric zero padding.
    ///
    /// `out[k, t] = bias[k] + sum_r sum_w input[r, t + w - padding] * kernel[k, r, w]`
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        padding: usize,
    ) -> Result<Var, GradError> {
        let x = self.value(input);
        let kw = self.value(kernel);
        let b = self.value(bias);
        let geom = ConvGeom::new(x.shape(), kw.shape(), b.shape(), padding)?;
        let mut out = vec![0.0; geom.batch * geom.k_out * geom.l_out];
        conv1d_forward(&geom, x.data(), kw.data(), b.data(), &mut out);
        let value = Tensor::new(geom.out_shape(x.rank()), out)?;
        self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            },
            "conv1d",
        )
    }

    /// `weights * input + bias`, row-wise for batched input.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var, GradError> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let (batch, n) = dense_input_dims(x.shape())?;
        if w.rank() != 2 || w.shape()[1] != n {
            return Err(GradError::Shape(format!(
                "dense: weights {:?} do not accept input {:?}",
                w.shape(),
                x.shape()
            )));
        }
        let m = w.shape()[0];
        if b.shape() != [m] {
            return Err(GradError::Shape(format!(
                "dense: bias {:?} should be [{m}]",
                b.shape()
            )));
        }
        let mut out = vec![0.0; batch * m];
        for s in 0..batch {
            let xs = &x.data()[s * n..(s + 1) * n];
            for (j, o) in out[s * m..(s + 1) * m].iter_mut().enumerate() {
                let row = &w.data()[j * n..(j + 1) * n];
                *o = b.data()[j] + dot(row, xs);
            }
        }
        let shape = if x.rank() == 1 { vec![m] } else { vec![batch, m] };
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
            "dense",
        )
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var, GradError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(GradError::Invalid(format!(
                "leaky_relu slope must lie in (0, 1), got {alpha}"
            )));
        }
        let x = self.value(input);
        let data = x.data().iter().map(|&v| (alpha * v).max(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::LeakyRelu { input, alpha }, "leaky_relu")
    }

    /// Average pooling over non-overlapping windows of the last axis; a
    /// trailing remainder shorter than `factor` is dropped.
    pub fn avg_pool(&mut self, input: Var, factor: usize) -> Result<Var, GradError> {
        let x = self.value(input);
        let len = *x.shape().last().unwrap();
        if factor == 0 || len < factor {
            return Err(GradError::Shape(format!(
                "avg_pool: factor {factor} does not fit length {len}"
            )));
        }
        let out_len = len / factor;
        let rows = x.len() / len;
        let mut out = Vec::with_capacity(rows * out_len);
        for row in x.data().chunks_exact(len) {
            for t in 0..out_len {
                let window = &row[t * factor..(t + 1) * factor];
                out.push(window.iter().sum::<f64>() / factor as f64);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::AvgPool { input, factor }, "avg_pool")
    }

    /// Nearest-neighbour upsampling of the last axis.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var, GradError> {
        if factor == 0 {
            return Err(GradError::Invalid("upsample factor must be positive".into()));
        }
        let x = self.value(input);
        let len = *x.shape().last().unwrap();
        let mut out = Vec::with_capacity(x.len() * factor);
        for row in x.data().chunks_exact(len) {
            for &v in row {
                out.extend(std::iter::repeat_n(v, factor));
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len * factor;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Upsample { input, factor }, "upsample")
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, GradError> {
        let value = self.value(input).clone().reshaped(shape)?;
        self.push(value, Op::Reshape { input }, "reshape")
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, GradError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(GradError::Shape(format!(
                "add: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.push(value, Op::Add { lhs, rhs }, "add")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var, GradError> {
        let mut value = self.value(input).clone();
        value.scale_in_place(factor);
        self.push(value, Op::Scale { input, factor }, "scale")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, GradError> {
        let total = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { input }, "sum")
    }

    pub fn mean(&mut self, input: Var) -> Result<Var, GradError> {
        let n = self.value(input).len() as f64;
        let total = self.sum(input)?;
        self.scale(total, 1.0 / n)
    }

    /// Binary cross-entropy on logits, averaged over all elements.
    ///
    /// Evaluated as a softplus so that large logits never overflow:
    /// real targets give `softplus(-x) = -ln sigmoid(x)`, fake targets give
    /// `softplus(x) = -ln(1 - sigmoid(x))`.
    pub fn bce_logit_loss(&mut self, input: Var, target_real: bool) -> Result<Var, GradError> {
        let x = self.value(input);
        let n = x.len() as f64;
        let total: f64 = x
            .data()
            .iter()
            .map(|&v| softplus(if target_real { -v } else { v }))
            .sum();
        self.push(
            Tensor::scalar(total / n),
            Op::BceLogit { input, target_real },
            "bce_logit_loss",
        )
    }

    /// Negative log density of `code` under `N(mean, sigma^2)`, summed over the
    /// code axis and averaged over the batch axis when present.
    pub fn gaussian_nll(&mut self, mean: Var, code: Tensor, sigma: f64) -> Result<Var, GradError> {
        if !(sigma > 0.0) {
            return Err(GradError::Invalid(format!(
                "gaussian_nll sigma must be positive, got {sigma}"
            )));
        }
        let mu = self.value(mean);
        if mu.shape() != code.shape() || mu.rank() > 2 {
            return Err(GradError::Shape(format!(
                "gaussian_nll: mean {:?} vs code {:?}",
                mu.shape(),
                code.shape()
            )));
        }
        let batch = if mu.rank() == 2 { mu.shape()[0] } else { 1 };
        let total = gaussian_nll(mu.data(), code.data(), sigma);
        self.push(
            Tensor::scalar(total / batch as f64),
            Op::GaussianNll { mean, code, sigma },
            "gaussian_nll",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(GradError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(upstream);
                }
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    padding,
                } => {
                    let x = self.value(*input);
                    let kw = self.value(*kernel);
                    let b = self.value(*bias);
                    let geom = ConvGeom::new(x.shape(), kw.shape(), b.shape(), *padding)?;
                    let mut dx = vec![0.0; x.len()];
                    let mut dk = vec![0.0; kw.len()];
                    let mut db = vec![0.0; b.len()];
                    conv1d_backward(
                        &geom,
                        x.data(),
                        kw.data(),
                        upstream.data(),
                        &mut dx,
                        &mut dk,
                        &mut db,
                    );
                    accumulate(&mut grads, *input, x.shape(), dx);
                    accumulate(&mut grads, *kernel, kw.shape(), dk);
                    accumulate(&mut grads, *bias, b.shape(), db);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weights);
                    let (batch, n) = dense_input_dims(x.shape())?;
                    let m = w.shape()[0];
                    let g = upstream.data();
                    let mut dx = vec![0.0; x.len()];
                    let mut dw = vec![0.0; w.len()];
                    let mut db = vec![0.0; m];
                    for s in 0..batch {
                        let xs = &x.data()[s * n..(s + 1) * n];
                        let dxs = &mut dx[s * n..(s + 1) * n];
                        for j in 0..m {
                            let gj = g[s * m + j];
                            if gj == 0.0 {
                                continue;
                            }
                            db[j] += gj;
                            let row = &w.data()[j * n..(j + 1) * n];
                            let drow = &mut dw[j * n..(j + 1) * n];
                            for i in 0..n {
                                drow[i] += gj * xs[i];
                                dxs[i] += gj * row[i];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, x.shape(), dx);
                    accumulate(&mut grads, *weights, w.shape(), dw);
                    accumulate(&mut grads, *bias, &[m], db);
                }
                Op::LeakyRelu { input, alpha } => {
                    let x = self.value(*input);
                    let dx = x
                        .data()
                        .iter()
                        .zip(upstream.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { alpha * g })
                        .collect();
                    accumulate(&mut grads, *input, x.shape(), dx);
                }
                Op::AvgPool { input, factor } => {
                    let x = self.value(*input);
                    let len = *x.shape().last().unwrap();
                    let out_len = len / factor;
                    let mut dx = vec![0.0; x.len()];
                    let inv = 1.0 / *factor as f64;
                    for (row, g) in dx
                        .chunks_exact_mut(len)
                        .zip(upstream.data().chunks_exact(out_len))
                    {
                        for (t, &gt) in g.iter().enumerate() {
                            for v in &mut row[t * factor..(t + 1) * factor] {
                                *v = gt * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, x.shape(), dx);
                }
                Op::Upsample { input, factor } => {
                    let x = self.value(*input);
                    let dx = upstream
                        .data()
                        .chunks_exact(*factor)
                        .map(|c| c.iter().sum())
                        .collect();
                    accumulate(&mut grads, *input, x.shape(), dx);
                }
                Op::Reshape { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *input, &shape, upstream.into_data());
                }
                Op::Add { lhs, rhs } => {
                    let shape = upstream.shape().to_vec();
                    accumulate(&mut grads, *lhs, &shape, upstream.data().to_vec());
                    accumulate(&mut grads, *rhs, &shape, upstream.into_data());
                }
                Op::Scale { input, factor } => {
                    let shape = upstream.shape().to_vec();
                    let dx = upstream.data().iter().map(|g| g * factor).collect();
                    accumulate(&mut grads, *input, &shape, dx);
                }
                Op::Sum { input } => {
                    let x = self.value(*input);
                    let g = upstream.data()[0];
                    accumulate(&mut grads, *input, x.shape(), vec![g; x.len()]);
                }
                Op::BceLogit { input, target_real } => {
                    let x = self.value(*input);
                    let scale = upstream.data()[0] / x.len() as f64;
                    let dx = x
                        .data()
                        .iter()
                        .map(|&v| {
                            let p = sigmoid(v);
                            scale * if *target_real { p - 1.0 } else { p }
                        })
                        .collect();
                    accumulate(&mut grads, *input, x.shape(), dx);
                }
                Op::GaussianNll { mean, code, sigma } => {
                    let mu = self.value(*mean);
                    let batch = if mu.rank() == 2 { mu.shape()[0] } else { 1 };
                    let scale = upstream.data()[0] / (batch as f64 * sigma * sigma);
                    let dmu = mu
                        .data()
                        .iter()
                        .zip(code.data())
                        .map(|(&m, &c)| scale * (m - c))
                        .collect();
                    accumulate(&mut grads, *mean, mu.shape(), dmu);
                }
            }
        }

        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[var.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape matches value"));
        }
    }
}

fn dense_input_dims(shape: &[usize]) -> Result<(usize, usize), GradError> {
    match *shape {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(GradError::Shape(format!(
            "dense input must be [n] or [B, n], got {shape:?}"
        ))),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `-sum_j ln N(code_j; mean_j, sigma^2)`.
pub fn gaussian_nll(mean: &[f64], code: &[f64], sigma: f64) -> f64 {
    let var = sigma * sigma;
    let log_norm = 0.5 * (2.0 * PI * var).ln();
    mean.iter()
        .zip(code)
        .map(|(m, c)| log_norm + (c - m) * (c - m) / (2.0 * var))
        .sum()
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    r_in: usize,
    len: usize,
    k_out: usize,
    width: usize,
    padding: usize,
    l_out: usize,
}

impl ConvGeom {
    fn new(
        x: &[usize],
        kernel: &[usize],
        bias: &[usize],
        padding: usize,
    ) -> Result<Self, GradError> {
        let (batch, r_in, len) = match *x {
            [r, l] => (1, r, l),
            [b, r, l] => (b, r, l),
            _ => {
                return Err(GradError::Shape(format!(
                    "conv1d input must be [R, L] or [B, R, L], got {x:?}"
                )))
            }
        };
        let [k_out, kr, width] = *kernel else {
            return Err(GradError::Shape(format!(
                "conv1d kernel must be [K, R, W], got {kernel:?}"
            )));
        };
        if kr != r_in {
            return Err(GradError::Shape(format!(
                "conv1d kernel expects {kr} input channels, input has {r_in}"
            )));
        }
        if bias != [k_out] {
            return Err(GradError::Shape(format!(
                "conv1d bias {bias:?} should be [{k_out}]"
            )));
        }
        if len + 2 * padding < width {
            return Err(GradError::Shape(format!(
                "conv1d kernel width {width} exceeds padded length {}",
                len + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            r_in,
            len,
            k_out,
            width,
            padding,
            l_out: len + 2 * padding - width + 1,
        })
    }

    fn out_shape(&self, in_rank: usize) -> Vec<usize> {
        if in_rank == 2 {
            vec![self.k_out, self.l_out]
        } else {
            vec![self.batch, self.k_out, self.l_out]
        }
    }

    /// Output positions `t` for which `t + w - padding` lands inside the input.
    #[inline]
    fn valid_range(&self, w: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(w);
        let hi = (self.len + self.padding).saturating_sub(w).min(self.l_out);
        (lo, hi.max(lo))
    }
}

fn conv1d_forward(g: &ConvGeom, x: &[f64], kernel: &[f64], bias: &[f64], out: &mut [f64]) {
    for b in 0..g.batch {
        for k in 0..g.k_out {
            let o = &mut out[(b * g.k_out + k) * g.l_out..][..g.l_out];
            o.fill(bias[k]);
            for r in 0..g.r_in {
                let xr = &x[(b * g.r_in + r) * g.len..][..g.len];
                let kr = &kernel[(k * g.r_in + r) * g.width..][..g.width];
                for (w, &kv) in kr.iter().enumerate() {
                    let (lo, hi) = g.valid_range(w);
                    let shift = lo + w - g.padding;
                    for (ot, xt) in o[lo..hi].iter_mut().zip(&xr[shift..]) {
                        *ot += kv * xt;
                    }
                }
            }
        }
    }
}

fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    kernel: &[f64],
    upstream: &[f64],
    dx: &mut [f64],
    dk: &mut [f64],
    db: &mut [f64],
) {
    for b in 0..g.batch {
        for k in 0..g.k_out {
            let go = &upstream[(b * g.k_out + k) * g.l_out..][..g.l_out];
            db[k] += go.iter().sum::<f64>();
            for r in 0..g.r_in {
                let base = (b * g.r_in + r) * g.len;
                let kbase = (k * g.r_in + r) * g.width;
                for w in 0..g.width {
                    let (lo, hi) = g.valid_range(w);
                    let shift = lo + w - g.padding;
                    let gs = &go[lo..hi];
                    let xs = &x[base + shift..][..gs.len()];
                    dk[kbase + w] += dot(gs, xs);
                    let kv = kernel[kbase + w];
                    for (d, gt) in dx[base + shift..][..gs.len()].iter_mut().zip(gs) {
                        *d += kv * gt;
                    }
                }
            }
        }
    }
}
