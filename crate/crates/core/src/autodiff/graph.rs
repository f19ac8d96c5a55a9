//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] is built once per forward pass. Every operation appends a node
//! that remembers its parents; nodes are stored in creation order, so walking the
//! list backwards is a valid topological traversal for [`Graph::gradients`].

use rand::Rng;

use super::kernels::{self, ConvDims, KERNEL};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Batchnorm variance floor.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of one step on each side, output length equals input length.
    Same,
    /// No padding, output is two steps shorter.
    Valid,
}

impl Padding {
    fn amount(self) -> usize {
        match self {
            Padding::Same => 1,
            Padding::Valid => 0,
        }
    }
}

/// Per-channel statistics of a train-mode batchnorm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used to update running statistics.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv1d { x: Var, w: Var, b: Var, dims: ConvDims },
    ConvT1d { x: Var, w: Var, b: Var, dims: ConvDims },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, layout: (usize, usize, usize), train: bool },
    Relu(Var),
    Dropout { x: Var, mask: Vec<f64>, layout: (usize, usize, usize) },
    Reshape(Var),
    Linear { x: Var, w: Var, b: Var, rows: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
    RowSqDist { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
    Mse { pred: Var, target: Var },
    Rmse { pred: Var, target: Var },
    SliceRows { x: Var, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Interprets a shape as `(batch, channels, time)` where a rank-2 shape is a single sample.
fn sample_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, t] => Ok((1, c, t)),
        [b, c, t] => Ok((b, c, t)),
        _ => Err(Error::shape(op, format!("expected [C, T] or [B, C, T], got {shape:?}"))),
    }
}

/// Interprets a shape as `(batch, channels, time)` where dimension 0 is always the batch.
fn batch_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c] => Ok((b, c, 1)),
        [b, c, t] => Ok((b, c, t)),
        _ => Err(Error::shape(op, format!("expected [B, C] or [B, C, T], got {shape:?}"))),
    }
}

/// `(rows, cols)` of a vector (one row) or matrix.
fn rows_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(Error::shape(op, format!("expected [N] or [B, N], got {shape:?}"))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input; no gradient is computed for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// An input whose gradient is tracked, for checks against finite differences.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Binds a stored parameter. [`Graph::backward`] routes its gradient back to `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push(store.value(id).clone(), Op::Param(id), trainable)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 1D cross-correlation with kernel width 3.
    ///
    /// `x` is `[C_in, T]` or `[B, C_in, T]`, `w` is `[C_out, C_in, 3]`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, t_in) = sample_layout("conv1d", &xs)?;
        let (c_out, wc, k) = match *self.shape(w) {
            [o, c, k] => (o, c, k),
            ref s => return Err(Error::shape("conv1d", format!("weight must be [C_out, C_in, 3], got {s:?}"))),
        };
        if k != KERNEL {
            return Err(Error::shape("conv1d", format!("kernel size must be 3, got {k}")));
        }
        if wc != c_in {
            return Err(Error::shape("conv1d", format!("input has {c_in} channels, weight expects {wc}")));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape("conv1d", format!("bias must be [{c_out}], got {:?}", self.shape(b))));
        }
        let pad = padding.amount();
        if t_in + 2 * pad < KERNEL {
            return Err(Error::shape("conv1d", format!("time length {t_in} too short for {padding:?} padding")));
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            t_in,
            t_out: t_in + 2 * pad - 2,
            pad,
        };
        let y = kernels::conv1d_forward(dims, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = if xs.len() == 2 { vec![c_out, dims.t_out] } else { vec![batch, c_out, dims.t_out] };
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv1d { x, w, b, dims }, rg))
    }

    /// Transposed 1D convolution, `w` is `[C_in, C_out, 3]`.
    ///
    /// With `Valid` the output is two steps longer than the input; with `Same` it has equal length.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, t_in) = sample_layout("conv_transpose1d", &xs)?;
        let (wc, c_out, k) = match *self.shape(w) {
            [c, o, k] => (c, o, k),
            ref s => return Err(Error::shape("conv_transpose1d", format!("weight must be [C_in, C_out, 3], got {s:?}"))),
        };
        if k != KERNEL || wc != c_in {
            return Err(Error::shape(
                "conv_transpose1d",
                format!("input has {c_in} channels, weight is {:?}", self.shape(w)),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape("conv_transpose1d", format!("bias must be [{c_out}]")));
        }
        let pad = padding.amount();
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            t_in,
            t_out: t_in + 2 - 2 * pad,
            pad,
        };
        let y = kernels::conv_t_forward(dims, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = if xs.len() == 2 { vec![c_out, dims.t_out] } else { vec![batch, c_out, dims.t_out] };
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::new(shape, y)?, Op::ConvT1d { x, w, b, dims }, rg))
    }

    /// Train-mode batchnorm: per-channel normalization over batch (and time) followed by
    /// `gamma * xhat + beta`. Returns the batch statistics for running-average updates.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let layout = batch_layout("batchnorm", self.shape(x))?;
        let (bsz, c, t) = layout;
        if bsz < 2 {
            return Err(Error::DegenerateBatch { op: "batchnorm", size: bsz });
        }
        self.check_channel_params("batchnorm", c, gamma, beta)?;
        let n = (bsz * t) as f64;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..bsz {
            for ch in 0..c {
                let row = &xv[(b * c + ch) * t..(b * c + ch + 1) * t];
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for b in 0..bsz {
            for ch in 0..c {
                let row = &xv[(b * c + ch) * t..(b * c + ch + 1) * t];
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1.0)).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (y, xhat) = self.normalize(x, gamma, beta, layout, &mean, &inv_std);
        let rg = self.needs(&[x, gamma, beta]);
        let shape = self.shape(x).to_vec();
        let v = self.push(
            Tensor::new(shape, y)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, layout, train: true },
            rg,
        );
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batchnorm using running statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, running_mean: &[f64], running_var: &[f64]) -> Result<Var> {
        let layout = batch_layout("batchnorm", self.shape(x))?;
        let c = layout.1;
        self.check_channel_params("batchnorm", c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm", "running statistics do not match channel count"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (y, xhat) = self.normalize(x, gamma, beta, layout, running_mean, &inv_std);
        let rg = self.needs(&[x, gamma, beta]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, layout, train: false },
            rg,
        ))
    }

    fn check_channel_params(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(op, format!("scale and shift must be [{c}]")));
        }
        Ok(())
    }

    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        (bsz, c, t): (usize, usize, usize),
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut y = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        for b in 0..bsz {
            for ch in 0..c {
                for i in (b * c + ch) * t..(b * c + ch + 1) * t {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = g[ch] * h + be[ch];
                }
            }
        }
        (y, xhat)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Inverted time-step dropout: each time index of each sample is zeroed across all
    /// channels with probability `p`; survivors are scaled by `1 / (1 - p)`.
    pub fn timestep_dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let layout = sample_layout("timestep_dropout", self.shape(x))?;
        if p == 0.0 {
            return Ok(x);
        }
        let (bsz, c, t) = layout;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..bsz * t)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                for ti in 0..t {
                    y[base + ti] = xv[base + ti] * mask[b * t + ti];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, y)?, Op::Dropout { x, mask, layout }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Affine map `w x + b`; `x` is `[N]` or `[B, N]`, `w` is `[M, N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (rows, n) = rows_layout("linear", &xs)?;
        let (m, wn) = match *self.shape(w) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape("linear", format!("weight must be [M, N], got {s:?}"))),
        };
        if wn != n {
            return Err(Error::shape("linear", format!("input has {n} features, weight expects {wn}")));
        }
        if self.shape(b) != [m] {
            return Err(Error::shape("linear", format!("bias must be [{m}]")));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut y = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xv[r * n..(r + 1) * n];
            for o in 0..m {
                let wr = &wv[o * n..(o + 1) * n];
                y[r * m + o] = bv[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let shape = if xs.len() == 1 { vec![m] } else { vec![rows, m] };
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::new(shape, y)?, Op::Linear { x, w, b, rows }, rg))
    }

    /// Divides each row (or the single vector) by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (rows, n) = rows_layout("l2_normalize", &xs)?;
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(rows);
        let mut y = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm.partial_cmp(&1e-12) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::DegenerateInput {
                    op: "l2_normalize",
                    detail: format!("row {r} has norm {norm:e}"),
                });
            }
            for (o, v) in y[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = v / norm;
            }
            norms.push(norm);
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(xs, y)?, Op::L2Normalize { x, norms }, rg))
    }

    /// Row-wise squared Euclidean distance; `[B, N] x [B, N] -> [B]`, `[N] x [N] -> []`.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s != self.shape(b) {
            return Err(Error::shape("row_sq_dist", format!("{s:?} vs {:?}", self.shape(b))));
        }
        let (rows, n) = rows_layout("row_sq_dist", &s)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let d: Vec<f64> = (0..rows)
            .map(|r| {
                av[r * n..(r + 1) * n]
                    .iter()
                    .zip(&bv[r * n..(r + 1) * n])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum()
            })
            .collect();
        let shape = if s.len() == 1 { vec![] } else { vec![rows] };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, d)?, Op::RowSqDist { a, b }, rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect()).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v < 0.0) {
            return Err(Error::DegenerateInput {
                op: "sqrt",
                detail: "negative input".into(),
            });
        }
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.sqrt()).collect())?;
        let rg = self.needs(&[x]);
        Ok(self.push(v, Op::Sqrt(x), rg))
    }

    fn squared_error_sum(&self, op: &'static str, pred: Var, target: Var) -> Result<(f64, usize)> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::shape(op, format!("prediction has {} values, target {}", p.len(), t.len())));
        }
        let s = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((s, p.len()))
    }

    /// Mean squared error, a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (s, n) = self.squared_error_sum("mse_loss", pred, target)?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mse { pred, target }, rg))
    }

    /// Root mean squared error, a scalar. The gradient at zero error is taken as zero.
    pub fn rmse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (s, n) = self.squared_error_sum("rmse_loss", pred, target)?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar((s / n as f64).sqrt()), Op::Rmse { pred, target }, rg))
    }

    /// Rows `start..start + len` along dimension 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rows = *s.first().ok_or_else(|| Error::shape("slice_rows", "scalar input"))?;
        if start + len > rows {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} out of {rows}", start + len)));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceRows { x, start }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every reachable node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop(&node.op, &node.value, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `d loss / d param` into the gradient buffers of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                if node.requires_grad {
                    store.accumulate_grad(*id, g);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, op: &Op, out: &Tensor, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Input | Op::Param(_) => {}
            Op::Conv1d { x, w, b, dims } => {
                if self.wants(*x) {
                    let gx = kernels::conv1d_backward_input(*dims, gy, self.value(*w).data());
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) || self.wants(*b) {
                    let (gw, gb) = kernels::conv1d_backward_params(*dims, gy, self.value(*x).data());
                    self.accumulate(grads, *w, gw);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::ConvT1d { x, w, b, dims } => {
                if self.wants(*x) {
                    let gx = kernels::conv_t_backward_input(*dims, gy, self.value(*w).data());
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) || self.wants(*b) {
                    let (gw, gb) = kernels::conv_t_backward_params(*dims, gy, self.value(*x).data());
                    self.accumulate(grads, *w, gw);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, layout: (bsz, c, t), train } => {
                let (bsz, c, t) = (*bsz, *c, *t);
                let g = self.value(*gamma).data();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut sum_gxhat = vec![0.0; c];
                let mut sum_gxhat_xhat = vec![0.0; c];
                for b in 0..bsz {
                    for ch in 0..c {
                        for i in (b * c + ch) * t..(b * c + ch + 1) * t {
                            ggamma[ch] += gy[i] * xhat[i];
                            gbeta[ch] += gy[i];
                            sum_gxhat[ch] += gy[i] * g[ch];
                            sum_gxhat_xhat[ch] += gy[i] * g[ch] * xhat[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let n = (bsz * t) as f64;
                    let mut gx = vec![0.0; gy.len()];
                    for b in 0..bsz {
                        for ch in 0..c {
                            for i in (b * c + ch) * t..(b * c + ch + 1) * t {
                                let gxh = gy[i] * g[ch];
                                gx[i] = if *train {
                                    inv_std[ch] / n * (n * gxh - sum_gxhat[ch] - xhat[i] * sum_gxhat_xhat[ch])
                                } else {
                                    gxh * inv_std[ch]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, ggamma);
                self.accumulate(grads, *beta, gbeta);
            }
            Op::Relu(x) => {
                let gx = out.data().iter().zip(gy).map(|(&y, &g)| if y > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout { x, mask, layout: (bsz, c, t) } => {
                let mut gx = vec![0.0; gy.len()];
                for b in 0..*bsz {
                    for ch in 0..*c {
                        let base = (b * c + ch) * t;
                        for ti in 0..*t {
                            gx[base + ti] = gy[base + ti] * mask[b * t + ti];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gy.to_vec()),
            Op::Linear { x, w, b, rows } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let m = self.shape(*b)[0];
                let n = wv.len() / m;
                if self.wants(*x) {
                    let mut gx = vec![0.0; rows * n];
                    for r in 0..*rows {
                        let gxr = &mut gx[r * n..(r + 1) * n];
                        for o in 0..m {
                            let gv = gy[r * m + o];
                            for (a, wv) in gxr.iter_mut().zip(&wv[o * n..(o + 1) * n]) {
                                *a += gv * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; m * n];
                    for r in 0..*rows {
                        let xr = &xv[r * n..(r + 1) * n];
                        for o in 0..m {
                            let gv = gy[r * m + o];
                            for (a, xv) in gw[o * n..(o + 1) * n].iter_mut().zip(xr) {
                                *a += gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                let mut gb = vec![0.0; m];
                for r in 0..*rows {
                    for o in 0..m {
                        gb[o] += gy[r * m + o];
                    }
                }
                self.accumulate(grads, *b, gb);
            }
            Op::L2Normalize { x, norms } => {
                let y = out.data();
                let n = y.len() / norms.len();
                let mut gx = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &gy[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        gx[r * n + i] = (gr[i] - yr[i] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowSqDist { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = av.len() / gy.len();
                let ga: Vec<f64> = (0..av.len()).map(|i| 2.0 * (av[i] - bv[i]) * gy[i / n]).collect();
                let gb = ga.iter().map(|v| -v).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, gy.iter().zip(bv).map(|(g, y)| g * y).collect());
                self.accumulate(grads, *b, gy.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, gy.iter().map(|g| g * c).collect()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gy[0] / n as f64; n]);
            }
            Op::Sqrt(x) => {
                let gx = out
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&s, &g)| if s > 0.0 { g * 0.5 / s } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let k = 2.0 * gy[0] / p.len() as f64;
                let gp: Vec<f64> = p.iter().zip(t).map(|(a, b)| k * (a - b)).collect();
                let gt = gp.iter().map(|v| -v).collect();
                self.accumulate(grads, *pred, gp);
                self.accumulate(grads, *target, gt);
            }
            Op::Rmse { pred, target } => {
                let s = out.item();
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let k = if s > 0.0 { gy[0] / (p.len() as f64 * s) } else { 0.0 };
                let gp: Vec<f64> = p.iter().zip(t).map(|(a, b)| k * (a - b)).collect();
                let gt = gp.iter().map(|v| -v).collect();
                self.accumulate(grads, *pred, gp);
                self.accumulate(grads, *target, gt);
            }
            Op::SliceRows { x, start } => {
                let xt = self.value(*x);
                let inner: usize = xt.shape()[1..].iter().product();
                let mut gx = vec![0.0; xt.len()];
                gx[start * inner..start * inner + gy.len()].copy_from_slice(gy);
                self.accumulate(grads, *x, gx);
            }
        }
    }
}
