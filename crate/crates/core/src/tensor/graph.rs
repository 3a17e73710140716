use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics carried by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry },
    ConvTranspose2x2 { input: Var, weight: Var, bias: Option<Var> },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    Dropout { input: Var, scale: Vec<f64> },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Reshape(Var),
    ConcatChannels(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Dice { pred: Var, target: Vec<f64>, smooth: f64 },
    Mse { pred: Var, target: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. }
            | Op::ConvTranspose2x2 { input, weight, bias }
            | Op::Linear { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(*bias);
                v
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::MaxPool2 { input, .. } | Op::Dropout { input, .. } => vec![*input],
            Op::Relu(a) | Op::Sigmoid(a) | Op::Reshape(a) | Op::Scale(a, _) | Op::Sum(a) => vec![*a],
            Op::Dice { pred, .. } | Op::Mse { pred, .. } => vec![*pred],
            Op::ConcatChannels(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order: an op can
/// only refer to nodes that already exist.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Records a tensor as an input; it is differentiated iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push_raw(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_raw(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Value of `v` with its gradient copied into the tensor's gradient slot.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let mut t = node.value.clone();
        if let Some(g) = &node.grad {
            t.accumulate_grad(g).expect("gradient length matches value");
        }
        t
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: &[usize], data: Vec<f64>, op: Op, name: &str) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        value.check_finite(name)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims4(&self, v: Var, what: &str) -> Result<[usize; 4]> {
        let s = self.shape(v);
        ensure!(s.len() == 4, Shape, "{what} expects NCHW input, got {s:?}");
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            ensure!(
                self.shape(b) == [geom.out_channels],
                Shape,
                "conv2d bias shape {:?}, expected [{}]",
                self.shape(b),
                geom.out_channels
            );
        }
        let out = kernels::conv2d_forward(&geom, self.data(input), self.data(weight), bias.map(|b| self.data(b)));
        let shape = [geom.batch, geom.out_channels, geom.out_height, geom.out_width];
        self.push(&shape, out, Op::Conv2d { input, weight, bias, geom }, "conv2d")
    }

    /// Stride-2 transposed convolution with a `[C,K,2,2]` kernel; doubles H and W.
    pub fn conv_transpose2x2(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let dims = self.dims4(input, "conv_transpose2x2")?;
        let ws = self.shape(weight).to_vec();
        ensure!(
            ws.len() == 4 && ws[0] == dims[1] && ws[2] == 2 && ws[3] == 2,
            Shape,
            "transposed conv weight {ws:?} incompatible with input {dims:?}"
        );
        let k = ws[1];
        if let Some(b) = bias {
            ensure!(self.shape(b) == [k], Shape, "transposed conv bias must be [{k}]");
        }
        let out = kernels::conv_transpose2x2_forward(self.data(input), dims, self.data(weight), k, bias.map(|b| self.data(b)));
        let shape = [dims[0], k, 2 * dims[2], 2 * dims[3]];
        self.push(&shape, out, Op::ConvTranspose2x2 { input, weight, bias }, "conv_transpose2x2")
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let dims = self.dims4(input, "max_pool2")?;
        ensure!(dims[2] % 2 == 0 && dims[3] % 2 == 0, Shape, "max_pool2 needs even spatial dims, got {}x{}", dims[2], dims[3]);
        let (out, argmax) = kernels::max_pool2_forward(self.data(input), dims);
        let shape = [dims[0], dims[1], dims[2] / 2, dims[3] / 2];
        self.push(&shape, out, Op::MaxPool2 { input, argmax }, "max_pool2")
    }

    /// Batch normalization over every axis except the channel axis (axis 1).
    ///
    /// In train mode batch statistics are used and `stats` is updated as
    /// `(1 - momentum) * old + momentum * batch` (unbiased batch variance);
    /// in eval mode `stats` is used as is.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        ensure!(shape.len() >= 2, Shape, "batch_norm expects [N, C, ...], got {shape:?}");
        let (batch, channels) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            ensure!(self.shape(v) == [channels], Shape, "batch_norm {name} must be [{channels}]");
        }
        ensure!(
            stats.mean.len() == channels && stats.var.len() == channels,
            Shape,
            "batch_norm running stats sized for {} channels, input has {channels}",
            stats.mean.len()
        );
        let x = self.data(input);
        let (mean, var) = match mode {
            Mode::Train => {
                let m = batch * spatial;
                ensure!(m > 1, InvalidArgument, "batch_norm in train mode needs more than one value per channel");
                let (mean, var) = kernels::channel_moments(x, batch, channels, spatial);
                let unbiased = m as f64 / (m as f64 - 1.0);
                for c in 0..channels {
                    stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean[c];
                    stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * var[c] * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let b = self.data(beta);
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for n in 0..batch {
            for c in 0..channels {
                let off = (n * channels + c) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let op = Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats: mode == Mode::Train };
        self.push(&shape, out, op, "batch_norm")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        self.push(&shape, out, Op::Relu(input), "relu")
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(input).to_vec();
        self.push(&shape, out, Op::Sigmoid(input), "sigmoid")
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode, eval is identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        ensure!((0.0..1.0).contains(&p), InvalidArgument, "dropout probability {p} outside [0, 1)");
        let n = self.value(input).numel();
        let scale: Vec<f64> = if mode == Mode::Eval || p == 0.0 {
            vec![1.0; n]
        } else {
            let keep = 1.0 / (1.0 - p);
            (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
        };
        let out = self.data(input).iter().zip(&scale).map(|(x, s)| x * s).collect();
        let shape = self.shape(input).to_vec();
        self.push(&shape, out, Op::Dropout { input, scale }, "dropout")
    }

    /// `input [N,D] · weightᵀ [D,M] + bias [M]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        ensure!(xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1], Shape, "linear input {xs:?} incompatible with weight {ws:?}");
        let (n, d, m) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * m];
        if let Some(b) = bias {
            ensure!(self.shape(b) == [m], Shape, "linear bias must be [{m}]");
            let bd = self.data(b);
            out.chunks_mut(m).for_each(|row| row.copy_from_slice(bd));
        }
        kernels::gemm(n, d, m, self.data(input), false, self.data(weight), true, 1.0, &mut out);
        self.push(&[n, m], out, Op::Linear { input, weight, bias }, "linear")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let data = self.data(input).to_vec();
        self.push(shape, data, Op::Reshape(input), "reshape")
    }

    /// `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let d = s[1..].iter().product();
        self.reshape(input, &[n, d])
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let da = self.dims4(a, "concat")?;
        let db = self.dims4(b, "concat")?;
        ensure!(
            da[0] == db[0] && da[2] == db[2] && da[3] == db[3],
            Shape,
            "cannot concatenate {da:?} with {db:?} along channels"
        );
        let plane = da[2] * da[3];
        let (sa, sb) = (da[1] * plane, db[1] * plane);
        let mut out = Vec::with_capacity(da[0] * (sa + sb));
        for n in 0..da[0] {
            out.extend_from_slice(&self.data(a)[n * sa..(n + 1) * sa]);
            out.extend_from_slice(&self.data(b)[n * sb..(n + 1) * sb]);
        }
        self.push(&[da[0], da[1] + db[1], da[2], da[3]], out, Op::ConcatChannels(a, b), "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, input: Var, k: f64) -> Result<Var> {
        let out = self.data(input).iter().map(|x| x * k).collect();
        let shape = self.shape(input).to_vec();
        self.push(&shape, out, Op::Scale(input, k), "scale")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.data(input).iter().sum();
        self.push(&[1], vec![s], Op::Sum(input), "sum")
    }

    /// `1 - (2·Σ(p·t) + smooth) / (Σp + Σt + smooth)` over the whole batch.
    pub fn dice_loss(&mut self, pred: Var, target: &[f64], smooth: f64) -> Result<Var> {
        let p = self.data(pred);
        ensure!(p.len() == target.len(), Shape, "dice loss prediction has {} elements, target {}", p.len(), target.len());
        let inter: f64 = p.iter().zip(target).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<f64>() + target.iter().sum::<f64>() + smooth;
        ensure!(denom > 0.0, InvalidArgument, "dice loss denominator is zero; use smooth > 0");
        let loss = 1.0 - (2.0 * inter + smooth) / denom;
        let op = Op::Dice { pred, target: target.to_vec(), smooth };
        self.push(&[1], vec![loss], op, "dice_loss")
    }

    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.data(pred);
        ensure!(p.len() == target.len(), Shape, "mse prediction has {} elements, target {}", p.len(), target.len());
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let op = Op::Mse { pred, target: target.to_vec() };
        self.push(&[1], vec![loss], op, "mse_loss")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(self.shape(a) == self.shape(b), Shape, "{what}: {:?} vs {:?}", self.shape(a), self.shape(b));
        Ok(())
    }

    /// Populates gradients of every differentiable node reachable from `loss`.
    ///
    /// Gradients from earlier calls are cleared first. Multiple uses of one
    /// node accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(loss.0 < self.nodes.len(), Graph, "loss node {} not on this graph", loss.0);
        ensure!(self.nodes[loss.0].value.numel() == 1, Graph, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(upstream) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(id, &upstream)?;
            self.nodes[id].grad = Some(upstream);
            for (var, g) in contributions {
                ensure!(var.0 < id, Graph, "cycle: node {id} depends on later node {}", var.0);
                let node = &mut self.nodes[var.0];
                if !node.requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient flowing into node {}", var.0)));
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, dy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[id];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, self.data(*input), self.data(*weight), dy, self.needs(*input));
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out.push((*weight, dw));
                if let Some(b) = bias {
                    out.push((*b, db));
                }
            }
            Op::ConvTranspose2x2 { input, weight, bias } => {
                let dims = self.dims4(*input, "conv_transpose2x2")?;
                let k = self.shape(*weight)[1];
                let (dx, dw, db) =
                    kernels::conv_transpose2x2_backward(self.data(*input), dims, self.data(*weight), k, dy, self.needs(*input));
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out.push((*weight, dw));
                if let Some(b) = bias {
                    out.push((*b, db));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (g, &idx) in dy.iter().zip(argmax) {
                    dx[idx] += g;
                }
                out.push((*input, dx));
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let shape = self.shape(*input);
                let (batch, channels) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let g = self.data(*gamma);
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let off = (n * channels + c) * spatial;
                        for i in off..off + spatial {
                            dgamma[c] += dy[i] * xhat[i];
                            dbeta[c] += dy[i];
                        }
                    }
                }
                if self.needs(*input) {
                    let mut dx = vec![0.0; dy.len()];
                    let m = (batch * spatial) as f64;
                    for n in 0..batch {
                        for c in 0..channels {
                            let off = (n * channels + c) * spatial;
                            for i in off..off + spatial {
                                dx[i] = if *batch_stats {
                                    g[c] * inv_std[c] * (dy[i] - dbeta[c] / m - xhat[i] * dgamma[c] / m)
                                } else {
                                    g[c] * inv_std[c] * dy[i]
                                };
                            }
                        }
                    }
                    out.push((*input, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                out.push((*a, dy.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect()));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                out.push((*a, dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()));
            }
            Op::Dropout { input, scale } => {
                out.push((*input, dy.iter().zip(scale).map(|(g, s)| g * s).collect()));
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.shape(*input);
                let (n, d) = (xs[0], xs[1]);
                let m = self.shape(*weight)[0];
                if self.needs(*input) {
                    let mut dx = vec![0.0; n * d];
                    kernels::gemm(n, m, d, dy, false, self.data(*weight), false, 0.0, &mut dx);
                    out.push((*input, dx));
                }
                let mut dw = vec![0.0; m * d];
                kernels::gemm(m, n, d, dy, true, self.data(*input), false, 0.0, &mut dw);
                out.push((*weight, dw));
                if let Some(b) = bias {
                    let mut db = vec![0.0; m];
                    for row in dy.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    out.push((*b, db));
                }
            }
            Op::Reshape(a) => out.push((*a, dy.to_vec())),
            Op::ConcatChannels(a, b) => {
                let da = self.shape(*a);
                let db = self.shape(*b);
                let plane = da[2] * da[3];
                let (sa, sb) = (da[1] * plane, db[1] * plane);
                let mut ga = Vec::with_capacity(da[0] * sa);
                let mut gb = Vec::with_capacity(da[0] * sb);
                for chunk in dy.chunks(sa + sb) {
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Add(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.to_vec()));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                out.push((*a, dy.iter().zip(xb).map(|(g, v)| g * v).collect()));
                out.push((*b, dy.iter().zip(xa).map(|(g, v)| g * v).collect()));
            }
            Op::Scale(a, k) => out.push((*a, dy.iter().map(|g| g * k).collect())),
            Op::Sum(a) => out.push((*a, vec![dy[0]; self.value(*a).numel()])),
            Op::Dice { pred, target, smooth } => {
                let p = self.data(*pred);
                let num = 2.0 * p.iter().zip(target).map(|(a, b)| a * b).sum::<f64>() + smooth;
                let den = p.iter().sum::<f64>() + target.iter().sum::<f64>() + smooth;
                // d/dp_i of -(num/den)
                let g = target.iter().map(|t| dy[0] * -(2.0 * t * den - num) / (den * den)).collect();
                out.push((*pred, g));
            }
            Op::Mse { pred, target } => {
                let p = self.data(*pred);
                let k = 2.0 / p.len() as f64;
                out.push((*pred, p.iter().zip(target).map(|(a, b)| dy[0] * k * (a - b)).collect()));
            }
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
