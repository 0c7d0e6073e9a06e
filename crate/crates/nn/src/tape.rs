//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the handles
//! of its inputs. `backward` walks the nodes once, newest to oldest, and
//! routes gradients to parameter leaves (keyed by [`ParamKey`]) and to
//! explicit input leaves.

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvDims};
use crate::params::{Gradients, ParamId, ParamKey, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamKey),
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    Deconv2d { x: Var, w: Var, b: Var, stride: usize },
    Dense { x: Var, w: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, inv_std: Vec<f32>, batch_stats: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Softmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Clamp { x: Var, lo: f32, hi: f32 },
    Reshape(Var),
    SumAll(Var),
    SumLast(Var),
    Gather { x: Var, index: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Pending batchnorm running-statistics update recorded in training mode.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub store: u64,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f32>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f32>,
    pub momentum: f32,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported through [`Gradients::input`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Registers a parameter. Buffers and parameters of frozen stores become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        if store.is_frozen() || p.kind == ParamKind::Buffer {
            self.constant(p.value.clone())
        } else {
            self.push(p.value.clone(), Op::Param(store.key(id)), true)
        }
    }

    /// Copies a value off the tape as a constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub(crate) fn record_bn_update(&mut self, u: BnUpdate) {
        self.bn_updates.push(u);
    }

    fn conv_dims(&self, op: &'static str, x: Var, w: Var, b: Var, transposed: bool, stride: usize) -> Result<ConvDims> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(NnError::shape(op, format!("input {xs:?}, weight {ws:?}")));
        }
        if stride == 0 {
            return Err(NnError::Config(format!("{op}: stride must be positive")));
        }
        let (in_c, out_c) = if transposed { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[1] != in_c {
            return Err(NnError::shape(
                op,
                format!("input has {} channels, weight expects {in_c}", xs[1]),
            ));
        }
        if bs != [out_c] {
            return Err(NnError::shape(op, format!("bias {bs:?}, expected [{out_c}]")));
        }
        let kernel = ws[2];
        if !transposed && (xs[2] < kernel || xs[3] < kernel) {
            return Err(NnError::shape(
                op,
                format!("input {}x{} smaller than kernel {kernel}", xs[2], xs[3]),
            ));
        }
        Ok(ConvDims {
            batch: xs[0],
            in_c,
            out_c,
            in_h: xs[2],
            in_w: xs[3],
            kernel,
            stride,
        })
    }

    /// Unpadded 2-d convolution. `x: (B,C,H,W)`, `w: (O,C,k,k)`, `b: (O)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let d = self.conv_dims("conv2d", x, w, b, false, stride)?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &d,
        );
        let t = Tensor::new(vec![d.batch, d.out_c, d.out_h(), d.out_w()], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Conv2d { x, w, b, stride }, rg))
    }

    /// Unpadded transposed convolution. `w: (C_in, C_out, k, k)`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let d = self.conv_dims("deconv2d", x, w, b, true, stride)?;
        let out = kernels::deconv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &d,
        );
        let (oh, ow) = kernels::deconv_out(&d);
        let t = Tensor::new(vec![d.batch, d.out_c, oh, ow], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Deconv2d { x, w, b, stride }, rg))
    }

    /// `x: (B, In)`, `w: (Out, In)`, `b: (Out)` → `x wᵀ + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(NnError::shape(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.value(b).data());
        }
        kernels::gemm(
            kernels::MatRef::new(self.value(x).data(), batch, inp),
            kernels::MatRef::new(self.value(w).data(), out, inp).t(),
            1.0,
            &mut y,
        );
        let t = Tensor::new(vec![batch, out], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Dense { x, w, b }, rg))
    }

    /// Per-channel affine normalization of `(B, C, ...)`.
    ///
    /// With `batch_stats` the statistics come from the batch itself and are
    /// returned as `(mean, biased var)`; otherwise `stats` supplies the
    /// running `(mean, var)` to normalize with.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
        stats: Option<(&[f32], &[f32])>,
    ) -> Result<(Var, Vec<f32>, Vec<f32>)> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(NnError::shape("batchnorm", format!("input {xs:?}")));
        }
        let (batch, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(NnError::shape(
                "batchnorm",
                format!("affine params must be [{c}]"),
            ));
        }
        let (mean, var) = match stats {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(NnError::shape("batchnorm", "running stats length"));
                }
                (m.to_vec(), v.to_vec())
            }
            None => kernels::channel_stats(self.value(x).data(), batch, c, s),
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut y = vec![0.0; xd.len()];
        for n in 0..batch {
            for ch in 0..c {
                let off = (n * c + ch) * s;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for (o, &v) in y[off..off + s].iter_mut().zip(&xd[off..off + s]) {
                    *o = ga * (v - mu) * is + be;
                }
            }
        }
        let t = Tensor::new(xs, y)?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
                batch_stats: stats.is_none(),
            },
            rg,
        );
        Ok((v, mean, var))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() != 4 || xs[2] < kernel || xs[3] < kernel || kernel == 0 || stride == 0 {
            return Err(NnError::shape(
                "maxpool2d",
                format!("input {xs:?}, kernel {kernel}, stride {stride}"),
            ));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), b * c, h, w, kernel, stride);
        let t = Tensor::new(
            vec![b, c, (h - kernel) / stride + 1, (w - kernel) / stride + 1],
            out,
        )?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaxPool { x, argmax }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f32::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f32::ln, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f32) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Vec::with_capacity(v.len());
        for row in v.rows() {
            out.extend(softmax_row(row));
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NnError::shape(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s as f32), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f32;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis: `(.., A)` → `(..)`, rank-1 inputs give `[1]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data: Vec<f32> = v.rows().map(|r| r.iter().sum()).collect();
        let shape = if v.rank() > 1 {
            v.shape()[..v.rank() - 1].to_vec()
        } else {
            vec![1]
        };
        let t = Tensor::new(shape, data).expect("row count");
        let rg = self.rg(&[x]);
        self.push(t, Op::SumLast(x), rg)
    }

    /// Picks `x[i, index[i]]` from a `(B, A)` tensor, giving `(B)`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 || v.shape()[0] != index.len() {
            return Err(NnError::shape(
                "gather",
                format!("input {:?} with {} indices", v.shape(), index.len()),
            ));
        }
        let a = v.shape()[1];
        if let Some(bad) = index.iter().find(|&&i| i >= a) {
            return Err(NnError::shape("gather", format!("index {bad} >= {a}")));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(row, &i)| v.data()[row * a + i])
            .collect();
        let t = Tensor::new(vec![index.len()], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameters registered on the tape but not reached by the loss get a
    /// zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.value(loss);
        if ls.len() != 1 {
            return Err(NnError::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(ls.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    out.inputs.insert(i, g);
                }
                Op::Param(key) => match out.params.get_mut(key) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(*key, g);
                    }
                },
                op => self.backprop(op, &node.value, &g, &mut grads)?,
            }
        }

        for node in &self.nodes[..=loss.0] {
            if let Op::Param(key) = &node.op {
                out.params
                    .entry(*key)
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.nodes[v.0].value.len());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f32>) -> Tensor {
        Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
    }

    fn backprop(&self, op: &Op, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!(),
            Op::Conv2d { x, w, b, stride } | Op::Deconv2d { x, w, b, stride } => {
                let transposed = matches!(op, Op::Deconv2d { .. });
                let d = self.conv_dims("conv backward", *x, *w, *b, transposed, *stride)?;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let (dx, dw, db) = if transposed {
                    kernels::deconv2d_backward(xv, wv, gd, &d)
                } else {
                    kernels::conv2d_backward(xv, wv, gd, &d)
                };
                let (dx, dw, db) = (self.like(*x, dx), self.like(*w, dw), self.like(*b, db));
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x).shape();
                let (batch, inp) = (xs[0], xs[1]);
                let out = self.value(*w).shape()[0];
                let gm = kernels::MatRef::new(gd, batch, out);
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    kernels::gemm(
                        gm,
                        kernels::MatRef::new(self.value(*w).data(), out, inp),
                        0.0,
                        &mut dx,
                    );
                    let dx = self.like(*x, dx);
                    self.accumulate(grads, *x, dx);
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; out * inp];
                    kernels::gemm(
                        gm.t(),
                        kernels::MatRef::new(self.value(*x).data(), batch, inp),
                        0.0,
                        &mut dw,
                    );
                    let dw = self.like(*w, dw);
                    self.accumulate(grads, *w, dw);
                }
                let mut db = vec![0.0; out];
                for row in gd.chunks(out) {
                    for (a, v) in db.iter_mut().zip(row) {
                        *a += *v;
                    }
                }
                let db = self.like(*b, db);
                self.accumulate(grads, *b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let xs = self.value(*x).shape();
                let (batch, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let m = (batch * s) as f32;
                let xd = self.value(*x).data();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for n in 0..batch {
                    for ch in 0..c {
                        let off = (n * c + ch) * s;
                        for k in off..off + s {
                            let xhat = (xd[k] - mean[ch]) * inv_std[ch];
                            dgamma[ch] += gd[k] * xhat;
                            dbeta[ch] += gd[k];
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; xd.len()];
                    for n in 0..batch {
                        for ch in 0..c {
                            let off = (n * c + ch) * s;
                            let k0 = gam[ch] * inv_std[ch];
                            for k in off..off + s {
                                dx[k] = if *batch_stats {
                                    let xhat = (xd[k] - mean[ch]) * inv_std[ch];
                                    k0 * (gd[k] - dbeta[ch] / m - xhat * dgamma[ch] / m)
                                } else {
                                    k0 * gd[k]
                                };
                            }
                        }
                    }
                    let dx = self.like(*x, dx);
                    self.accumulate(grads, *x, dx);
                }
                let dgamma = self.like(*gamma, dgamma);
                let dbeta = self.like(*beta, dbeta);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &i) in gd.iter().zip(argmax) {
                    dx[i] += *gv;
                }
                let dx = self.like(*x, dx);
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let d = y.data().iter().zip(gd).map(|(&o, &gv)| if o > 0.0 { gv } else { 0.0 }).collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = y.data().iter().zip(gd).map(|(&o, &gv)| gv * o * (1.0 - o)).collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = y.data().iter().zip(gd).map(|(&o, &gv)| gv * o).collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Ln(x) => {
                let d = self.value(*x).data().iter().zip(gd).map(|(&v, &gv)| gv / v).collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let d = self.value(*x).data().iter().zip(gd).map(|(&v, &gv)| 2.0 * v * gv).collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let a = *y.shape().last().expect("rank >= 1");
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(a).zip(gd.chunks(a)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = bv.iter().zip(gd).map(|(p, q)| p * q).collect();
                    let d = self.like(*a, d);
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let d = av.iter().zip(gd).map(|(p, q)| p * q).collect();
                    let d = self.like(*b, d);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, k) => {
                let d = g.map(|v| v * k);
                self.accumulate(grads, *x, d);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Clamp { x, lo, hi } => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => {
                let d = self.like(*x, gd.to_vec());
                self.accumulate(grads, *x, d);
            }
            Op::SumAll(x) => {
                let d = Tensor::full(self.value(*x).shape(), gd[0]);
                self.accumulate(grads, *x, d);
            }
            Op::SumLast(x) => {
                let xv = self.value(*x);
                let a = *xv.shape().last().expect("rank >= 1");
                let mut d = Vec::with_capacity(xv.len());
                for &gv in gd {
                    d.extend(std::iter::repeat_n(gv, a));
                }
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Gather { x, index } => {
                let xv = self.value(*x);
                let a = xv.shape()[1];
                let mut d = vec![0.0; xv.len()];
                for (row, (&i, &gv)) in index.iter().zip(gd).enumerate() {
                    d[row * a + i] = gv;
                }
                let d = self.like(*x, d);
                self.accumulate(grads, *x, d);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f32]) -> Vec<f32> {
    let row64: Vec<f64> = row.iter().map(|&v| v as f64).collect();
    softmax_f64(&row64).into_iter().map(|p| p as f32).collect()
}

/// Double-precision softmax, for distributions that must normalize to 1e-9.
pub fn softmax_f64(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}
