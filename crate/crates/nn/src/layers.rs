//! Layer definitions and a sequential container.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tape::{BnUpdate, Mode, Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// One row of a layer table: kind plus its kind-specific fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize },
    Deconv { out_channels: usize, kernel: usize, stride: usize },
    Dense { out_features: usize },
    BatchNorm,
    MaxPool { kernel: usize, stride: usize },
    Relu,
    Sigmoid,
    Softmax,
    /// `(B, C, H, W)` → `(B, C*H*W)`; no parameters.
    Flatten,
    /// `(B, F)` → `(B, F, 1, 1)`; no parameters.
    Unflatten,
}

/// Shape after applying `spec` to `input`, following the unpadded conventions.
pub fn output_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let need4 = |name: &'static str| {
        if input.len() == 4 {
            Ok(())
        } else {
            Err(NnError::shape(name, format!("expected rank 4, got {input:?}")))
        }
    };
    Ok(match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
        } => {
            need4("conv")?;
            if input[2] < kernel || input[3] < kernel {
                return Err(NnError::shape("conv", format!("{input:?} smaller than kernel {kernel}")));
            }
            vec![
                input[0],
                out_channels,
                (input[2] - kernel) / stride + 1,
                (input[3] - kernel) / stride + 1,
            ]
        }
        LayerSpec::Deconv {
            out_channels,
            kernel,
            stride,
        } => {
            need4("deconv")?;
            vec![
                input[0],
                out_channels,
                (input[2] - 1) * stride + kernel,
                (input[3] - 1) * stride + kernel,
            ]
        }
        LayerSpec::MaxPool { kernel, stride } => {
            need4("maxpool")?;
            vec![
                input[0],
                input[1],
                (input[2] - kernel) / stride + 1,
                (input[3] - kernel) / stride + 1,
            ]
        }
        LayerSpec::Dense { out_features } => {
            if input.len() != 2 {
                return Err(NnError::shape("dense", format!("expected rank 2, got {input:?}")));
            }
            vec![input[0], out_features]
        }
        LayerSpec::Flatten => vec![input[0], input[1..].iter().product()],
        LayerSpec::Unflatten => vec![input[0], input[1..].iter().product(), 1, 1],
        LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax => input.to_vec(),
    })
}

/// Kaiming-uniform tensor for a ReLU layer with the given fan-in.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_c, in_c, kernel, kernel], fan_in, rng),
            ParamKind::Trainable,
        );
        let bias = store.add(
            format!("{name}.bias"),
            uniform(&[out_c], 1.0 / (fan_in as f32).sqrt(), rng),
            ParamKind::Trainable,
        );
        Self { weight, bias, stride }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct Deconv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Deconv2d {
    pub fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = out_c * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_c, out_c, kernel, kernel], fan_in, rng),
            ParamKind::Trainable,
        );
        let bias = store.add(
            format!("{name}.bias"),
            uniform(&[out_c], 1.0 / (fan_in as f32).sqrt(), rng),
            ParamKind::Trainable,
        );
        Self { weight, bias, stride }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.deconv2d(x, w, b, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_f, in_f], in_f, rng),
            ParamKind::Trainable,
        );
        let bias = store.add(
            format!("{name}.bias"),
            uniform(&[out_f], 1.0 / (in_f as f32).sqrt(), rng),
            ParamKind::Trainable,
        );
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.dense(x, w, b)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).data_mut().fill(0.0);
        store.value_mut(self.bias).data_mut().fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), ParamKind::Buffer),
        }
    }

    /// Training mode normalizes with batch statistics and queues a running
    /// statistics update on the tape; evaluation mode uses the running stats.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        match mode {
            Mode::Eval => {
                let rm = store.value(self.running_mean).data();
                let rv = store.value(self.running_var).data();
                Ok(tape.batchnorm(x, g, b, BN_EPS, Some((rm, rv)))?.0)
            }
            Mode::Train => {
                let count = {
                    let s = tape.value(x).shape();
                    s[0] * s[2..].iter().product::<usize>()
                };
                let (y, mean, var) = tape.batchnorm(x, g, b, BN_EPS, None)?;
                let correction = if count > 1 {
                    count as f32 / (count - 1) as f32
                } else {
                    1.0
                };
                if !store.is_frozen() {
                    tape.record_bn_update(BnUpdate {
                        store: store.uid(),
                        running_mean: self.running_mean,
                        running_var: self.running_var,
                        batch_mean: mean,
                        batch_var: var.iter().map(|v| v * correction).collect(),
                        momentum: BN_MOMENTUM,
                    });
                }
                Ok(y)
            }
        }
    }
}

impl ParamStore {
    /// Applies the running-statistics updates that belong to this store.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        let uid = self.uid();
        for u in updates.iter().filter(|u| u.store == uid) {
            let m = u.momentum;
            for (r, b) in self.value_mut(u.running_mean).data_mut().iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.value_mut(u.running_var).data_mut().iter_mut().zip(&u.batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(Conv2d),
    Deconv(Deconv2d),
    Dense(Dense),
    BatchNorm(BatchNorm2d),
    MaxPool { kernel: usize, stride: usize },
    Relu,
    Sigmoid,
    Softmax,
    Flatten,
    Unflatten,
}

/// A chain of layers built from [`LayerSpec`] rows.
#[derive(Clone, Debug)]
pub struct Sequential {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

impl Sequential {
    /// Builds the layers for a per-sample `input_shape` (batch dimension
    /// excluded), registering parameters as `{name}.{index}.*`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_shape: &[usize],
        specs: &[LayerSpec],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut shape: Vec<usize> = std::iter::once(1).chain(input_shape.iter().copied()).collect();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let lname = format!("{name}.{i}");
            let layer = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => Layer::Conv(Conv2d::new(store, &lname, channels(&shape)?, out_channels, kernel, stride, rng)),
                LayerSpec::Deconv {
                    out_channels,
                    kernel,
                    stride,
                } => Layer::Deconv(Deconv2d::new(store, &lname, channels(&shape)?, out_channels, kernel, stride, rng)),
                LayerSpec::Dense { out_features } => {
                    if shape.len() != 2 {
                        return Err(NnError::Config(format!("dense layer {i} needs a flat input, got {shape:?}")));
                    }
                    Layer::Dense(Dense::new(store, &lname, shape[1], out_features, rng))
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(store, &lname, channels(&shape)?)),
                LayerSpec::MaxPool { kernel, stride } => Layer::MaxPool { kernel, stride },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Sigmoid => Layer::Sigmoid,
                LayerSpec::Softmax => Layer::Softmax,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Unflatten => Layer::Unflatten,
            };
            shape = output_shape(spec, &shape)?;
            layers.push(layer);
        }
        Ok(Self {
            specs: specs.to_vec(),
            layers,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Per-layer output shapes for a batch of `batch` inputs.
    pub fn shape_trace(&self, batch: usize) -> Result<Vec<Vec<usize>>> {
        let mut shape: Vec<usize> = std::iter::once(batch).chain(self.input_shape.iter().copied()).collect();
        let mut out = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            shape = output_shape(spec, &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var, mode: Mode) -> Result<Var> {
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(l) => l.forward(tape, store, x)?,
                Layer::Deconv(l) => l.forward(tape, store, x)?,
                Layer::Dense(l) => l.forward(tape, store, x)?,
                Layer::BatchNorm(l) => l.forward(tape, store, x, mode)?,
                Layer::MaxPool { kernel, stride } => tape.maxpool2d(x, *kernel, *stride)?,
                Layer::Relu => tape.relu(x),
                Layer::Sigmoid => tape.sigmoid(x),
                Layer::Softmax => tape.softmax(x),
                Layer::Flatten => {
                    let s = tape.value(x).shape();
                    let flat = [s[0], s[1..].iter().product()];
                    tape.reshape(x, &flat)?
                }
                Layer::Unflatten => {
                    let s = tape.value(x).shape();
                    let shape = [s[0], s[1..].iter().product(), 1, 1];
                    tape.reshape(x, &shape)?
                }
            };
        }
        Ok(x)
    }

    /// The last dense layer, if any.
    pub fn last_dense(&self) -> Option<&Dense> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }
}

fn channels(shape: &[usize]) -> Result<usize> {
    if shape.len() == 4 {
        Ok(shape[1])
    } else {
        Err(NnError::Config(format!("spatial layer needs a (B,C,H,W) input, got {shape:?}")))
    }
}
