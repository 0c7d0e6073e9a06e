//! Minimal tensor and reverse-mode autodiff engine.
//!
//! Provides exactly the pieces the agents need: unpadded convolutions and
//! transposed convolutions, dense layers, batch normalization, max pooling,
//! the usual activations, a handful of elementwise/reduction ops for losses,
//! SGD/Adam, and the `FEPR` checkpoint format.

pub mod checkpoint;
mod error;
mod kernels;
pub mod layers;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use layers::{BatchNorm2d, Conv2d, Deconv2d, Dense, LayerSpec, Sequential};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{Gradients, Param, ParamId, ParamKey, ParamKind, ParamStore};
pub use tape::{sigmoid, softmax_f64, softmax_row, BnUpdate, Mode, Tape, Var};
pub use tensor::Tensor;
