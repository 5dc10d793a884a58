//! Layers with explicit forward and backward passes, and the [`Network`]
//! that stacks them.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! overwrites its parameter gradients on each `backward`. The `infer` path
//! is pure and keeps no cache.

mod conv;
mod dense;
mod dropout;
mod head;
mod network;
mod pool;
mod simple;

pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use head::{sigmoid_bce, softmax2_ce, Head, HeadOutput};
pub use network::{NamedParam, Network, ParamSlot};
pub use pool::MaxPool2d;
pub use simple::{Flatten, Relu};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Train mode samples dropout masks; eval mode makes dropout the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
    Dense,
    Dropout,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
        }
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense),
    Dropout(Dropout),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Conv2d($l) => $body,
            Layer::Relu($l) => $body,
            Layer::MaxPool2d($l) => $body,
            Layer::Flatten($l) => $body,
            Layer::Dense($l) => $body,
            Layer::Dropout($l) => $body,
        }
    };
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    /// Per-sample output shape for a per-sample input shape (batch axis excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        dispatch!(self, l => l.output_shape(input))
    }

    /// Architecture description used in fingerprints.
    pub fn describe(&self) -> String {
        dispatch!(self, l => l.describe())
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Dropout(l) => l.forward(input, mode, rng),
            other => dispatch!(other, l => l.forward_cached(input)),
        }
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.infer(input))
    }

    /// Backpropagates `grad_out`. Parameter gradients are stored only when
    /// `param_grads` is set; the input gradient is returned only when
    /// `input_grad` is set.
    pub fn backward(
        &mut self,
        grad_out: &Tensor,
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Option<Tensor>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad_out, param_grads, input_grad),
            Layer::Dense(l) => l.backward(grad_out, param_grads, input_grad),
            Layer::Relu(l) => l.backward(grad_out).map(Some),
            Layer::MaxPool2d(l) => l.backward(grad_out).map(Some),
            Layer::Flatten(l) => l.backward(grad_out).map(Some),
            Layer::Dropout(l) => l.backward(grad_out).map(Some),
        }
    }

    /// `(suffix, value, grad)` for each parameter, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor, &Tensor)> {
        match self {
            Layer::Conv2d(l) => vec![
                ("weight", &l.weight, &l.grad_weight),
                ("bias", &l.bias, &l.grad_bias),
            ],
            Layer::Dense(l) => vec![
                ("weight", &l.weight, &l.grad_weight),
                ("bias", &l.bias, &l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor, &Tensor)> {
        match self {
            Layer::Conv2d(l) => vec![
                ("weight", &mut l.weight, &l.grad_weight),
                ("bias", &mut l.bias, &l.grad_bias),
            ],
            Layer::Dense(l) => vec![
                ("weight", &mut l.weight, &l.grad_weight),
                ("bias", &mut l.bias, &l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    pub(crate) fn clear_cache(&mut self) {
        dispatch!(self, l => l.clear_cache())
    }
}
