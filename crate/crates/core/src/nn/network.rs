use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Head, HeadOutput, Layer, LayerKind, Mode};

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    layer: Layer,
    trainable: bool,
}

/// An ordered stack of layers ending in a classification head.
///
/// Shapes are validated against the declared per-sample input shape when the
/// network is built, so a constructed network never fails a forward pass on
/// a correctly shaped batch.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    slots: Vec<Slot>,
    head: Head,
    mode: Mode,
}

/// Read-only view of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct NamedParam<'a> {
    pub name: &'a str,
    pub suffix: &'static str,
    pub value: &'a Tensor,
    pub grad: &'a Tensor,
    pub trainable: bool,
}

impl NamedParam<'_> {
    pub fn full_name(&self) -> String {
        format!("{}.{}", self.name, self.suffix)
    }
}

/// Mutable access to one parameter and its latest gradient, handed to the
/// optimizer.
#[derive(Debug)]
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
    pub trainable: bool,
}

impl Network {
    /// Validates the layer chain for samples of `input_shape` (no batch axis).
    pub fn new(input_shape: &[usize], layers: Vec<(String, Layer)>, head: Head) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(shape_err!("invalid input shape {input_shape:?}"));
        }
        let mut shape = input_shape.to_vec();
        for (name, layer) in &layers {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| shape_err!("layer `{name}` rejects input {shape:?}: {e}"))?;
        }
        if shape != [head.logits()] {
            return Err(shape_err!(
                "network output {shape:?} does not match the {} head ([{}])",
                head.as_str(),
                head.logits()
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &layers {
            if !seen.insert(name.as_str()) {
                return Err(value_err!("duplicate layer name `{name}`"));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            slots: layers
                .into_iter()
                .map(|(name, layer)| Slot {
                    name,
                    layer,
                    trainable: true,
                })
                .collect(),
            head,
            mode: Mode::Train,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.slots[index].layer
    }

    pub fn layer_name(&self, index: usize) -> &str {
        &self.slots[index].name
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.slots.iter().map(|s| s.layer.kind()).collect()
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.slots[index].trainable
    }

    pub fn set_trainable(&mut self, index: usize, trainable: bool) {
        self.slots[index].trainable = trainable;
    }

    /// Sets the trainable flag of every layer whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for slot in self.slots.iter_mut().filter(|s| s.name.starts_with(prefix)) {
            slot.trainable = trainable;
        }
    }

    /// Canonical architecture string stored in weight containers.
    pub fn fingerprint(&self) -> String {
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        let mut parts = vec![format!("input={}", dims.join("x"))];
        parts.extend(
            self.slots
                .iter()
                .map(|s| format!("{}={}", s.name, s.layer.describe())),
        );
        parts.push(format!("head={}", self.head.as_str()));
        parts.join(";")
    }

    pub fn params(&self) -> Vec<NamedParam<'_>> {
        self.slots
            .iter()
            .flat_map(|s| {
                s.layer.params().into_iter().map(|(suffix, value, grad)| NamedParam {
                    name: &s.name,
                    suffix,
                    value,
                    grad,
                    trainable: s.trainable,
                })
            })
            .collect()
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.slots
            .iter_mut()
            .flat_map(|s| {
                let (name, trainable) = (&s.name, s.trainable);
                s.layer
                    .params_mut()
                    .into_iter()
                    .map(move |(suffix, value, grad)| ParamSlot {
                        name: format!("{name}.{suffix}"),
                        value,
                        grad,
                        trainable,
                    })
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Replaces parameter values; `values` must list every parameter, in
    /// [`Network::params`] order, with matching names and shapes.
    pub fn set_params(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .params()
            .iter()
            .map(|p| (p.full_name(), p.value.shape().to_vec()))
            .collect();
        if expected.len() != values.len() {
            return Err(crate::Error::Format(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        for ((name, shape), (got_name, tensor)) in expected.iter().zip(values) {
            if name != got_name || shape.as_slice() != tensor.shape() {
                return Err(crate::Error::Format(format!(
                    "parameter mismatch: expected `{name}` {shape:?}, found `{got_name}` {:?}",
                    tensor.shape()
                )));
            }
        }
        let mut it = values.iter();
        for slot in self.param_slots() {
            *slot.value = it.next().expect("length checked").1.clone();
        }
        Ok(())
    }

    fn check_batch(&self, input: &Tensor) -> Result<()> {
        if input.rank() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(shape_err!(
                "network expects [N, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            ));
        }
        Ok(())
    }

    /// Forward pass that caches activations for [`Network::backward`].
    /// Dropout masks are drawn from `rng` in train mode.
    pub fn forward(&mut self, input: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        self.check_batch(input)?;
        let mode = self.mode;
        let mut x = input.clone();
        for slot in &mut self.slots {
            x = slot.layer.forward(&x, mode, rng)?;
        }
        Ok(x)
    }

    /// Backpropagates a logit gradient through every layer and returns the
    /// input gradient. Frozen layers still propagate but store no parameter
    /// gradients.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for slot in self.slots.iter_mut().rev() {
            g = slot
                .layer
                .backward(&g, slot.trainable, true)?
                .expect("input gradient requested");
        }
        Ok(g)
    }

    /// Backward pass that stops once no trainable layer remains below.
    fn backward_params(&mut self, grad_logits: &Tensor) -> Result<()> {
        let Some(first) = self
            .slots
            .iter()
            .position(|s| s.trainable && s.layer.has_params())
        else {
            return Ok(());
        };
        let mut g = grad_logits.clone();
        for (i, slot) in self.slots.iter_mut().enumerate().rev() {
            if i < first {
                break;
            }
            match slot.layer.backward(&g, slot.trainable, i > first)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Forward, loss and backward for one batch. Parameter gradients are left
    /// in the layers for the optimizer.
    pub fn train_batch(&mut self, input: &Tensor, labels: &Tensor, rng: &mut Rng) -> Result<HeadOutput> {
        let logits = self.forward(input, rng)?;
        let out = self.head.loss(&logits, labels)?;
        self.backward_params(&out.grad)?;
        Ok(out)
    }

    /// Pure eval-mode logits (dropout is the identity, nothing is cached).
    pub fn infer_logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check_batch(input)?;
        let mut x = input.clone();
        for slot in &self.slots {
            x = slot.layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Eval-mode positive-class probabilities.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.head.probabilities(&self.infer_logits(input)?)
    }

    /// Eval-mode probabilities and mean loss.
    pub fn evaluate(&self, input: &Tensor, labels: &Tensor) -> Result<HeadOutput> {
        self.head.loss(&self.infer_logits(input)?, labels)
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        for slot in &mut self.slots {
            slot.layer.clear_cache();
        }
    }
}
