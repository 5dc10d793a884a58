use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Mode;

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the
/// identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(value_err!("dropout rate must be in [0, 1), got {rate}"));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    pub fn describe(&self) -> String {
        format!("dropout({})", self.rate)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.clone())
    }

    /// Draws a fresh mask of `{0, 1/(1-rate)}` entries.
    pub fn sample_mask(&self, shape: &[usize], rng: &mut Rng) -> Tensor {
        let keep = 1.0 / (1.0 - self.rate);
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| if rng.bernoulli(self.rate) { 0.0 } else { keep })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(input.clone());
        }
        let mask = self.sample_mask(input.shape(), rng);
        self.forward_with_mask(input, mask)
    }

    /// Train-mode forward with a caller-supplied mask (used to hold the mask
    /// fixed, e.g. for gradient checks).
    pub fn forward_with_mask(&mut self, input: &Tensor, mask: Tensor) -> Result<Tensor> {
        if mask.shape() != input.shape() {
            return Err(shape_err!(
                "dropout mask {:?} does not match input {:?}",
                mask.shape(),
                input.shape()
            ));
        }
        let out = input.mul(&mask)?;
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => grad_out.mul(mask),
        }
    }

    pub(crate) fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        self.mask = None;
        Ok(input.clone())
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}
