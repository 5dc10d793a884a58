use crate::error::{shape_err, value_err, Result};
use crate::tensor::Tensor;

/// Rectified linear unit. The subgradient at exactly zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    pub fn describe(&self) -> String {
        "relu".to_string()
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(Tensor::from_parts(
            input.shape().to_vec(),
            input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        ))
    }

    pub fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| value_err!("relu backward called before forward"))?;
        if input.shape() != grad_out.shape() {
            return Err(shape_err!(
                "relu backward: gradient {:?} vs input {:?}",
                grad_out.shape(),
                input.shape()
            ));
        }
        Ok(Tensor::from_parts(
            input.shape().to_vec(),
            input
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
        ))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Reshapes `[N, ...]` to `[N, M]`, preserving row-major order.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![input.iter().product()])
    }

    pub fn describe(&self) -> String {
        "flatten".to_string()
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        if input.rank() < 1 {
            return Err(shape_err!("flatten needs a batch axis"));
        }
        let n = input.shape()[0];
        input.reshape(&[n, input.len() / n])
    }

    pub fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.input_shape = Some(input.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| value_err!("flatten backward called before forward"))?;
        grad_out.reshape(shape)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
