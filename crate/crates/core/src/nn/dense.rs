use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, MatRef, Tensor};

use super::glorot_limit;

/// Fully connected layer: `out = input · W + b`, with `W` of shape `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub(crate) weight: Tensor,
    pub(crate) bias: Tensor,
    pub(crate) grad_weight: Tensor,
    pub(crate) grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(shape_err!("dense weight must be [in, out], got {:?}", weight.shape()));
        }
        if bias.shape() != [weight.shape()[1]] {
            return Err(shape_err!(
                "dense bias {:?} does not match {} outputs",
                bias.shape(),
                weight.shape()[1]
            ));
        }
        Ok(Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let limit = glorot_limit(inputs, outputs);
        let weight = Tensor::random_uniform(&[inputs, outputs], -limit, limit, rng)?;
        Self::new(weight, Tensor::zeros(&[outputs]))
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Tensor {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &Tensor {
        &self.grad_bias
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [width] if *width == self.inputs() => Ok(vec![self.outputs()]),
            _ => Err(shape_err!(
                "dense expects samples of width {}, got {input:?}",
                self.inputs()
            )),
        }
    }

    pub fn describe(&self) -> String {
        format!("dense({}->{})", self.inputs(), self.outputs())
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 2 || input.shape()[1] != self.inputs() {
            return Err(shape_err!(
                "dense expects [N, {}], got {:?}",
                self.inputs(),
                input.shape()
            ));
        }
        let (n, i, o) = (input.shape()[0], self.inputs(), self.outputs());
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            n,
            i,
            o,
            1.0,
            MatRef::row_major(input.data(), i),
            MatRef::row_major(self.weight.data(), o),
            1.0,
            &mut out,
        );
        Ok(Tensor::from_parts(vec![n, o], out))
    }

    pub fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(
        &mut self,
        grad_out: &Tensor,
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| value_err!("dense backward called before forward"))?;
        let (n, i, o) = (input.shape()[0], self.inputs(), self.outputs());
        if grad_out.shape() != [n, o] {
            return Err(shape_err!(
                "dense backward: gradient {:?} does not match output [{n}, {o}]",
                grad_out.shape()
            ));
        }
        if param_grads {
            let mut dw = vec![0.0; i * o];
            // dW = X^T [i x n] * dY [n x o]
            gemm(
                i,
                n,
                o,
                1.0,
                MatRef::transposed(input.data(), i),
                MatRef::row_major(grad_out.data(), o),
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; o];
            for row in grad_out.data().chunks_exact(o) {
                db.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
            }
            self.grad_weight = Tensor::from_parts(vec![i, o], dw);
            self.grad_bias = Tensor::from_parts(vec![o], db);
        }
        if !input_grad {
            return Ok(None);
        }
        let mut dx = vec![0.0; n * i];
        // dX = dY [n x o] * W^T [o x i]
        gemm(
            n,
            o,
            i,
            1.0,
            MatRef::row_major(grad_out.data(), o),
            MatRef::transposed(self.weight.data(), o),
            0.0,
            &mut dx,
        );
        Ok(Some(Tensor::from_parts(vec![n, i], dx)))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}
