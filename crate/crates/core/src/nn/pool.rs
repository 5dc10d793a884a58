use crate::error::{shape_err, value_err, Result};
use crate::tensor::Tensor;

/// Max pooling over `[N, C, H, W]` with no padding.
///
/// The backward pass routes each output gradient to the first maximal
/// element (row-major order) of its window.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    window: (usize, usize),
    stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: usize) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride == 0 {
            return Err(value_err!("maxpool window {window:?} and stride {stride} must be >= 1"));
        }
        Ok(Self {
            window,
            stride,
            cache: None,
        })
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let &[c, h, w] = input else {
            return Err(shape_err!("maxpool2d expects [C, H, W] samples, got {input:?}"));
        };
        Ok(vec![c, self.extent(h, self.window.0)?, self.extent(w, self.window.1)?])
    }

    fn extent(&self, size: usize, window: usize) -> Result<usize> {
        if window > size {
            return Err(shape_err!("maxpool2d window {window} larger than input extent {size}"));
        }
        if (size - window) % self.stride != 0 {
            return Err(shape_err!(
                "maxpool2d: extent {size} with window {window}, stride {} gives a non-integral output",
                self.stride
            ));
        }
        Ok((size - window) / self.stride + 1)
    }

    pub fn describe(&self) -> String {
        format!("maxpool2d({}x{},s{})", self.window.0, self.window.1, self.stride)
    }

    /// Pooled values and, for each of them, the flat input index of the winner.
    fn pool(&self, input: &Tensor) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
        if input.rank() != 4 {
            return Err(shape_err!("maxpool2d expects [N, C, H, W], got {:?}", input.shape()));
        }
        let n = input.shape()[0];
        let out = self.output_shape(&input.shape()[1..])?;
        let (c, oh, ow) = (out[0], out[1], out[2]);
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let (wh, ww) = self.window;
        let x = input.data();
        let mut values = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(values.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = base + y0 * w + x0;
                    for i in 0..wh {
                        for j in 0..ww {
                            let idx = base + (y0 + i) * w + x0 + j;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    values.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((vec![n, c, oh, ow], values, argmax))
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (shape, values, _) = self.pool(input)?;
        Ok(Tensor::from_parts(shape, values))
    }

    pub fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        let (shape, values, argmax) = self.pool(input)?;
        self.cache = Some((input.shape().to_vec(), argmax));
        Ok(Tensor::from_parts(shape, values))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (in_shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| value_err!("maxpool2d backward called before forward"))?;
        if grad_out.len() != argmax.len() {
            return Err(shape_err!(
                "maxpool2d backward: gradient {:?} does not match cached output",
                grad_out.shape()
            ));
        }
        let mut dx = vec![0.0; in_shape.iter().product()];
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            dx[idx] += g;
        }
        Ok(Tensor::from_parts(in_shape.clone(), dx))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
