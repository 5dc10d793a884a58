use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, MatRef, Tensor};

use super::glorot_limit;

/// 2-D convolution over `[N, C, H, W]` inputs (cross-correlation, as in
/// every deep-learning library). Lowered to a matrix product through
/// im2col; the backward pass recomputes the column buffer instead of
/// caching it.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub(crate) weight: Tensor,
    pub(crate) bias: Tensor,
    pub(crate) grad_weight: Tensor,
    pub(crate) grad_bias: Tensor,
    stride: usize,
    padding: usize,
    input: Option<Tensor>,
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = size + 2 * pad;
    if padded < kernel {
        return Err(shape_err!(
            "conv2d: {axis} extent {size} (+2*{pad} padding) smaller than kernel {kernel}"
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(shape_err!(
            "conv2d: {axis} extent {size} with kernel {kernel}, stride {stride}, padding {pad} \
             gives a non-integral output extent"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Conv2d {
    /// Layer from explicit parameters: `weight` is `[F, C, kh, kw]`, `bias` is `[F]`.
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weight.rank() != 4 {
            return Err(shape_err!("conv2d kernel must be [F, C, kh, kw], got {:?}", weight.shape()));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(shape_err!(
                "conv2d bias {:?} does not match {} filters",
                bias.shape(),
                weight.shape()[0]
            ));
        }
        if stride == 0 {
            return Err(value_err!("conv2d stride must be >= 1"));
        }
        Ok(Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            stride,
            padding,
            input: None,
        })
    }

    /// Glorot-uniform kernel, zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let limit = glorot_limit(in_channels * kh * kw, out_channels * kh * kw);
        let weight =
            Tensor::random_uniform(&[out_channels, in_channels, kh, kw], -limit, limit, rng)?;
        Self::new(weight, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
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
        let g = self.geometry(input)?;
        Ok(vec![self.filters(), g.oh, g.ow])
    }

    pub fn describe(&self) -> String {
        let (kh, kw) = self.kernel();
        format!(
            "conv2d({}->{},k{kh}x{kw},s{},p{})",
            self.in_channels(),
            self.filters(),
            self.stride,
            self.padding
        )
    }

    fn geometry(&self, chw: &[usize]) -> Result<Geometry> {
        let &[c, h, w] = chw else {
            return Err(shape_err!("conv2d expects [C, H, W] samples, got {chw:?}"));
        };
        if c != self.in_channels() {
            return Err(shape_err!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels()
            ));
        }
        let (kh, kw) = self.kernel();
        Ok(Geometry {
            c,
            h,
            w,
            kh,
            kw,
            oh: out_extent(h, kh, self.stride, self.padding, "height")?,
            ow: out_extent(w, kw, self.stride, self.padding, "width")?,
            stride: self.stride,
            pad: self.padding,
        })
    }

    fn batch_geometry(&self, input: &Tensor) -> Result<(usize, Geometry)> {
        if input.rank() != 4 {
            return Err(shape_err!("conv2d expects [N, C, H, W], got {:?}", input.shape()));
        }
        Ok((input.shape()[0], self.geometry(&input.shape()[1..])?))
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, g) = self.batch_geometry(input)?;
        let f = self.filters();
        let (k, p) = (g.patch(), g.positions());
        let sample_in = g.c * g.h * g.w;
        let mut cols = vec![0.0; k * p];
        let mut out = vec![0.0; n * f * p];
        for (x, y) in input
            .data()
            .chunks_exact(sample_in)
            .zip(out.chunks_exact_mut(f * p))
        {
            im2col(x, &g, &mut cols);
            for (row, &b) in y.chunks_exact_mut(p).zip(self.bias.data()) {
                row.fill(b);
            }
            gemm(
                f,
                k,
                p,
                1.0,
                MatRef::row_major(self.weight.data(), k),
                MatRef::row_major(&cols, p),
                1.0,
                y,
            );
        }
        Ok(Tensor::from_parts(vec![n, f, g.oh, g.ow], out))
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
            .ok_or_else(|| value_err!("conv2d backward called before forward"))?;
        let (n, g) = self.batch_geometry(input)?;
        let f = self.filters();
        let (k, p) = (g.patch(), g.positions());
        if grad_out.shape() != [n, f, g.oh, g.ow] {
            return Err(shape_err!(
                "conv2d backward: gradient {:?} does not match output [{n}, {f}, {}, {}]",
                grad_out.shape(),
                g.oh,
                g.ow
            ));
        }
        let sample_in = g.c * g.h * g.w;
        let mut cols = vec![0.0; k * p];
        let mut dcols = vec![0.0; k * p];
        let mut dw = vec![0.0; f * k];
        let mut db = vec![0.0; f];
        let mut dx = if input_grad {
            vec![0.0; input.len()]
        } else {
            Vec::new()
        };
        for (s, dy) in grad_out.data().chunks_exact(f * p).enumerate() {
            if param_grads {
                im2col(&input.data()[s * sample_in..][..sample_in], &g, &mut cols);
                // dW += dY [f x p] * cols^T [p x k]
                gemm(
                    f,
                    p,
                    k,
                    1.0,
                    MatRef::row_major(dy, p),
                    MatRef::transposed(&cols, p),
                    1.0,
                    &mut dw,
                );
                for (acc, row) in db.iter_mut().zip(dy.chunks_exact(p)) {
                    *acc += row.iter().sum::<f64>();
                }
            }
            if input_grad {
                // dcols = W^T [k x f] * dY [f x p]
                gemm(
                    k,
                    f,
                    p,
                    1.0,
                    MatRef::transposed(self.weight.data(), k),
                    MatRef::row_major(dy, p),
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, &g, &mut dx[s * sample_in..][..sample_in]);
            }
        }
        if param_grads {
            self.grad_weight = Tensor::from_parts(self.weight.shape().to_vec(), dw);
            self.grad_bias = Tensor::from_parts(vec![f], db);
        }
        Ok(input_grad.then(|| Tensor::from_parts(input.shape().to_vec(), dx)))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Unfolds one `[C, H, W]` sample into a `[C*kh*kw, oh*ow]` column matrix.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..][..g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `[C, H, W]` buffer.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..][..g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    for (ox, &v) in row[oy * g.ow..][..g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
