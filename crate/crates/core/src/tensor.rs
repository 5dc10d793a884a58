//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] owns a flat buffer and a shape. All elements are finite; the
//! public constructors reject NaN and infinities. Operations return new
//! tensors and never mutate their inputs.

use std::fmt;

use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Reduction kinds accepted by [`Tensor::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(shape_err!("extent {pos} of shape {shape:?} is zero"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(value_err!("element {i} is not finite ({})", data[i]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for buffers produced by finite arithmetic.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        let len = check_shape(shape).expect("zero extent in shape");
        Self::from_parts(shape.to_vec(), vec![value; len])
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[], vec![value])
    }

    /// Elements drawn i.i.d. from `[lo, hi)`.
    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(value_err!("uniform range requires lo < hi, got [{lo}, {hi})"));
        }
        let len = check_shape(shape)?;
        let data = (0..len).map(|_| rng.uniform_range(lo, hi)).collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major view.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Element at a multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.rank() {
            return Err(shape_err!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.rank()
            ));
        }
        let mut flat = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(shape_err!("index {i} out of range for axis {axis} (extent {d})"));
            }
            flat = flat * d + i;
        }
        Ok(self.data[flat])
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.len() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape,
                self.len()
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Applies `f` to every element. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Self::new(&self.shape, data)
    }

    pub fn neg(&self) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|v| -v).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Multiplies every element by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.map(|v| v * factor)
    }

    /// Elementwise binary op; shapes must match or one side must be a scalar.
    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (shape, data): (Vec<usize>, Vec<f64>) = if self.shape == other.shape {
            (
                self.shape.clone(),
                self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            )
        } else if other.is_scalar() {
            let b = other.data[0];
            (self.shape.clone(), self.data.iter().map(|&a| f(a, b)).collect())
        } else if self.is_scalar() {
            let a = self.data[0];
            (other.shape.clone(), other.data.iter().map(|&b| f(a, b)).collect())
        } else {
            return Err(shape_err!(
                "{op}: incompatible shapes {:?} and {:?}",
                self.shape,
                other.shape
            ));
        };
        Self::new(&shape, data)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(shape_err!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(shape_err!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape,
                other.shape
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            MatRef::row_major(&self.data, k),
            MatRef::row_major(&other.data, n),
            0.0,
            &mut out,
        );
        Self::new(&[m, n], out)
    }

    /// Sum, mean or max over all elements (rank-0 result) or along one axis.
    pub fn reduce(&self, kind: Reduction, axis: Option<usize>) -> Result<Self> {
        let Some(axis) = axis else {
            let v = match kind {
                Reduction::Sum => self.data.iter().sum(),
                Reduction::Mean => self.data.iter().sum::<f64>() / self.len() as f64,
                Reduction::Max => self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            return Self::scalar(v);
        };
        if axis >= self.rank() {
            return Err(shape_err!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let init = match kind {
            Reduction::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &self.data[(o * extent + a) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = match kind {
                        Reduction::Max => d.max(s),
                        _ => *d + s,
                    };
                }
            }
        }
        if kind == Reduction::Mean {
            out.iter_mut().for_each(|v| *v /= extent as f64);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::new(&shape, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.len() > SHOWN {
            write!(f, ", ... ({} more)", self.len() - SHOWN)?;
        }
        write!(f, "]")
    }
}

/// Strided read-only matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride as usize + (cols - 1) * self.col_stride as usize
    }
}

/// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n`, `c` row-major `m x n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.data.len() > a.max_offset(m, k));
    assert!(b.data.len() > b.max_offset(k, n));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is an exclusive borrow of at least m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
